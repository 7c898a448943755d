import numpy as np
import pytest

from scenediff import denoiser as dn
from scenediff import nn
from scenediff.errors import CheckpointError, TrainingDiverged
from scenediff.grids import VoxelGrid
from scenediff.schedule import UniformTransition, make_schedule

SMALL = dn.DenoiserConfig(num_classes=3, in_channels=3, hidden=(5, 7),
                          time_dim=8, time_hidden=10, num_steps=10)


def small_params(seed=1):
    return dn.init_params(SMALL, seed)


def test_forward_shapes_and_purity():
    params = small_params()
    rng = np.random.default_rng(0)
    x = rng.random((4, 4, 2, 3))
    a = dn.forward(params, SMALL, x, 3)
    b = dn.forward(params, SMALL, x, 3)
    assert a.shape == (4, 4, 2, 3)
    assert np.array_equal(a, b)


def test_time_embedding_is_effective():
    params = small_params()
    x = np.random.default_rng(1).random((4, 4, 2, 3))
    a = dn.forward(params, SMALL, x, 1)
    b = dn.forward(params, SMALL, x, SMALL.num_steps)
    assert not np.allclose(a, b)


def test_forward_shape_mismatch():
    params = small_params()
    with pytest.raises(ValueError):
        dn.forward(params, SMALL, np.zeros((4, 4, 2, 5)), 1)


def test_init_params_determinism_and_scale():
    assert all(np.array_equal(a, b) for a, b in
               zip(small_params(3).values(), small_params(3).values()))
    p1, p2 = small_params(3), small_params(4)
    assert any(not np.array_equal(p1[k], p2[k]) for k in p1)
    # empirical variance of fan-in-scaled U(-b, b) is b^2/3 = 1/(3 fan_in)
    fan_in = SMALL.kernel ** 3 * SMALL.hidden[0]
    samples = [dn.init_params(SMALL, s)["enc2_w"].var() for s in range(30)]
    expected = 1.0 / (3 * fan_in)
    assert abs(np.mean(samples) - expected) / expected < 0.2


def test_zero_upstream_gives_zero_grads():
    params = small_params()
    x = np.random.default_rng(2).random((3, 3, 2, 3))
    _, cache = dn.forward(params, SMALL, x, 2, with_cache=True)
    grads = dn.backward(params, SMALL, cache, np.zeros((3, 3, 2, 3)))
    assert all(np.all(g == 0) for g in grads.values())


def test_bias_gradient_is_summed_upstream():
    params = small_params()
    x = np.random.default_rng(3).random((3, 3, 2, 3))
    up = np.random.default_rng(4).normal(size=(3, 3, 2, 3))
    _, cache = dn.forward(params, SMALL, x, 2, with_cache=True)
    grads = dn.backward(params, SMALL, cache, up)
    np.testing.assert_allclose(grads["out_b"], up.reshape(-1, 3).sum(axis=0), atol=1e-12)


def fd_check(params, config, x, t, upstream, h=1e-4, subset=None):
    """Relative error of analytic vs central-difference gradients of
    <upstream, forward(params)>. Returns the worst error over all parameters."""
    _, cache = dn.forward(params, config, x, t, with_cache=True)
    grads = dn.backward(params, config, cache, upstream)

    def scalar():
        return float((dn.forward(params, config, x, t) * upstream).sum())

    worst = 0.0
    counter = 0
    for name, arr in sorted(params.items()):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            counter += 1
            if subset is not None and counter % subset:
                continue
            orig = arr[i]
            arr[i] = orig + h
            fp = scalar()
            arr[i] = orig - h
            fm = scalar()
            arr[i] = orig
            fd = (fp - fm) / (2 * h)
            denom = max(abs(fd), abs(grads[name][i]), 1e-8)
            worst = max(worst, abs(fd - grads[name][i]) / denom)
    return worst


def test_gradients_match_finite_differences():
    params = small_params()
    rng = np.random.default_rng(5)
    x = rng.random((4, 4, 2, 3))
    up = rng.normal(size=(4, 4, 2, 3))
    # spot-check ~1/8 of the parameters here; the acceptance suite covers 100%
    assert fd_check(params, SMALL, x, 4, up, subset=8) < 1e-4


def make_trainer(seed=0):
    trans = UniformTransition(3, make_schedule("cosine", 10))
    rng = np.random.default_rng(seed)
    scene = VoxelGrid(rng.integers(0, 3, size=(6, 6, 3)))
    return trans, scene


def test_train_step_zero_lr_keeps_params():
    trans, scene = make_trainer()
    params = small_params()
    out, _, _ = dn.train_step(params, nn.AdamState(), [(scene, None)], SMALL, trans,
                              1e-3, np.random.default_rng(0), lr=0.0)
    assert all(np.array_equal(out[k], params[k]) for k in params)


def test_train_step_determinism():
    trans, scene = make_trainer()

    def run():
        params = small_params()
        opt = nn.AdamState()
        rng = np.random.default_rng(42)
        for _ in range(5):
            params, opt, _ = dn.train_step(params, opt, [(scene, None)], SMALL,
                                           trans, 1e-3, rng)
        return params

    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_train_step_loss_decreases_on_one_scene():
    trans, scene = make_trainer()
    params = small_params()
    opt = nn.AdamState()
    rng = np.random.default_rng(0)
    losses = []
    for _ in range(200):
        params, opt, rec = dn.train_step(params, opt, [(scene, None)], SMALL,
                                         trans, 1e-3, rng, lr=3e-3)
        losses.append(rec["loss"])
    assert np.mean(losses[-20:]) < 0.5 * np.mean(losses[:20])


def test_train_step_rejects_empty_batch():
    trans, _ = make_trainer()
    with pytest.raises(ValueError):
        dn.train_step(small_params(), nn.AdamState(), [], SMALL, trans, 1e-3,
                      np.random.default_rng(0))


def test_train_step_divergence_detection():
    trans, scene = make_trainer()
    params = small_params()
    params["out_b"] = params["out_b"] + np.nan
    with pytest.raises(TrainingDiverged):
        dn.train_step(params, nn.AdamState(), [(scene, None)], SMALL, trans,
                      1e-3, np.random.default_rng(0))


def test_checkpoint_round_trip(tmp_path):
    params = small_params()
    path = tmp_path / "d.vxdn"
    dn.save_denoiser(path, params, SMALL, extra={"T": 10, "schedule": "cosine"})
    loaded, config, meta = dn.load_denoiser(path, expected_config=SMALL)
    assert config == SMALL
    assert meta["schedule"] == "cosine"
    # init draws in float32, so the f32 container round-trips bit-exactly
    assert all(np.array_equal(loaded[k], params[k]) for k in params)
    x = np.random.default_rng(6).random((4, 4, 2, 3))
    np.testing.assert_array_equal(dn.forward(loaded, SMALL, x, 2),
                                  dn.forward(params, SMALL, x, 2))


def test_checkpoint_config_mismatch(tmp_path):
    params = small_params()
    path = tmp_path / "d.vxdn"
    dn.save_denoiser(path, params, SMALL)
    other = dn.DenoiserConfig(num_classes=3, in_channels=4, hidden=(5, 7),
                              time_dim=8, time_hidden=10, num_steps=10)
    with pytest.raises(CheckpointError):
        dn.load_denoiser(path, expected_config=other)


def test_condition_channel_is_consumed():
    config = dn.DenoiserConfig(num_classes=3, in_channels=4, hidden=(5, 7),
                               time_dim=8, time_hidden=10, num_steps=10)
    params = dn.init_params(config, 0)
    rng = np.random.default_rng(7)
    x_t = VoxelGrid(rng.integers(0, 3, size=(4, 4, 2)))
    cond_a = VoxelGrid(np.zeros((4, 4, 2), dtype=int))
    cond_b = VoxelGrid(np.ones((4, 4, 2), dtype=int))
    fn = dn.as_denoiser_fn(params, config)
    assert not np.allclose(fn(x_t, 2, cond_a).probs, fn(x_t, 2, cond_b).probs)
    with pytest.raises(ValueError):
        fn(x_t, 2, None)
