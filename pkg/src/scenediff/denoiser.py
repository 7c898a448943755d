"""A small time-conditioned 3D conv denoiser predicting x0~ logits.

Three same-resolution conv stages (encoder, bottleneck, decoder) with an
additive encoder->decoder skip, plus a final projection to K logits. The
timestep enters as a per-channel bias at every stage, produced by a two-layer
perceptron on top of a sinusoidal embedding. Everything is plain numpy with
hand-written gradients so they can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import UniformTransition, diffusion_loss_and_grad, q_marginal, sample_field
from .errors import CheckpointError, TrainingDiverged
from .grids import CategoricalField, VoxelGrid, one_hot


@dataclass(frozen=True)
class DenoiserConfig:
    num_classes: int
    in_channels: int  # K, or K+1 when conditioned on an occupancy channel
    hidden: tuple[int, int] = (32, 64)
    kernel: int = 3
    time_dim: int = 32
    time_hidden: int = 64
    num_steps: int = 100  # T, for the embedding range

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.in_channels not in (self.num_classes, self.num_classes + 1):
            raise ValueError("in_channels must be K or K+1")

    @property
    def conditioned(self) -> bool:
        return self.in_channels == self.num_classes + 1


def init_params(config: DenoiserConfig, seed: int) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform init, deterministic given the seed."""
    rng = np.random.default_rng(seed)
    k, (h1, h2) = config.kernel, config.hidden
    cin, kk = config.in_channels, config.kernel ** 3

    def conv(cin_, cout_):
        fan = kk * cin_
        return (nn.fan_in_uniform(rng, (k, k, k, cin_, cout_), fan),
                np.zeros(cout_))

    params = {}
    params["enc1_w"], params["enc1_b"] = conv(cin, h1)
    params["enc2_w"], params["enc2_b"] = conv(h1, h2)
    params["dec1_w"], params["dec1_b"] = conv(h2, h1)
    params["out_w"], params["out_b"] = conv(h1, config.num_classes)
    d, dh = config.time_dim, config.time_hidden
    params["temb_w1"] = nn.fan_in_uniform(rng, (d, dh), d)
    params["temb_b1"] = np.zeros(dh)
    params["temb_w2"] = nn.fan_in_uniform(rng, (dh, h1 + h2 + h1), dh)
    params["temb_b2"] = np.zeros(h1 + h2 + h1)
    return params


def _time_bias(params, config: DenoiserConfig, t: int):
    e = nn.sinusoidal_embedding(t, config.time_dim)
    pre = e @ params["temb_w1"] + params["temb_b1"]
    h = nn.relu(pre)
    bias = h @ params["temb_w2"] + params["temb_b2"]
    h1, h2 = config.hidden
    return e, pre, h, (bias[:h1], bias[h1 : h1 + h2], bias[h1 + h2 :])


def forward(params: dict, config: DenoiserConfig, x_in: np.ndarray, t: int,
            with_cache: bool = False):
    """Logits (X, Y, Z, K) for input activations (X, Y, Z, in_channels)."""
    if x_in.ndim != 4 or x_in.shape[-1] != config.in_channels:
        raise ValueError(f"expected (X,Y,Z,{config.in_channels}) input, got {x_in.shape}")
    e, tpre, th, (b1, b2, b3) = _time_bias(params, config, t)
    pre1 = nn.conv3d_same(x_in, params["enc1_w"], params["enc1_b"]) + b1
    a1 = nn.relu(pre1)
    pre2 = nn.conv3d_same(a1, params["enc2_w"], params["enc2_b"]) + b2
    a2 = nn.relu(pre2)
    pre3 = nn.conv3d_same(a2, params["dec1_w"], params["dec1_b"]) + b3
    a3 = nn.relu(pre3) + a1  # skip connection
    logits = nn.conv3d_same(a3, params["out_w"], params["out_b"])
    if not with_cache:
        return logits
    cache = dict(x_in=x_in, e=e, tpre=tpre, th=th, pre1=pre1, a1=a1,
                 pre2=pre2, a2=a2, pre3=pre3, a3=a3)
    return logits, cache


def backward(params: dict, config: DenoiserConfig, cache: dict,
             upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for the given upstream d(loss)/d(logits)."""
    grads = {}
    da3, grads["out_w"], grads["out_b"] = nn.conv3d_same_backward(
        cache["a3"], params["out_w"], upstream)
    da1_skip = da3  # skip branch
    dpre3 = nn.relu_backward(cache["pre3"], da3)
    da2, grads["dec1_w"], grads["dec1_b"] = nn.conv3d_same_backward(
        cache["a2"], params["dec1_w"], dpre3)
    dpre2 = nn.relu_backward(cache["pre2"], da2)
    da1, grads["enc2_w"], grads["enc2_b"] = nn.conv3d_same_backward(
        cache["a1"], params["enc2_w"], dpre2)
    dpre1 = nn.relu_backward(cache["pre1"], da1 + da1_skip)
    _, grads["enc1_w"], grads["enc1_b"] = nn.conv3d_same_backward(
        cache["x_in"], params["enc1_w"], dpre1)

    # time-embedding MLP: each stage bias broadcasts over voxels
    db1 = dpre1.reshape(-1, dpre1.shape[-1]).sum(axis=0)
    db2 = dpre2.reshape(-1, dpre2.shape[-1]).sum(axis=0)
    db3 = dpre3.reshape(-1, dpre3.shape[-1]).sum(axis=0)
    dbias = np.concatenate([db1, db2, db3])
    grads["temb_w2"] = np.outer(cache["th"], dbias)
    grads["temb_b2"] = dbias
    dth = params["temb_w2"] @ dbias
    dtpre = np.where(cache["tpre"] > 0, dth, 0.0)
    grads["temb_w1"] = np.outer(cache["e"], dtpre)
    grads["temb_b1"] = dtpre
    return grads


def build_input(x_t: VoxelGrid, config: DenoiserConfig,
                condition: VoxelGrid | None) -> np.ndarray:
    """One-hot x_t, with the binary condition appended as an extra channel."""
    x = one_hot(x_t, config.num_classes).probs
    if config.conditioned:
        if condition is None:
            raise ValueError("model expects a condition channel")
        if condition.dims != x_t.dims:
            raise ValueError("condition dims must match x_t dims")
        x = np.concatenate([x, condition.occupancy()[..., None].astype(np.float64)], axis=-1)
    elif condition is not None:
        raise ValueError("model has no condition channel")
    return x


def as_denoiser_fn(params: dict, config: DenoiserConfig):
    """Adapter matching the sampler's (x_t, t, condition) -> logits interface."""

    def fn(x_t: VoxelGrid, t: int, condition: VoxelGrid | None) -> CategoricalField:
        return CategoricalField(forward(params, config, build_input(x_t, config, condition), t))

    return fn


def train_step(params: dict, opt_state: nn.AdamState, batch, config: DenoiserConfig,
               trans: UniformTransition, w0: float, rng: np.random.Generator,
               lr: float = 1e-3):
    """One optimization step of the hybrid diffusion loss over a batch.

    `batch` is a sequence of (x0, condition-or-None) pairs; the timestep is
    drawn uniformly per example. Returns (params', opt_state, record).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    k = config.num_classes
    total = vb = aux = 0.0
    grad_sum = {name: np.zeros_like(p) for name, p in params.items()}
    for x0, condition in batch:
        t = int(rng.integers(1, trans.schedule.num_steps + 1))
        x_t = sample_field(q_marginal(one_hot(x0, k), t, trans), rng)
        x_in = build_input(x_t, config, condition)
        logits, cache = forward(params, config, x_in, t, with_cache=True)
        loss, vb_i, aux_i, dlogits = diffusion_loss_and_grad(
            x0, t, CategoricalField(logits), x_t, w0, trans)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at step t={t}")
        total += loss
        vb += vb_i
        aux += aux_i
        grads = backward(params, config, cache, dlogits.probs)
        for name in grad_sum:
            grad_sum[name] += grads[name]
    n = len(batch)
    for name in grad_sum:
        grad_sum[name] /= n
    new_params = nn.adam_step(params, grad_sum, opt_state, lr=lr)
    record = {"loss": total / n, "vb": vb / n, "aux": aux / n}
    return new_params, opt_state, record


def train_diffusion(dataset, config: DenoiserConfig, trans: UniformTransition,
                    seed: int, epochs: int = 10, batch_size: int = 8,
                    lr: float = 1e-3, w0: float = 1e-3, log=None):
    """Unconditional diffusion training loop. Returns (params, epoch losses)."""
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    opt = nn.AdamState()
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [(dataset[i], None) for i in order[start : start + batch_size]]
            params, opt, rec = train_step(params, opt, batch, config, trans, w0, rng, lr)
            losses.append(rec["loss"])
        history.append(float(np.mean(losses)))
        if log:
            log(f"epoch {epoch + 1} loss {history[-1]:.4f}")
    return params, history


def save_denoiser(path, params: dict, config: DenoiserConfig, extra: dict | None = None):
    meta = {f"config.{k}": str(v) for k, v in asdict(config).items()}
    meta["kind"] = "denoiser"
    if extra:
        meta.update({k: str(v) for k, v in extra.items()})
    save_checkpoint(path, params, meta)


def config_from_metadata(meta: dict) -> DenoiserConfig:
    def get(name, cast):
        try:
            return cast(meta[f"config.{name}"])
        except KeyError as exc:
            raise CheckpointError(f"missing config field {name}") from exc

    hidden = tuple(int(v) for v in get("hidden", str).strip("()").split(",") if v.strip())
    return DenoiserConfig(
        num_classes=get("num_classes", int),
        in_channels=get("in_channels", int),
        hidden=hidden,
        kernel=get("kernel", int),
        time_dim=get("time_dim", int),
        time_hidden=get("time_hidden", int),
        num_steps=get("num_steps", int),
    )


def load_denoiser(path, expected_config: DenoiserConfig | None = None):
    """Returns (params, config, metadata); errors if an expected config differs."""
    params, meta = load_checkpoint(path)
    config = config_from_metadata(meta)
    if expected_config is not None and config != expected_config:
        raise CheckpointError(f"config mismatch: checkpoint {config}, expected {expected_config}")
    return params, config, meta
