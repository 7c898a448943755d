"""Vector-quantized autoencoder over one-hot voxel fields.

Encoder and decoder are non-overlapping strided ("patch") 3D convolutions,
mirrored exactly, so the shape chain inverts for any configured strides. The
quantizer snaps each latent vector to its nearest codebook row; training uses
the straight-through gradient rule, with the squared quantization error split
into a codebook term (updates codes) and a commitment term (updates encoder).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import softmax
from .errors import CheckpointError, TrainingDiverged
from .grids import CategoricalField, VoxelGrid, argmax_decode, one_hot
from .metrics import inverse_frequency_weights, iou_counts, report_from_counts
from .grids import MetricsReport


@dataclass(frozen=True)
class VQVAEConfig:
    num_classes: int
    num_codes: int = 64
    code_dim: int = 8
    hidden: int = 32
    strides: tuple[tuple[int, int, int], ...] = ((2, 2, 1), (2, 2, 2))
    beta_commit: float = 0.25

    def __post_init__(self):
        if self.num_codes < 2:
            raise ValueError("need at least 2 codes")

    @property
    def total_stride(self) -> tuple[int, int, int]:
        sx = sy = sz = 1
        for s in self.strides:
            sx, sy, sz = sx * s[0], sy * s[1], sz * s[2]
        return (sx, sy, sz)


def init_params(config: VQVAEConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    k, h, d, n = config.num_classes, config.hidden, config.code_dim, config.num_codes
    s1, s2 = config.strides
    p1, p2 = int(np.prod(s1)), int(np.prod(s2))
    params = {
        "enc1_w": nn.fan_in_uniform(rng, (p1 * k, h), p1 * k),
        "enc1_b": np.zeros(h),
        "enc2_w": nn.fan_in_uniform(rng, (p2 * h, d), p2 * h),
        "enc2_b": np.zeros(d),
        "dec1_w": nn.fan_in_uniform(rng, (d, p2 * h), d),
        "dec1_b": np.zeros(p2 * h),
        "dec2_w": nn.fan_in_uniform(rng, (h, p1 * k), h),
        "dec2_b": np.zeros(p1 * k),
        # codebook init: small uniform range, conventional for VQ layers
        "codes": rng.uniform(-1.0 / n, 1.0 / n, size=(n, d)).astype(np.float32).astype(np.float64),
    }
    return params


def encode(params: dict, config: VQVAEConfig, x: CategoricalField, with_cache=False):
    """Latent vectors (h, w, z, d) for a one-hot (or soft) input field."""
    s1, s2 = config.strides
    pre1 = nn.patch_conv(x.probs, params["enc1_w"], params["enc1_b"], s1)
    a1 = nn.relu(pre1)
    z = nn.patch_conv(a1, params["enc2_w"], params["enc2_b"], s2)
    if with_cache:
        return z, dict(x=x.probs, pre1=pre1, a1=a1)
    return z


def quantize(codes: np.ndarray, z: np.ndarray):
    """Nearest-code assignment (ties to the lowest index) and the snapped latents."""
    if z.shape[-1] != codes.shape[1]:
        raise ValueError(f"code dim mismatch: {z.shape[-1]} vs {codes.shape[1]}")
    flat = z.reshape(-1, z.shape[-1])
    d2 = (flat ** 2).sum(axis=1, keepdims=True) - 2.0 * flat @ codes.T + (codes ** 2).sum(axis=1)
    idx = np.argmin(d2, axis=1)
    zq = codes[idx].reshape(z.shape)
    return zq, idx.reshape(z.shape[:3])


def decode(params: dict, config: VQVAEConfig, zq: np.ndarray, with_cache=False):
    """K-channel logits at the original resolution."""
    s1, s2 = config.strides
    h, k = config.hidden, config.num_classes
    u1 = nn.patch_deconv(zq, params["dec1_w"], params["dec1_b"], s2, h)
    a1 = nn.relu(u1)
    logits = nn.patch_deconv(a1, params["dec2_w"], params["dec2_b"], s1, k)
    if with_cache:
        return logits, dict(zq=zq, u1=u1, a1=a1)
    return logits


def vqvae_loss(x: CategoricalField, recon_logits: np.ndarray, z: np.ndarray,
               zq: np.ndarray, weights: np.ndarray, beta_commit: float):
    """(total, recon, codebook_term, commit_term).

    recon is the class-weighted cross-entropy, averaged over voxels; the two
    quantization terms are the mean squared latent error, which play the roles
    of the stopped-gradient codebook and commitment penalties during training.
    """
    if recon_logits.shape != x.probs.shape:
        raise ValueError("reconstruction shape mismatch")
    p = softmax(recon_logits)
    logp = np.log(np.maximum(p, 1e-12))
    recon = float(-np.mean((weights * x.probs * logp).sum(axis=-1)))
    msq = float(np.mean(((z - zq) ** 2).sum(axis=-1)))
    return recon + msq + beta_commit * msq, recon, msq, beta_commit * msq


def vqvae_grads(params: dict, config: VQVAEConfig, x: CategoricalField,
                enc_cache: dict, dec_cache: dict, z: np.ndarray, zq: np.ndarray,
                idx: np.ndarray, weights: np.ndarray):
    """Analytic gradients of the training loss under the straight-through rule."""
    s1, s2 = config.strides
    npos = int(np.prod(z.shape[:3]))
    nvox = int(np.prod(x.probs.shape[:3]))
    grads = {}

    # reconstruction path back through the decoder
    logits = nn.patch_deconv(dec_cache["a1"], params["dec2_w"], params["dec2_b"],
                             s1, config.num_classes)
    p = softmax(logits)
    wsum = (weights * x.probs).sum(axis=-1, keepdims=True)
    dlogits = (p * wsum - weights * x.probs) / nvox
    da1, grads["dec2_w"], grads["dec2_b"] = nn.patch_deconv_backward(
        dec_cache["a1"], params["dec2_w"], dlogits, s1)
    du1 = nn.relu_backward(dec_cache["u1"], da1)
    dzq_recon, grads["dec1_w"], grads["dec1_b"] = nn.patch_deconv_backward(
        dec_cache["zq"], params["dec1_w"], du1, s2)

    # straight-through: the decoder's input gradient flows to the encoder as-is;
    # the commitment term adds beta * d/dz of the mean squared latent error
    dz = dzq_recon + config.beta_commit * 2.0 * (z - zq) / npos
    da1e, grads["enc2_w"], grads["enc2_b"] = nn.patch_conv_backward(
        enc_cache["a1"], params["enc2_w"], dz, s2)
    dpre1 = nn.relu_backward(enc_cache["pre1"], da1e)
    _, grads["enc1_w"], grads["enc1_b"] = nn.patch_conv_backward(
        enc_cache["x"], params["enc1_w"], dpre1, s1)

    # codebook term: pulls each used code toward its assigned latents
    dcodes = np.zeros_like(params["codes"])
    diff = 2.0 * (zq - z).reshape(-1, z.shape[-1]) / npos
    np.add.at(dcodes, idx.reshape(-1), diff)
    grads["codes"] = dcodes
    return grads


def reinit_dead_codes(codes: np.ndarray, usage: np.ndarray, recent_latents: np.ndarray,
                      threshold: int, rng: np.random.Generator):
    """Reset under-used codes to random recent encoder outputs.

    Returns (new codes, number replaced). `recent_latents` is a (M, d) buffer.
    """
    if recent_latents.size == 0:
        raise ValueError("empty latent buffer")
    dead = np.flatnonzero(usage < threshold)
    new = codes.copy()
    if dead.size:
        picks = rng.integers(0, recent_latents.shape[0], size=dead.size)
        new[dead] = recent_latents[picks]
    return new, int(dead.size)


@dataclass
class VQVAETrainResult:
    params: dict
    config: VQVAEConfig
    weights: np.ndarray
    history: list = field(default_factory=list)  # per-epoch MetricsReport


def reconstruct(params: dict, config: VQVAEConfig, grid: VoxelGrid) -> VoxelGrid:
    x = one_hot(grid, config.num_classes)
    z = encode(params, config, x)
    zq, _ = quantize(params["codes"], z)
    logits = decode(params, config, zq)
    return argmax_decode(CategoricalField(logits))


def _epoch_metrics(params, config, scenes) -> MetricsReport:
    inter = np.zeros(config.num_classes, dtype=np.int64)
    union = np.zeros(config.num_classes, dtype=np.int64)
    occ_i = occ_u = 0
    for g in scenes:
        rec = reconstruct(params, config, g)
        i, u = iou_counts(rec, g, config.num_classes)
        inter += i
        union += u
        po, go = rec.occupancy(), g.occupancy()
        occ_i += np.count_nonzero(po & go)
        occ_u += np.count_nonzero(po | go)
    comp = occ_i / occ_u if occ_u else 1.0
    return report_from_counts(inter, union, comp)


def train_vqvae(dataset, config: VQVAEConfig, seed: int, epochs: int = 20,
                batch_size: int = 8, lr: float = 1e-3, dead_code_threshold: int = 1,
                metrics_subset: int = 32, log=None) -> VQVAETrainResult:
    """End-to-end VQ-VAE training; reports reconstruction IoU/mIoU per epoch."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    weights = inverse_frequency_weights(dataset, config.num_classes)
    opt = nn.AdamState()
    history = []
    eval_scenes = dataset[: min(len(dataset), metrics_subset)]
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        usage = np.zeros(config.num_codes, dtype=np.int64)
        buffer = []
        for start in range(0, len(order), batch_size):
            batch = [dataset[i] for i in order[start : start + batch_size]]
            grad_sum = {name: np.zeros_like(p) for name, p in params.items()}
            batch_loss = 0.0
            for g in batch:
                x = one_hot(g, config.num_classes)
                z, enc_cache = encode(params, config, x, with_cache=True)
                zq, idx = quantize(params["codes"], z)
                logits, dec_cache = decode(params, config, zq, with_cache=True)
                total, *_ = vqvae_loss(x, logits, z, zq, weights, config.beta_commit)
                if not np.isfinite(total):
                    raise TrainingDiverged(f"non-finite VQ-VAE loss {total}")
                batch_loss += total
                usage += np.bincount(idx.reshape(-1), minlength=config.num_codes)
                buffer.append(z.reshape(-1, config.code_dim))
                grads = vqvae_grads(params, config, x, enc_cache, dec_cache,
                                    z, zq, idx, weights)
                for name in grad_sum:
                    grad_sum[name] += grads[name]
            for name in grad_sum:
                grad_sum[name] /= len(batch)
            params = nn.adam_step(params, grad_sum, opt, lr=lr)
        latents = np.concatenate(buffer, axis=0)
        params["codes"], _ = reinit_dead_codes(
            params["codes"], usage, latents, dead_code_threshold, rng)
        report = _epoch_metrics(params, config, eval_scenes)
        history.append(report)
        if log:
            log(f"epoch {epoch + 1} loss {batch_loss / max(1, len(batch)):.4f} "
                f"miou {report.miou:.4f}")
    return VQVAETrainResult(params, config, weights, history)


def save_vqvae(path, result: VQVAETrainResult, extra: dict | None = None):
    meta = {f"config.{k}": str(v) for k, v in asdict(result.config).items()}
    meta["kind"] = "vqvae"
    if extra:
        meta.update({k: str(v) for k, v in extra.items()})
    params = dict(result.params)
    params["class_weights"] = result.weights
    save_checkpoint(path, params, meta)


def load_vqvae(path) -> VQVAETrainResult:
    params, meta = load_checkpoint(path)
    if meta.get("kind") != "vqvae":
        raise CheckpointError("not a VQ-VAE checkpoint")

    def get(name, cast):
        return cast(meta[f"config.{name}"])

    strides = tuple(
        tuple(int(x) for x in part.strip(" ()").split(",") if x.strip())
        for part in meta["config.strides"].strip("()").split("),")
        if part.strip(" ,")
    )
    config = VQVAEConfig(
        num_classes=get("num_classes", int),
        num_codes=get("num_codes", int),
        code_dim=get("code_dim", int),
        hidden=get("hidden", int),
        strides=strides,
        beta_commit=get("beta_commit", float),
    )
    weights = params.pop("class_weights")
    return VQVAETrainResult(params, config, weights, [])
