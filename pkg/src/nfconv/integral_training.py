"""Training of neural repeated integral fields.

The network h learns the order-n repeated antiderivative of a signal f
along its kernel dimensions.  Supervision never touches the (unknown)
antiderivative directly: instead, a compact smoothing kernel (the minimal
kernel, an n-fold box self-convolution) is applied to both sides --

    sum_i h(x - c_i) w_i   ~   MC estimate of (f * minimal_kernel)(x)

where (c_i, w_i) are the Dirac deltas of the minimal kernel's n-th
derivative, i.e. a higher-order finite-difference stencil.  Training runs
in two phases: a wider kernel first, then fine-tuning on a narrower one.
Everything is 64-bit and deterministic for a fixed seed.

Checkpoints serialize to the ``NFCONV1`` container: magic, one JSON header
line, then float32 little-endian weights (row-major) and biases per layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .convolution import mc_convolve_batch
from .errors import DivergenceError, ParseError, ValidationError
from .fields import GridField, SignalField
from .kernels import DiracMixture, minimal_kernel
from .tensor_math import (
    Mlp,
    adam_step,
    init_adam,
    init_mlp,
    mlp_backward_cached,
    mlp_forward_batch,
    mlp_forward_cached,
)

__all__ = [
    "TrainConfig",
    "MlpCheckpoint",
    "stencil",
    "embed_offsets",
    "stencil_response",
    "loss_at",
    "train_integral_field",
    "antiderivative_quality",
    "checkpoint_to_bytes",
    "checkpoint_from_bytes",
]

CHECKPOINT_MAGIC = b"NFCONV1"


@dataclass
class TrainConfig:
    """Hyperparameters for integral-field training.

    ``kernel_width`` is the minimal-kernel size of the main phase,
    ``finetune_width`` the smaller size of the second phase.  ``train_pad``
    dilates the sampled position box beyond [0, 1] along kernel axes so the
    field is supervised wherever later convolutions will evaluate it.
    """

    kernel_width: float = 0.025
    finetune_width: float = 0.0125
    mc_samples: int = 32
    batch_size: int = 4096
    iterations: int = 6000
    finetune_iterations: int | None = None   # defaults to 20% of iterations
    lr: float = 1e-3
    seed: int = 0
    hidden_layers: int = 5
    hidden_width: int = 256
    train_pad: float = 0.3

    def __post_init__(self):
        if not (0 < self.finetune_width < self.kernel_width):
            raise ValidationError("need 0 < finetune_width < kernel_width")
        if self.mc_samples < 1:
            raise ValidationError("mc_samples must be >= 1")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValidationError("batch_size/iterations out of range")

    @property
    def phase2_iterations(self) -> int:
        if self.finetune_iterations is not None:
            return self.finetune_iterations
        return self.iterations // 5


@dataclass
class MlpCheckpoint:
    """A trained repeated integral field plus everything needed to use it.

    ``norm_shift``/``norm_scale`` are the per-channel statistics applied to
    the training signal; convolution results are mapped back via
    scale * raw + shift * kernel_mass.
    """

    mlp: Mlp
    order: int
    kernel_dim: int
    din: int
    dout: int
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    norm_shift: np.ndarray
    norm_scale: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kernel_dim > self.din:
            raise ValidationError("kernel_dim cannot exceed din")
        if np.any(self.norm_scale == 0):
            raise ValidationError("normalization scale must be invertible")

    def eval_many(self, x: np.ndarray) -> np.ndarray:
        """Raw network output (normalized antiderivative units)."""
        return mlp_forward_batch(self.mlp, np.asarray(x, dtype=np.float64))


def stencil(order: int, kernel_dim: int, width: float) -> DiracMixture:
    """Finite-difference stencil: the Dirac part of the minimal kernel.

    (order+1)^kernel_dim taps; per axis the magnitudes are the alternating
    binomial weights (-1)^k C(n,k) / width^n.
    """
    return minimal_kernel(order, kernel_dim, width)[1]


def embed_offsets(m: DiracMixture, din: int) -> np.ndarray:
    """Embed kernel-space Dirac positions into the first kernel_dim of din."""
    if m.dim > din:
        raise ValidationError(f"kernel dim {m.dim} exceeds field dim {din}")
    out = np.zeros((len(m), din))
    out[:, :m.dim] = m.positions
    return out


def stencil_response(eval_many, x: np.ndarray, offsets: np.ndarray,
                     mags: np.ndarray) -> np.ndarray:
    """sum_i h(x - c_i) w_i for a batch of positions x (B, din)."""
    b, din = x.shape
    pts = (x[:, None, :] - offsets[None, :, :]).reshape(b * len(mags), din)
    h = eval_many(pts).reshape(b, len(mags), -1)
    return (h * mags[None, :, None]).sum(axis=1)


def loss_at(h: Mlp, f: SignalField, x, stencil_mix: DiracMixture, evaluator,
            mc_samples: int, rng: np.random.Generator) -> float:
    """Squared-difference loss contribution at a single position.

    Left term: the stencil response of h.  Right term: a stratified MC
    estimate of the signal convolved with the minimal kernel's continuous
    part.  Returns the channel-mean squared difference.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :]
    offsets = embed_offsets(stencil_mix, f.din)
    resp = stencil_response(lambda p: mlp_forward_batch(h, p), x, offsets,
                            stencil_mix.magnitudes)
    ref = mc_convolve_batch(f, evaluator, x, mc_samples, rng)
    return float(np.mean((resp - ref) ** 2))


class _NormalizedField(SignalField):
    """View of a signal with per-channel shift/scale removed."""

    def __init__(self, base: SignalField, shift: np.ndarray, scale: np.ndarray):
        self.base = base
        self.shift = shift
        self.scale = scale
        self.din = base.din
        self.dout = base.dout

    def sample_many(self, x: np.ndarray) -> np.ndarray:
        return (self.base.sample_many(x) - self.shift) / self.scale


def _normalization(f: SignalField, rng: np.random.Generator):
    if isinstance(f, GridField):
        mean, std = f.channel_stats()
    else:
        pts = rng.uniform(0.0, 1.0, size=(16384, f.din))
        vals = f.sample_many(pts)
        mean, std = vals.mean(axis=0), vals.std(axis=0)
    scale = np.where(std > 1e-12, std, 1.0)
    return mean, scale


def train_integral_field(f: SignalField, order: int, kernel_dim: int,
                         cfg: TrainConfig, progress=None) -> MlpCheckpoint:
    """Train h ~ repeated antiderivative of f with the stencil loss.

    Two Adam phases (kernel_width, then finetune_width).  Positions are
    drawn uniformly from the unit box dilated by train_pad along kernel
    axes; the mirror extension of f defines the signal there.  Raises
    :class:`DivergenceError` if the loss becomes non-finite.
    """
    if kernel_dim > f.din:
        raise ValidationError("kernel_dim cannot exceed the signal dimension")
    rng = np.random.default_rng(cfg.seed)
    shift, scale = _normalization(f, rng)
    f_norm = _NormalizedField(f, shift, scale)

    widths = [f.din] + [cfg.hidden_width] * cfg.hidden_layers + [f.dout]
    net = init_mlp(widths, rng)
    state = init_adam(net.parameters(), lr=cfg.lr)

    lo = np.zeros(f.din)
    hi = np.ones(f.din)
    lo[:kernel_dim] -= cfg.train_pad
    hi[:kernel_dim] += cfg.train_pad

    phases = [("train", cfg.kernel_width, cfg.iterations),
              ("finetune", cfg.finetune_width, cfg.phase2_iterations)]
    for phase, width, iters in phases:
        evaluator, mix = minimal_kernel(order, kernel_dim, width)
        offsets = embed_offsets(mix, f.din)
        mags = mix.magnitudes
        n_taps = len(mags)
        for it in range(iters):
            x = rng.uniform(lo, hi, size=(cfg.batch_size, f.din))
            pts = (x[:, None, :] - offsets[None, :, :]).reshape(-1, f.din)
            h_vals, cache = mlp_forward_cached(net, pts)
            resp = (h_vals.reshape(cfg.batch_size, n_taps, -1)
                    * mags[None, :, None]).sum(axis=1)
            ref = mc_convolve_batch(f_norm, evaluator, x, cfg.mc_samples, rng)
            residual = resp - ref
            loss = float(np.mean(residual ** 2))
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss in phase {phase!r} at iteration {it}",
                                      phase=phase, iteration=it)
            d_resp = (2.0 / residual.size) * residual
            d_h = (d_resp[:, None, :] * mags[None, :, None]).reshape(h_vals.shape)
            grads, _ = mlp_backward_cached(net, cache, d_h)
            params, state = adam_step(net.parameters(), grads.parameters(), state)
            net = net.with_parameters(params)
            if progress is not None and (it % 50 == 0 or it + 1 == iters):
                progress({"phase": phase, "iteration": it, "loss": loss})

    meta = {
        "kernel_width": cfg.kernel_width,
        "finetune_width": cfg.finetune_width,
        "iterations": cfg.iterations,
        "finetune_iterations": cfg.phase2_iterations,
        "seed": cfg.seed,
        "train_pad": cfg.train_pad,
        "mc_samples": cfg.mc_samples,
        "batch_size": cfg.batch_size,
    }
    return MlpCheckpoint(mlp=net, order=order, kernel_dim=kernel_dim,
                         din=f.din, dout=f.dout, domain_lo=lo, domain_hi=hi,
                         norm_shift=np.asarray(shift, dtype=np.float64),
                         norm_scale=np.asarray(scale, dtype=np.float64),
                         meta=meta)


def antiderivative_quality(h, f: SignalField, probe_width: float,
                           positions: int = 4096, mc_samples: int = 1024,
                           seed: int = 0) -> float:
    """MSE between the field's stencil response and the convolved signal.

    Probes ``positions`` uniform points of the unit box: the order-n stencil
    at ``probe_width`` applied to h (mapped back through the stored
    normalization) against a converged stratified-MC estimate of
    (f * minimal_kernel)(x) on the raw signal.
    """
    min_width = getattr(h, "meta", {}).get("finetune_width")
    if min_width is not None and probe_width < min_width:
        raise ValidationError(f"probe width {probe_width} below trained width {min_width}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(positions, h.din))
    evaluator, mix = minimal_kernel(h.order, h.kernel_dim, probe_width)
    offsets = embed_offsets(mix, h.din)
    raw = stencil_response(h.eval_many, x, offsets, mix.magnitudes)
    resp = raw * h.norm_scale + h.norm_shift  # minimal kernel has unit mass
    err2 = []
    chunk = max(1, (1 << 22) // max(mc_samples, 1))
    for start in range(0, positions, chunk):
        sl = slice(start, start + chunk)
        ref = mc_convolve_batch(f, evaluator, x[sl], mc_samples, rng)
        err2.append((resp[sl] - ref) ** 2)
    return float(np.mean(np.concatenate(err2)))


def checkpoint_to_bytes(ckpt: MlpCheckpoint) -> bytes:
    """Serialize to the NFCONV1 container (float32 little-endian payload)."""
    header = {
        "layer_widths": list(ckpt.mlp.layer_widths),
        "order": ckpt.order,
        "kernel_dim": ckpt.kernel_dim,
        "din": ckpt.din,
        "dout": ckpt.dout,
        "norm_shift": [float(v) for v in ckpt.norm_shift],
        "norm_scale": [float(v) for v in ckpt.norm_scale],
        "domain_lo": [float(v) for v in ckpt.domain_lo],
        "domain_hi": [float(v) for v in ckpt.domain_hi],
        "seed": ckpt.meta.get("seed"),
        "meta": ckpt.meta,
    }
    chunks = [CHECKPOINT_MAGIC, json.dumps(header).encode("utf-8"), b"\n"]
    for w, b in zip(ckpt.mlp.weights, ckpt.mlp.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(chunks)


def checkpoint_from_bytes(data: bytes) -> MlpCheckpoint:
    """Parse an NFCONV1 container; raises :class:`ParseError` on bad bytes."""
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ParseError("missing NFCONV1 magic", offset=0)
    newline = data.find(b"\n")
    if newline < 0:
        raise ParseError("unterminated checkpoint header", offset=len(CHECKPOINT_MAGIC))
    try:
        header = json.loads(data[len(CHECKPOINT_MAGIC):newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}",
                         offset=len(CHECKPOINT_MAGIC)) from exc
    try:
        widths = [int(w) for w in header["layer_widths"]]
        order = int(header["order"])
        kernel_dim = int(header["kernel_dim"])
        din, dout = int(header["din"]), int(header["dout"])
        shift = np.array(header["norm_shift"], dtype=np.float64)
        scale = np.array(header["norm_scale"], dtype=np.float64)
        lo = np.array(header["domain_lo"], dtype=np.float64)
        hi = np.array(header["domain_hi"], dtype=np.float64)
        meta = header.get("meta", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"incomplete checkpoint header: {exc}",
                         offset=len(CHECKPOINT_MAGIC)) from exc

    offset = newline + 1
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        nbytes = 4 * fan_out * fan_in
        blob = data[offset:offset + nbytes]
        if len(blob) != nbytes:
            raise ParseError("truncated weight payload", offset=offset)
        weights.append(np.frombuffer(blob, dtype="<f4").astype(np.float64)
                       .reshape(fan_out, fan_in))
        offset += nbytes
        blob = data[offset:offset + 4 * fan_out]
        if len(blob) != 4 * fan_out:
            raise ParseError("truncated bias payload", offset=offset)
        biases.append(np.frombuffer(blob, dtype="<f4").astype(np.float64))
        offset += 4 * fan_out
    if offset != len(data):
        raise ParseError("trailing bytes after payload", offset=offset)
    net = Mlp(widths, weights, biases)
    return MlpCheckpoint(mlp=net, order=order, kernel_dim=kernel_dim, din=din,
                         dout=dout, domain_lo=lo, domain_hi=hi,
                         norm_shift=shift, norm_scale=scale, meta=meta)
