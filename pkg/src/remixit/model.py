"""STFT-mask enhancement network with explicit forward and backward passes.

Per mixture: normalize -> STFT -> log-magnitude features with +-context frames
-> ``depth`` affine+ReLU layers -> affine -> sigmoid masks (one per source) ->
mask the complex STFT -> ISTFT -> rescale by the input std -> mixture
consistency against the original mixture.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .exceptions import CheckpointError, SignalError
from .signal import StftConfig, check_batch, istft, istft_adjoint, mixture_consistency, normalize_rows, stft

LOG_FLOOR = 1e-7
MAGIC = b"RMXT"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelArch:
    n_sources: int = 2
    depth: int = 2
    hidden_dim: int = 128
    context: int = 1
    fft_size: int = 512
    hop: int = 128
    depth_schedule: tuple[int, ...] = (2, 4, 8)

    def __post_init__(self):
        if self.n_sources not in (2, 3):
            raise ValueError(f"n_sources must be 2 or 3, got {self.n_sources}")
        if self.depth < 1 or self.hidden_dim < 1 or self.context < 0:
            raise ValueError("depth and hidden_dim must be positive, context non-negative")
        object.__setattr__(self, "depth_schedule", tuple(int(d) for d in self.depth_schedule))
        self.stft  # validates fft/hop

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.fft_size, self.hop)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def input_dim(self) -> int:
        return self.n_bins * (2 * self.context + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depth_schedule"] = list(self.depth_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArch":
        d = dict(d)
        if "depth_schedule" in d:
            d["depth_schedule"] = tuple(d["depth_schedule"])
        return cls(**d)


@dataclass
class MaskNetParams:
    arch: ModelArch
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "MaskNetParams":
        return MaskNetParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def layer_names(self) -> list[str]:
        return ["in"] + [f"hidden.{i}" for i in range(self.arch.depth - 1)] + ["out"]

    def equals(self, other: "MaskNetParams") -> bool:
        """Bitwise equality of architecture and every tensor."""
        return (
            self.arch == other.arch
            and self.tensors.keys() == other.tensors.keys()
            and all(
                self.tensors[k].dtype == other.tensors[k].dtype
                and np.array_equal(self.tensors[k], other.tensors[k])
                for k in self.tensors
            )
        )


def layer_shapes(arch: ModelArch) -> dict[str, tuple[int, ...]]:
    shapes = {"in.weight": (arch.input_dim, arch.hidden_dim), "in.bias": (arch.hidden_dim,)}
    for i in range(arch.depth - 1):
        shapes[f"hidden.{i}.weight"] = (arch.hidden_dim, arch.hidden_dim)
        shapes[f"hidden.{i}.bias"] = (arch.hidden_dim,)
    shapes["out.weight"] = (arch.hidden_dim, arch.n_sources * arch.n_bins)
    shapes["out.bias"] = (arch.n_sources * arch.n_bins,)
    return shapes


def init_params(arch: ModelArch, seed: int = 0, dtype=np.float32) -> MaskNetParams:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in layer_shapes(arch).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return MaskNetParams(arch, tensors)


def grow_depth(arch: ModelArch) -> ModelArch:
    """Next stage of the depth schedule; the last stage is a fixed point."""
    schedule = arch.depth_schedule
    if arch.depth not in schedule:
        raise ValueError(f"depth {arch.depth} not in schedule {schedule}")
    idx = min(schedule.index(arch.depth) + 1, len(schedule) - 1)
    return replace(arch, depth=schedule[idx])


@dataclass
class ForwardTape:
    arch: ModelArch
    shapes: dict[str, tuple[int, ...]]
    spec: np.ndarray          # (B, F, N) complex STFT of the normalized input
    std: np.ndarray           # (B,)
    activations: list         # inputs to each affine layer, (B*N, dim)
    masks: np.ndarray         # (M, B, F, N)
    n_samples: int


def _features(spec: np.ndarray, context: int, dtype) -> np.ndarray:
    """Log-magnitude frames with +-context neighbours, shape ``(B*N, F*(2C+1))``."""
    logmag = np.log(np.abs(spec) + LOG_FLOOR)            # (B, F, N)
    logmag = np.swapaxes(logmag, 1, 2)                    # (B, N, F)
    n_frames = logmag.shape[1]
    padded = np.pad(logmag, ((0, 0), (context, context), (0, 0)), mode="edge")
    cols = [padded[:, k:k + n_frames, :] for k in range(2 * context + 1)]
    feats = np.concatenate(cols, axis=-1)
    return feats.reshape(-1, feats.shape[-1]).astype(dtype, copy=False)


def _check_params(params: MaskNetParams) -> None:
    for name, t in params.tensors.items():
        if not np.all(np.isfinite(t)):
            raise SignalError(f"non-finite values in parameter {name}")


def forward(params: MaskNetParams, mixtures, *, keep_tape: bool = True, unit_masks: bool = False):
    """Separate a ``(B, T)`` batch into ``(M, B, T)`` estimates that sum to the input.

    ``unit_masks`` forces every mask to one (diagnostic passthrough).
    Returns ``(estimates, tape)``; ``tape`` is ``None`` when ``keep_tape`` is false.
    """
    _check_params(params)
    arch = params.arch
    x = check_batch(mixtures, "mixtures")
    n_batch, n_samples = x.shape
    cfg = arch.stft
    xn, _, std = normalize_rows(x)
    spec = stft(xn, cfg)                                  # (B, F, N)
    n_frames = spec.shape[-1]
    dtype = params.dtype

    h = _features(spec, arch.context, dtype)
    activations = []
    t = params.tensors
    for name in params.layer_names()[:-1]:
        activations.append(h)
        h = h @ t[f"{name}.weight"] + t[f"{name}.bias"]
        np.maximum(h, 0, out=h)
    activations.append(h)
    z = h @ t["out.weight"] + t["out.bias"]               # (B*N, M*F)
    masks = expit(z).reshape(n_batch, n_frames, arch.n_sources, arch.n_bins)
    masks = masks.transpose(2, 0, 3, 1)                   # (M, B, F, N)
    if unit_masks:
        masks = np.ones_like(masks)

    est = istft(masks * spec[None], cfg, n_samples) * std[None, :, None]
    est = mixture_consistency(est, x)
    tape = None
    if keep_tape:
        tape = ForwardTape(
            arch=arch,
            shapes={k: v.shape for k, v in t.items()},
            spec=spec,
            std=std,
            activations=activations,
            masks=masks,
            n_samples=n_samples,
        )
    return est, tape


def separate(params: MaskNetParams, mixtures, chunk: int = 32) -> np.ndarray:
    """Inference-only forward over any number of rows, in chunks."""
    x = check_batch(mixtures, "mixtures")
    outs = [forward(params, x[i:i + chunk], keep_tape=False)[0] for i in range(0, len(x), chunk)]
    return np.concatenate(outs, axis=1)


def backward(params: MaskNetParams, tape: ForwardTape, grad_estimates) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss given ``dL/d(estimates)`` of shape ``(M, B, T)``."""
    arch = params.arch
    if tape.arch != arch or tape.shapes != {k: v.shape for k, v in params.tensors.items()}:
        raise ValueError("tape does not match parameters")
    g = np.asarray(grad_estimates, dtype=np.float64)
    n_batch = tape.spec.shape[0]
    if g.shape != (arch.n_sources, n_batch, tape.n_samples):
        raise ValueError(f"gradient shape {g.shape} does not match forward output")
    dtype = params.dtype
    t = params.tensors

    # mixture consistency is linear: out_i = est_i + (m - sum_j est_j) / M
    g_pre = g - g.mean(axis=0, keepdims=True)
    g_pre = g_pre * tape.std[None, :, None]
    adj = istft_adjoint(g_pre, arch.stft, tape.spec.shape[-1])       # (M, B, F, N)
    d_mask = np.real(tape.spec[None] * adj)
    d_z = d_mask * tape.masks * (1.0 - tape.masks)
    d_z = d_z.transpose(1, 3, 0, 2).reshape(-1, arch.n_sources * arch.n_bins).astype(dtype)

    grads = {}
    names = params.layer_names()
    delta = d_z
    for idx in range(len(names) - 1, -1, -1):
        name = names[idx]
        h_in = tape.activations[idx]
        grads[f"{name}.weight"] = h_in.T @ delta
        grads[f"{name}.bias"] = delta.sum(axis=0)
        if idx > 0:
            delta = (delta @ t[f"{name}.weight"].T) * (h_in > 0)
    return {k: grads[k] for k in t}


def consolidate_noise(estimates) -> tuple[np.ndarray, np.ndarray]:
    """Collapse a 3-slot (speech, noise, noise) output into speech and summed noise."""
    estimates = np.asarray(estimates)
    if estimates.shape[0] != 3:
        raise ValueError(f"noise consolidation needs M=3, got M={estimates.shape[0]}")
    return estimates[0], estimates[1] + estimates[2]


def speech_noise(estimates) -> tuple[np.ndarray, np.ndarray]:
    """(speech, noise) for either a 2- or 3-slot separator output."""
    estimates = np.asarray(estimates)
    if estimates.shape[0] == 3:
        return consolidate_noise(estimates)
    if estimates.shape[0] == 2:
        return estimates[0], estimates[1]
    raise ValueError(f"unsupported number of sources {estimates.shape[0]}")


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(params: MaskNetParams, path, extra_tensors: dict | None = None,
                    extra_meta: dict | None = None) -> None:
    """Write ``RMXT`` | u32 version | u32 meta length | JSON meta | float32 payloads."""
    tensors = dict(params.tensors)
    if extra_tensors:
        tensors.update(extra_tensors)
    manifest, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    meta = {"arch": params.arch.to_dict(), "tensors": manifest, "payload_bytes": offset}
    if extra_meta:
        meta["extra"] = extra_meta
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into (metadata, all tensors including optimizer state)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint: {path}")
    if len(raw) < 12:
        raise CheckpointError(f"corrupt checkpoint: {path} (truncated header)")
    version, meta_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(raw) < 12 + meta_len:
        raise CheckpointError(f"corrupt checkpoint: {path} (truncated metadata)")
    try:
        meta = json.loads(raw[12:12 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {path} (bad metadata)") from exc
    payload = raw[12 + meta_len:]
    if len(payload) != meta.get("payload_bytes"):
        raise CheckpointError(f"corrupt checkpoint: {path} (payload is {len(payload)} bytes, "
                              f"expected {meta.get('payload_bytes')})")
    tensors = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        n_bytes = 4 * int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start + n_bytes > len(payload):
            raise CheckpointError(f"corrupt checkpoint: {path} (tensor {entry['name']} out of range)")
        tensors[entry["name"]] = np.frombuffer(payload[start:start + n_bytes], dtype="<f4").reshape(shape).astype(np.float32)
    return meta, tensors


def load_checkpoint(path) -> MaskNetParams:
    meta, tensors = read_checkpoint(path)
    arch = ModelArch.from_dict(meta["arch"])
    expected = layer_shapes(arch)
    params = {}
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {name}")
        if tensors[name].shape != shape:
            raise CheckpointError(f"shape mismatch for {name}: {tensors[name].shape} vs {shape}")
        params[name] = tensors[name]
    return MaskNetParams(arch, params)
