"""Dense float64 primitives: affine layers, activations, optimizers,
a flat parameter container with checkpointing, and a central-difference
gradient checker.

Vectors and matrices are plain ``numpy.ndarray`` objects of dtype float64.
Functions that take a vector ``x`` also accept a batch ``(B, n)`` whose rows
are treated independently.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

CHECKPOINT_MAGIC = b"MMQCKPT1"


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


def _shape_error(op: str, a_name: str, a, b_name: str, b) -> ShapeError:
    return ShapeError(
        f"{op}: {a_name} has shape {np.shape(a)} but {b_name} has shape {np.shape(b)}"
    )


# ---------------------------------------------------------------------------
# affine


def affine_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``W @ x + b`` (row-wise for a batch ``x`` of shape ``(B, n)``)."""
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise _shape_error("affine_forward", "W", W, "x", x)
    if b.shape != (W.shape[0],):
        raise _shape_error("affine_forward", "W", W, "b", b)
    return x @ W.T + b


def affine_backward(x: np.ndarray, W: np.ndarray, grad_out: np.ndarray):
    """Gradients of an affine map given the upstream gradient.

    Returns ``(grad_x, grad_W, grad_b)``. For batched input the parameter
    gradients are summed over the batch.
    """
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise _shape_error("affine_backward", "W", W, "x", x)
    if grad_out.shape[-1] != W.shape[0] or grad_out.shape[:-1] != x.shape[:-1]:
        raise _shape_error("affine_backward", "grad_out", grad_out, "x", x)
    grad_x = grad_out @ W
    if x.ndim == 1:
        grad_W = np.outer(grad_out, x)
        grad_b = grad_out.copy()
    else:
        grad_W = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
    return grad_x, grad_W, grad_b


# ---------------------------------------------------------------------------
# activations


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, grad_out, 0.0)


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward pass given the sigmoid *output* ``y``."""
    return grad_out * y * (1.0 - y)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] < 1:
        raise ShapeError("softmax: input must have length >= 1")
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, grad_out: np.ndarray, axis: int = -1) -> np.ndarray:
    """Backward pass given the softmax *output* ``y``."""
    return y * (grad_out - (grad_out * y).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# parameters


class ParamBlock:
    """Named float64 slots backed by one contiguous flat buffer.

    Slots are views into ``flat``; writing either side is visible in the
    other. ``version`` is bumped on every optimizer or flat write so caches
    built from an earlier state can be detected as stale.
    """

    def __init__(self, shapes: Mapping[str, tuple[int, ...]]):
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._offsets: dict[str, int] = {}
        offset = 0
        for name, shape in shapes.items():
            shape = tuple(int(s) for s in shape)
            if len(shape) not in (1, 2) or any(s < 1 for s in shape):
                raise ShapeError(f"slot {name!r}: unsupported shape {shape}")
            self._shapes[name] = shape
            self._offsets[name] = offset
            offset += math.prod(shape)
        self.flat = np.zeros(offset, dtype=np.float64)
        self._views = {
            name: self.flat[self._offsets[name] : self._offsets[name] + math.prod(s)].reshape(s)
            for name, s in self._shapes.items()
        }
        self.version = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __setitem__(self, name: str, value) -> None:
        view = self._views[name]
        if value is not view:
            view[...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._views

    def __len__(self) -> int:
        return self.flat.size

    def names(self) -> list[str]:
        return list(self._shapes)

    def shape(self, name: str) -> tuple[int, ...]:
        return self._shapes[name]

    def offset(self, name: str) -> int:
        return self._offsets[name]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return dict(self._shapes)

    def zeros_like(self) -> "ParamBlock":
        return ParamBlock(self._shapes)

    def copy(self) -> "ParamBlock":
        out = ParamBlock(self._shapes)
        out.flat[:] = self.flat
        return out

    def set_flat(self, values: Iterable[float]) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.flat.shape:
            raise _shape_error("set_flat", "params", self.flat, "values", values)
        self.flat[:] = values
        self.version += 1

    def manifest(self) -> list[dict]:
        out = []
        for name, shape in self._shapes.items():
            rows, cols = (shape[0], 1) if len(shape) == 1 else shape
            out.append({
                "name": name,
                "kind": "vector" if len(shape) == 1 else "matrix",
                "rows": rows,
                "cols": cols,
                "offset": self._offsets[name],
            })
        return out


def save_checkpoint(path, params: ParamBlock, meta: dict | None = None) -> None:
    """Write ``params`` (and JSON-serializable ``meta``) to ``path``.

    Layout: 8-byte magic ``MMQCKPT1``, uint64 LE manifest length ``L``,
    ``L`` bytes of UTF-8 JSON (space padded so the payload starts on an
    8-byte boundary), then the flat parameter vector as little-endian f64.
    """
    manifest = {"slots": params.manifest(), "size": len(params), "meta": meta or {}}
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    text += b" " * (-(len(CHECKPOINT_MAGIC) + 8 + len(text)) % 8)
    payload = params.flat.astype("<f8").tobytes()
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<Q", len(text)) + text + payload)


def load_checkpoint(path) -> tuple[ParamBlock, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16 : 16 + n].decode("utf-8"))
    shapes = {}
    for slot in manifest["slots"]:
        shapes[slot["name"]] = (
            (slot["rows"],) if slot["kind"] == "vector" else (slot["rows"], slot["cols"])
        )
    params = ParamBlock(shapes)
    for slot in manifest["slots"]:
        if params.offset(slot["name"]) != slot["offset"]:
            raise ValueError(f"{path}: slot {slot['name']!r} has inconsistent offset")
    flat = np.frombuffer(data[16 + n :], dtype="<f8")
    if flat.size != manifest["size"] or flat.size != len(params):
        raise ValueError(f"{path}: payload has {flat.size} values, manifest says {manifest['size']}")
    params.flat[:] = flat
    return params, manifest["meta"]


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(params: ParamBlock, grads: np.ndarray, state: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise _shape_error("adam_step", "params", params.flat, "grads", grads)
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    params.flat -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    params.version += 1


def sgd_step(params: ParamBlock, grads: np.ndarray, lr: float) -> None:
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.flat.shape:
        raise _shape_error("sgd_step", "params", params.flat, "grads", grads)
    params.flat -= lr * grads
    params.version += 1


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    worst_slot: str
    tol: float
    numeric: np.ndarray = field(repr=False)
    analytic: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_gradient(f: Callable[[ParamBlock], float], params: ParamBlock, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` over every scalar in ``params``.

    ``params`` is perturbed in place and restored exactly afterwards.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    flat = params.flat
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        params.version += 1
        f_plus = float(f(params))
        flat[i] = orig - h
        params.version += 1
        f_minus = float(f(params))
        flat[i] = orig
        params.version += 1
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise FloatingPointError(
                f"non-finite objective when perturbing coordinate {i} ({_slot_of(params, i)})"
            )
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return out


def _slot_of(params: ParamBlock, index: int) -> str:
    for name in params.names():
        start = params.offset(name)
        if start <= index < start + math.prod(params.shape(name)):
            return f"{name}[{index - start}]"
    return "?"


def grad_check(f: Callable[[ParamBlock], float], params: ParamBlock, analytic: np.ndarray,
               h: float = 1e-5, tol: float = 1e-4, floor: float = 1e-6) -> GradCheckReport:
    """Compare ``analytic`` (flat gradient of ``f`` at ``params``) to central differences."""
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.flat.shape:
        raise _shape_error("grad_check", "params", params.flat, "analytic", analytic)
    f0 = float(f(params))
    if not math.isfinite(f0):
        raise FloatingPointError("non-finite objective at the unperturbed point")
    numeric = numeric_gradient(f, params, h)
    err = relative_error(analytic, numeric, floor)
    worst = int(np.argmax(err)) if err.size else 0
    return GradCheckReport(
        max_rel_error=float(err.max()) if err.size else 0.0,
        worst_index=worst,
        worst_slot=_slot_of(params, worst) if err.size else "",
        tol=tol,
        numeric=numeric,
        analytic=analytic,
    )
