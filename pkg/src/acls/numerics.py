"""Dense float64 numerics: parameter tensors, core ops, init schemes, and
the central-difference gradient oracle every layer is validated against.

All math runs in 64-bit floats. Matrices are C-ordered numpy arrays;
within one installed build, every op is deterministic for fixed inputs.
"""

import numpy as np

from .errors import NumericError
from .rng import Xoshiro256


class ParamTensor:
    """A named parameter array paired with an additive gradient buffer."""

    def __init__(self, name: str, value: np.ndarray, trainable: bool = True):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.value.shape})"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax (max-subtracted) along the last axis."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def init_params(shape, seed: int, scheme: str = "uniform-scaled",
                fans: tuple[int, int] | None = None) -> np.ndarray:
    """Deterministic parameter init.

    ``uniform-scaled`` draws from U(-s, s) with s = sqrt(6 / (fan_in +
    fan_out)); fans default to (cols, rows) for 2-D shapes and must be
    given explicitly otherwise. ``zeros`` returns an all-zero array.
    Draws are made in row-major order from a generator seeded with
    ``seed``, so results are identical across platforms.
    """
    if scheme == "zeros":
        return np.zeros(shape, dtype=np.float64)
    if scheme != "uniform-scaled":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if fans is None:
        if len(shape) != 2:
            raise ValueError("uniform-scaled init needs explicit fans for non-2D shapes")
        fans = (shape[1], shape[0])
    s = np.sqrt(6.0 / (fans[0] + fans[1]))
    rng = Xoshiro256(seed)
    out = np.empty(shape, dtype=np.float64)
    flat = out.reshape(-1)
    for i in range(flat.size):
        flat[i] = rng.uniform(-s, s)
    return out


class GradCheckReport:
    """Per-group worst relative error from a finite-difference sweep."""

    def __init__(self, groups: list[tuple[str, float, int]], step: float, tol: float):
        self.groups = groups  # (name, max_rel_err, n_entries)
        self.step = step
        self.tol = tol

    @property
    def max_error(self) -> float:
        return max((e for _, e, _ in self.groups), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def failures(self) -> list[str]:
        return [name for name, err, _ in self.groups if err > self.tol]

    def format(self) -> str:
        width = max((len(n) for n, _, _ in self.groups), default=4)
        lines = [f"{'group':<{width}}  {'entries':>7}  {'max_rel_err':>12}  status"]
        for name, err, n in self.groups:
            status = "ok" if err <= self.tol else "FAIL"
            lines.append(f"{name:<{width}}  {n:>7}  {err:>12.3e}  {status}")
        lines.append(f"overall max {self.max_error:.3e} "
                     f"({'pass' if self.passed else 'fail'} at tol {self.tol:g})")
        return "\n".join(lines)


def grad_check(f, params: list[ParamTensor], step: float = 1e-3,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``f`` recomputes the scalar objective from the tensors' current
    values: it must be deterministic and side-effect free. Analytic
    gradients are expected to already sit in each tensor's ``grad``
    buffer. The error for one entry is |analytic - numeric| relative to
    max(1, |analytic|, |numeric|), so sub-unit gradients are compared
    absolutely; the report carries the worst entry per tensor.
    """
    base = float(f())
    if not np.isfinite(base):
        raise NumericError("objective is non-finite at the evaluation point")
    groups = []
    for p in params:
        flat_v = p.value.reshape(-1)
        flat_g = p.grad.reshape(-1)
        worst = 0.0
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + step
            f_plus = float(f())
            flat_v[i] = orig - step
            f_minus = float(f())
            flat_v[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"objective non-finite while probing {p.name}")
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = flat_g[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            if err > worst:
                worst = err
        groups.append((p.name, worst, flat_v.size))
    return GradCheckReport(groups, step, tol)
