"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    passed: bool
    location: tuple | None = None
    message: str = ""

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" at input {self.location[0]}{list(self.location[1])}" if self.location else ""
        extra = f" ({self.message})" if self.message else ""
        return f"{status}  {self.name:<28s} max rel err {self.max_rel_error:.3e}{where}{extra}"


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-4,
    tol: float = 1e-5,
    seed: int = 0,
    name: str = "op",
    max_checks: int | None = None,
) -> GradCheckReport:
    """Compare backward() against central differences of ``sum(w * fn(*inputs))``.

    ``w`` is a fixed random projection so that every output element carries a
    distinct weight.  Inputs are promoted to float64.  ``max_checks`` caps the
    number of coordinates probed per input (chosen at random, reproducibly);
    ``None`` probes every element.
    """
    # separate stream from the usual default_rng(seed) so the projection never
    # coincides with inputs drawn from the same seed
    rng = np.random.default_rng((seed, 0x95C))
    arrays = [np.array(a, dtype=np.float64) for a in inputs]

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    if not np.all(np.isfinite(out.data)):
        bad = tuple(np.argwhere(~np.isfinite(out.data))[0])
        return GradCheckReport(name, np.inf, False, ("output", bad), "non-finite forward value")
    proj = rng.standard_normal(out.shape)
    out.backward(proj)

    def objective() -> float:
        with no_grad():
            y = fn(*[Tensor(a) for a in arrays]).data
        return float(np.sum(y * proj))

    worst, where = 0.0, None
    for i, (arr, leaf) in enumerate(zip(arrays, leaves)):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        if not np.all(np.isfinite(analytic)):
            bad = tuple(np.argwhere(~np.isfinite(analytic))[0])
            return GradCheckReport(name, np.inf, False, (i, bad), "non-finite analytic gradient")
        flat_idx = np.arange(arr.size)
        if max_checks is not None and arr.size > max_checks:
            flat_idx = rng.choice(arr.size, size=max_checks, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + eps
            fp = objective()
            arr[idx] = orig - eps
            fm = objective()
            arr[idx] = orig
            numeric = (fp - fm) / (2 * eps)
            if not np.isfinite(numeric):
                return GradCheckReport(name, np.inf, False, (i, idx), "non-finite numeric gradient")
            err = float(relative_error(np.float64(analytic[idx]), np.float64(numeric)))
            if err > worst:
                worst, where = err, (i, tuple(int(v) for v in idx))
    return GradCheckReport(name, worst, worst <= tol, where)
