"""Finite-difference oracle for analytic gradients.

Central differences with a per-coordinate step ``step * max(1, |x|)``;
relative error uses the denominator ``max(1, |analytic|, |numeric|)`` so
near-zero entries are judged absolutely and large ones relatively.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    n_checked: int
    worst: tuple[int, int] | None = None  # (input index, flat coordinate)
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def grad_check(f, point, tol: float = 1e-4, step: float = 1e-5,
               max_entries: int | None = None, rng=None) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued ``f`` against central
    differences at ``point`` (one tensor or a sequence of tensors).

    ``max_entries`` limits how many coordinates per input are probed
    numerically (random without replacement); the analytic pass is always
    full.  Raises if ``f`` evaluates non-finite near the point.
    """
    points = [point] if isinstance(point, Tensor) else list(point)
    inputs = [Tensor(p.data.copy(), requires_grad=True) for p in points]

    out = f(*inputs)
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise ValueError("function evaluated non-finite at the base point")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    if rng is None:
        rng = np.random.default_rng(0)

    max_err = 0.0
    worst = None
    n_checked = 0
    per_input = []
    for idx, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = rng.choice(flat.size, size=max_entries, replace=False)
        err_here = 0.0
        for c in coords:
            h = step * max(1.0, abs(flat[c]))
            orig = flat[c]
            flat[c] = orig + h
            hi = f(*inputs).item()
            flat[c] = orig - h
            lo = f(*inputs).item()
            flat[c] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise ValueError("function evaluated non-finite during probing")
            numeric = (hi - lo) / (2.0 * h)
            a = analytic[idx].reshape(-1)[c]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            n_checked += 1
            if err > err_here:
                err_here = err
            if err > max_err:
                max_err = err
                worst = (idx, int(c))
        per_input.append(err_here)

    return GradCheckReport(max_rel_err=max_err, tol=tol, n_checked=n_checked,
                           worst=worst, per_input=per_input)
