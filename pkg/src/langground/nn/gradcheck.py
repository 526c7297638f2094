"""Finite-difference gradient checking for the op set.

Central differences at float64 against the tape's reverse-mode gradients.
Relative error per element uses a unit floor in the denominator so elements
with tiny true gradients are compared absolutely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

_DENOM_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    per_input: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        detail = ", ".join(f"{k}={v:.3e}" for k, v in self.per_input.items())
        return f"[{status}] max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e}): {detail}"


def grad_check(fn, inputs: dict, tol: float = 1e-6, h: float = 1e-5,
               max_elements: int = 400, seed: int = 0) -> GradCheckReport:
    """fn maps {name: Tensor} to a scalar Tensor.  ``inputs`` holds float64
    ndarrays.  Large inputs are subsampled to max_elements per input."""
    tensors = {k: Tensor(v.astype(np.float64, copy=True), requires_grad=True)
               for k, v in inputs.items()}
    loss = fn(tensors)
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None
                    else np.zeros_like(t.data))
                for k, t in tensors.items()}

    rng = np.random.Generator(np.random.PCG64(seed))
    report = GradCheckReport(0.0, tol)
    for name, base in inputs.items():
        flat = tensors[name].data.reshape(-1)
        n = flat.size
        if n > max_elements:
            idx = rng.choice(n, size=max_elements, replace=False)
        else:
            idx = np.arange(n)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(tensors).item()
            flat[i] = orig - h
            f_minus = fn(tensors).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            a = analytic[name].reshape(-1)[i]
            denom = max(abs(a), abs(numeric), _DENOM_FLOOR)
            worst = max(worst, abs(a - numeric) / denom)
        report.per_input[name] = worst
        report.max_rel_err = max(report.max_rel_err, worst)
    return report
