"""Central finite-difference check of taped gradients."""
from dataclasses import dataclass, field

import numpy as np

from .tensor import Rng, no_grad


@dataclass
class ParamCheck:
    name: str
    rel_error: float
    max_abs_error: float
    checked: int


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    atol: float = 1e-9
    results: list = field(default_factory=list)

    def ok(self, r):
        # structurally zero gradients leave only rounding noise in both routes
        return r.rel_error < self.tol or r.max_abs_error < self.atol

    @property
    def failures(self):
        return [r for r in self.results if not self.ok(r)]

    @property
    def passed(self):
        return not self.failures

    @property
    def worst(self):
        return max(self.results, key=lambda r: r.rel_error, default=None)

    def lines(self):
        for r in self.results:
            status = "ok  " if self.ok(r) else "FAIL"
            yield f"{status} {r.name:<48s} rel={r.rel_error:.3e} abs={r.max_abs_error:.3e} n={r.checked}"


def analytic_gradients(f, params):
    for t in params.values():
        t.zero_grad()
    loss = f()
    loss.backward()
    return {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
            for name, t in params.items()}


def finite_difference_check(f, params, eps=1e-5, tol=1e-4, analytic=None,
                            max_entries=None, seed=0, atol=1e-9):
    """Compare backward() gradients of the scalar ``f()`` with central differences.

    ``params`` maps names to leaf tensors that ``f`` reads.  The error for a
    parameter is max|g_analytic - g_numeric| / (max|g_numeric| + 1e-12) over the
    checked entries; a parameter also passes when the absolute error is
    below ``atol`` (the finite-difference noise floor).  ``max_entries`` caps
    how many entries of each tensor are probed (picked with a seeded draw);
    None probes all of them.
    ``analytic`` lets the caller supply precomputed gradients.
    """
    if analytic is None:
        analytic = analytic_gradients(f, params)
    rng = Rng(seed)
    report = GradCheckReport(tol=tol, eps=eps, atol=atol)
    with no_grad():
        for name, t in params.items():
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.permutation(flat.size)[:max_entries])
            numeric = np.empty(idx.size)
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                numeric[n] = (up - down) / (2 * eps)
            ana = analytic[name].reshape(-1)[idx]
            abs_err = float(np.max(np.abs(ana - numeric), initial=0.0))
            rel = abs_err / (float(np.max(np.abs(numeric), initial=0.0)) + 1e-12)
            report.results.append(ParamCheck(name, rel, abs_err, int(idx.size)))
    return report
