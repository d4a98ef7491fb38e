"""Self-check suites for the tensor algebra, runnable from the CLI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tproduct import Tensor3, fold, tpinv, tprod, tprod_general, ttranspose, unfold


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_error <= self.tolerance


def _rand(rng, rows, cols, tubes) -> Tensor3:
    return Tensor3(rng.normal(size=(rows, cols, tubes)))


def tproduct_suite(seeds=range(10), tol: float = 1e-10) -> list[CheckResult]:
    """Structural identities of the t-product on random tensors."""
    err_fold = err_paths = err_assoc = err_dist = err_shape = err_tt = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        a = _rand(rng, 3, 4, 5)
        b = _rand(rng, 4, 2, 5)
        c = _rand(rng, 2, 3, 5)

        err_fold = max(
            err_fold, float(np.max(np.abs(fold(unfold(a), a.tubes).data - a.data)))
        )
        err_paths = max(
            err_paths,
            float(np.max(np.abs(tprod(a, b, "fourier").data - tprod(a, b, "circulant").data))),
        )
        err_assoc = max(
            err_assoc,
            float(np.max(np.abs(tprod(a, tprod(b, c)).data - tprod(tprod(a, b), c).data))),
        )
        b2 = _rand(rng, 4, 2, 5)
        lhs = tprod(a, b + b2)
        rhs = tprod(a, b) + tprod(a, b2)
        err_dist = max(err_dist, float(np.max(np.abs(lhs.data - rhs.data))))

        g = tprod_general(_rand(rng, 3, 4, 2), _rand(rng, 4, 2, 4))
        err_shape = max(err_shape, 0.0 if g.shape == (3, 2, 4) else 1.0)
        err_tt = max(
            err_tt, float(np.max(np.abs(ttranspose(ttranspose(a)).data - a.data)))
        )
    return [
        CheckResult("fold(unfold(t)) identity", err_fold, 0.0),
        CheckResult("circulant vs fourier product", err_paths, tol),
        CheckResult("associativity", err_assoc, tol),
        CheckResult("distributivity", err_dist, tol),
        CheckResult("generalized product shape law", err_shape, 0.0),
        CheckResult("double tensor-transpose identity", err_tt, 0.0),
    ]


def pinv_suite(seeds=range(10), tol: float = 1e-8) -> list[CheckResult]:
    """Penrose conditions and the single-tube closed form."""
    errs = [0.0, 0.0, 0.0, 0.0]
    err_closed = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        t = _rand(rng, 4, 6, 3)
        p = tpinv(t)
        prods = [
            tprod(t, tprod(p, t)).data - t.data,
            tprod(p, tprod(t, p)).data - p.data,
            ttranspose(tprod(t, p)).data - tprod(t, p).data,
            ttranspose(tprod(p, t)).data - tprod(p, t).data,
        ]
        for k, diff in enumerate(prods):
            errs[k] = max(errs[k], float(np.max(np.abs(diff))))

        v = rng.normal(size=(4, 9))  # full row rank: |V| < d
        closed = v.T @ np.linalg.inv(v @ v.T)
        got = tpinv(Tensor3.from_matrix(v)).data[:, :, 0]
        err_closed = max(err_closed, float(np.max(np.abs(got - closed))))
    return [
        CheckResult("penrose 1: t p t = t", errs[0], tol),
        CheckResult("penrose 2: p t p = p", errs[1], tol),
        CheckResult("penrose 3: (t p)' = t p", errs[2], tol),
        CheckResult("penrose 4: (p t)' = p t", errs[3], tol),
        CheckResult("single-tube pinv closed form", err_closed, tol),
    ]
