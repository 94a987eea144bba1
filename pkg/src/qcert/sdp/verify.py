"""Independent certificate verification.

Everything here recomputes residuals and spectra from the problem data
alone, without reusing any solver state, so a stored solution can be
re-audited at any time.  The one fact these checks rely on is weak duality:
for a maximize-form problem, any y with A*(y) - C >= 0 satisfies
b'y >= <C, X> for every feasible X, so b'y upper-bounds the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatchError, UncertifiedError
from .problem import SdpProblem, SdpSolution

PSD_TOL = 1e-8
RESIDUAL_TOL = 1e-8


def _dense_data(problem: SdpProblem):
    """(constraint matrices, objective matrices) as dicts keyed by block."""
    dims = problem.block_dims
    cons: list[dict[int, np.ndarray]] = [dict() for _ in range(problem.n_constraints)]
    obj: dict[int, np.ndarray] = {}
    for ch in problem.constraint_chunks:
        for c, blk, owner, vec in zip(ch.coeff, ch.block, ch.owner, ch.vecs):
            mat = cons[owner].setdefault(int(blk), np.zeros((dims[blk], dims[blk])))
            mat += c * np.outer(vec, vec)
    for ch in problem.objective_chunks:
        for c, blk, vec in zip(ch.coeff, ch.block, ch.vecs):
            mat = obj.setdefault(int(blk), np.zeros((dims[blk], dims[blk])))
            mat += c * np.outer(vec, vec)
    return cons, obj


def dual_slack_blocks(problem: SdpProblem, y: np.ndarray) -> list[np.ndarray]:
    """S(y) = A*(y) - C per block, reconstructed from scratch (maximize form)."""
    dims = problem.block_dims
    sign = 1.0 if problem.maximize else -1.0
    out = [np.zeros((d, d)) for d in dims]
    for ch in problem.constraint_chunks:
        w = y[ch.owner] * ch.coeff
        for wk, blk, vec in zip(w, ch.block, ch.vecs):
            out[blk] += wk * np.outer(vec, vec)
    for ch in problem.objective_chunks:
        for c, blk, vec in zip(ch.coeff, ch.block, ch.vecs):
            out[blk] -= sign * c * np.outer(vec, vec)
    return out


@dataclass
class FeasibilityReport:
    primal_residual_inf: float
    dual_residual_inf: float
    min_primal_eigenvalue: float
    min_dual_eigenvalue: float
    primal_ok: bool
    dual_ok: bool

    @property
    def ok(self) -> bool:
        return self.primal_ok and self.dual_ok

    def to_json(self) -> dict:
        return {
            "primal_residual_inf": self.primal_residual_inf,
            "dual_residual_inf": self.dual_residual_inf,
            "min_primal_eigenvalue": self.min_primal_eigenvalue,
            "min_dual_eigenvalue": self.min_dual_eigenvalue,
            "primal_ok": self.primal_ok,
            "dual_ok": self.dual_ok,
        }


def check_feasibility(problem: SdpProblem, solution: SdpSolution) -> FeasibilityReport:
    """Recompute primal/dual residuals and block spectra from scratch."""
    dims = problem.block_dims
    X = solution.primal
    if len(X) != dims.size or any(x.shape != (d, d) for x, d in zip(X, dims)):
        raise DimensionMismatchError("primal blocks do not match problem dimensions")
    if solution.dual.shape != (problem.n_constraints,):
        raise DimensionMismatchError("dual vector does not match constraint count")

    r = -problem.rhs.copy()
    for ch in problem.constraint_chunks:
        for c, blk, owner, vec in zip(ch.coeff, ch.block, ch.owner, ch.vecs):
            r[owner] += c * float(vec @ X[blk] @ vec)
    primal_residual = float(np.abs(r).max(initial=0.0))

    min_primal = min(float(np.linalg.eigvalsh(0.5 * (x + x.T))[0]) for x in X)
    slack = dual_slack_blocks(problem, solution.dual)
    min_dual = min(float(np.linalg.eigvalsh(0.5 * (s + s.T))[0]) for s in slack)

    bscale = 1.0 + float(np.abs(problem.rhs).max(initial=0.0))
    primal_ok = primal_residual <= RESIDUAL_TOL * bscale and min_primal >= -PSD_TOL
    dual_ok = min_dual >= -PSD_TOL
    return FeasibilityReport(
        primal_residual_inf=primal_residual,
        dual_residual_inf=max(0.0, -min_dual),
        min_primal_eigenvalue=min_primal,
        min_dual_eigenvalue=min_dual,
        primal_ok=primal_ok,
        dual_ok=dual_ok,
    )


def certified_upper_bound(problem: SdpProblem, solution: SdpSolution,
                          psd_tol: float = PSD_TOL) -> float:
    """Rigorous upper bound on the maximize-form optimum from the dual point.

    Verifies A*(y) - C >= -psd_tol and returns b'y; refuses when the dual
    point is infeasible beyond tolerance.
    """
    if not problem.maximize:
        raise UncertifiedError("certified upper bound requires a maximize-form problem")
    if solution.dual.shape != (problem.n_constraints,):
        raise DimensionMismatchError("dual vector does not match constraint count")
    slack = dual_slack_blocks(problem, solution.dual)
    lam = min(float(np.linalg.eigvalsh(0.5 * (s + s.T))[0]) for s in slack)
    if lam < -psd_tol:
        raise UncertifiedError(
            f"dual slack has eigenvalue {lam:.3e} < -{psd_tol:.0e}; bound not certified"
        )
    return float(problem.rhs @ solution.dual)
