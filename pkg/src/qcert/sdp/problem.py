"""Data model for block-diagonal equality-constrained semidefinite programs.

    maximize   sum_k <C_k, X_k>
    subject to sum_k <A_jk, X_k> = b_j     (j = 0..p-1)
               X_k >= 0                    (each block PSD)

Coefficient matrices are stored in one of two interchangeable forms:

* dense components: per constraint, a list of (block id, symmetric matrix)
  pairs -- the form used for construction by hand and for JSON archives;
* term chunks: every coefficient matrix expanded into weighted rank-one
  terms coeff * v v^T, stored as flat arrays -- the form the solver
  consumes, and the only practical one for problems with many blocks.

`group_hint = (q, ngroups)` marks the leading q*ngroups constraints as
ngroups independent groups of q: constraints from different groups never
touch a common block, so the Schur complement is block-arrowhead.  The
hint is verified during compilation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import SdpInputError


@dataclass
class TermChunk:
    """Rank-one terms of uniform vector width.

    Every referenced block must have dimension vecs.shape[1]; owner is the
    constraint index (-1 for objective terms).
    """

    coeff: np.ndarray
    block: np.ndarray
    owner: np.ndarray
    vecs: np.ndarray

    def __post_init__(self):
        self.coeff = np.asarray(self.coeff, dtype=float)
        self.block = np.asarray(self.block, dtype=np.int64)
        self.owner = np.asarray(self.owner, dtype=np.int64)
        self.vecs = np.atleast_2d(np.asarray(self.vecs, dtype=float))
        k = self.coeff.size
        if not (self.block.size == self.owner.size == self.vecs.shape[0] == k):
            raise SdpInputError("term chunk arrays have inconsistent lengths")


def _check_sym(mat: np.ndarray, dim: int, where: str) -> np.ndarray:
    m = np.asarray(mat, dtype=float)
    if m.shape != (dim, dim):
        raise SdpInputError(f"{where}: expected {dim}x{dim} matrix, got {m.shape}")
    if not np.isfinite(m).all():
        raise SdpInputError(f"{where}: non-finite entries")
    if not np.allclose(m, m.T, atol=1e-12, rtol=0.0):
        raise SdpInputError(f"{where}: matrix not symmetric")
    return 0.5 * (m + m.T)


def _dense_to_chunks(block_dims, items, rank1_tol=1e-14):
    """Eigendecompose (block, matrix) pairs into rank-one term chunks."""
    by_dim: dict[int, list] = {}
    for owner, block, mat in items:
        d = block_dims[block]
        w, v = np.linalg.eigh(mat)
        scale = max(1.0, float(np.abs(w).max(initial=0.0)))
        for lam, vec in zip(w, v.T):
            if abs(lam) > rank1_tol * scale:
                by_dim.setdefault(d, []).append((lam, block, owner, vec))
    chunks = []
    for d, rows in sorted(by_dim.items()):
        chunks.append(
            TermChunk(
                coeff=np.array([r[0] for r in rows]),
                block=np.array([r[1] for r in rows]),
                owner=np.array([r[2] for r in rows]),
                vecs=np.array([r[3] for r in rows]),
            )
        )
    return chunks


class SdpProblem:
    """Block-diagonal SDP with linear equality constraints.

    Construct either from dense data:

        SdpProblem(block_dims, objective=[(blk, C)], constraints=[([(blk, A)], rhs)])

    or from prebuilt term chunks via `SdpProblem.from_terms`.
    """

    def __init__(
        self,
        block_dims,
        objective=None,
        constraints=None,
        maximize: bool = True,
        group_hint: tuple[int, int] | None = None,
    ):
        self.block_dims = np.asarray(block_dims, dtype=np.int64)
        if self.block_dims.size == 0 or (self.block_dims < 1).any():
            raise SdpInputError("need at least one block of positive dimension")
        self.maximize = bool(maximize)
        self.group_hint = group_hint
        self._compiled = None
        self.dense_objective = None
        self.dense_constraints = None
        self.constraint_chunks: list[TermChunk] = []
        self.objective_chunks: list[TermChunk] = []
        self.rhs = np.zeros(0)

        if objective is None and constraints is None:
            return  # populated by from_terms

        objective = objective or []
        constraints = constraints or []
        nb = self.block_dims.size
        dense_obj = []
        for blk, mat in objective:
            if not 0 <= blk < nb:
                raise SdpInputError(f"objective references unknown block {blk}")
            dense_obj.append((int(blk), _check_sym(mat, self.block_dims[blk], "objective")))
        dense_cons = []
        rhs = []
        for j, (comps, b) in enumerate(constraints):
            row = []
            for blk, mat in comps:
                if not 0 <= blk < nb:
                    raise SdpInputError(f"constraint {j} references unknown block {blk}")
                row.append((int(blk), _check_sym(mat, self.block_dims[blk], f"constraint {j}")))
            if not row:
                raise SdpInputError(f"constraint {j} has no components")
            dense_cons.append(row)
            rhs.append(float(b))
        self.dense_objective = dense_obj
        self.dense_constraints = dense_cons
        self.rhs = np.asarray(rhs, dtype=float)
        self.objective_chunks = _dense_to_chunks(
            self.block_dims, [(-1, blk, mat) for blk, mat in dense_obj]
        )
        items = [
            (j, blk, mat)
            for j, row in enumerate(dense_cons)
            for blk, mat in row
        ]
        self.constraint_chunks = _dense_to_chunks(self.block_dims, items)

    @classmethod
    def from_terms(
        cls,
        block_dims,
        rhs,
        constraint_chunks: list[TermChunk],
        objective_chunks: list[TermChunk],
        maximize: bool = True,
        group_hint: tuple[int, int] | None = None,
    ) -> "SdpProblem":
        prob = cls(block_dims, maximize=maximize, group_hint=group_hint)
        prob.rhs = np.asarray(rhs, dtype=float)
        prob.constraint_chunks = list(constraint_chunks)
        prob.objective_chunks = list(objective_chunks)
        dims = prob.block_dims
        for ch in prob.constraint_chunks + prob.objective_chunks:
            if ch.block.size and not (dims[ch.block] == ch.vecs.shape[1]).all():
                raise SdpInputError("term chunk width does not match block dims")
        return prob

    @property
    def n_constraints(self) -> int:
        return self.rhs.size

    @property
    def n_blocks(self) -> int:
        return self.block_dims.size

    def densify(self) -> None:
        """Materialize dense components from term chunks (small problems only)."""
        if self.dense_constraints is not None:
            return
        nb = self.n_blocks
        dims = self.block_dims
        if int(np.sum(dims**2)) * max(1, self.n_constraints) > 5_000_000:
            raise SdpInputError("problem too large to densify")
        cons = [dict() for _ in range(self.n_constraints)]
        obj: dict[int, np.ndarray] = {}
        for ch in self.constraint_chunks:
            for c, blk, owner, vec in zip(ch.coeff, ch.block, ch.owner, ch.vecs):
                mat = cons[owner].setdefault(int(blk), np.zeros((dims[blk], dims[blk])))
                mat += c * np.outer(vec, vec)
        for ch in self.objective_chunks:
            for c, blk, vec in zip(ch.coeff, ch.block, ch.vecs):
                mat = obj.setdefault(int(blk), np.zeros((dims[blk], dims[blk])))
                mat += c * np.outer(vec, vec)
        self.dense_constraints = [sorted(d.items()) for d in cons]
        self.dense_objective = sorted(obj.items())

    def to_json(self) -> dict:
        self.densify()
        return {
            "block_dims": self.block_dims.tolist(),
            "maximize": self.maximize,
            "objective": [
                {"block": blk, "matrix": mat.tolist()} for blk, mat in self.dense_objective
            ],
            "constraints": [
                {
                    "components": [
                        {"block": blk, "matrix": mat.tolist()} for blk, mat in row
                    ],
                    "rhs": float(b),
                }
                for row, b in zip(self.dense_constraints, self.rhs)
            ],
            "group_hint": list(self.group_hint) if self.group_hint else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SdpProblem":
        constraints = [
            ([(c["block"], np.array(c["matrix"])) for c in row["components"]], row["rhs"])
            for row in obj["constraints"]
        ]
        objective = [(o["block"], np.array(o["matrix"])) for o in obj["objective"]]
        hint = tuple(obj["group_hint"]) if obj.get("group_hint") else None
        return cls(
            obj["block_dims"],
            objective=objective,
            constraints=constraints,
            maximize=obj.get("maximize", True),
            group_hint=hint,
        )


@dataclass
class SdpSolution:
    """Solver output: per-block primal matrices and dual multipliers."""

    primal: list[np.ndarray]
    dual: np.ndarray
    primal_value: float
    dual_value: float
    gap: float
    status: str  # optimal | infeasible | limit | numerical-failure
    iterations: int
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    infeasibility_certificate: np.ndarray | None = field(default=None, repr=False)

    def to_json(self, include_primal: bool = True) -> dict:
        obj = {
            "dual": self.dual.tolist(),
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "status": self.status,
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
        }
        if include_primal:
            obj["primal"] = [x.tolist() for x in self.primal]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "SdpSolution":
        return cls(
            primal=[np.array(x) for x in obj.get("primal", [])],
            dual=np.array(obj["dual"], dtype=float),
            primal_value=float(obj["primal_value"]),
            dual_value=float(obj["dual_value"]),
            gap=float(obj["gap"]),
            status=obj["status"],
            iterations=int(obj["iterations"]),
            primal_residual=float(obj.get("primal_residual", "nan")),
            dual_residual=float(obj.get("dual_residual", "nan")),
        )


def problem_digest(problem: SdpProblem) -> str:
    """Stable digest of the problem archive form, for tamper checks."""
    import hashlib

    payload = json.dumps(problem.to_json(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()
