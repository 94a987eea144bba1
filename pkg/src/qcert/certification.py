"""Certified min-entropy bounds from observed statistics and state overlaps.

The adversary model: before each frame a classical variable sigma (one
guessed outcome per input) is drawn with some probability, and a
sub-normalized measurement {M_b^sigma} is applied whose statistics,
averaged over sigma, reproduce the observed table.  The guessing
probability is the maximum over such models of the average probability
that the outcome equals the guess.  Because all pairwise state overlaps
are fixed by the Gram matrix, states can be represented by any real unit
vectors with those inner products, and the maximization is a
semidefinite program over the blocks M_b^sigma.

Upper-bound rigor comes from a dual certificate.  The per-strategy
completeness constraints plus the normalization constraint combine, with
multipliers (t, ..., t, I*t), to a shift of the dual slack by t times the
identity on every block; so any approximate dual point can be lifted to an
exactly feasible one at a cost of I*t in the bound, where -t is the most
negative slack eigenvalue.  The reported p_guess upper bound is therefore
always a true bound, independent of solver convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .combinatorics import GramMatrix, StateGroup, constant_gram, gram_matrix
from .detector import CondProbTable
from .errors import (
    InfeasibleTableError,
    InvalidParametersError,
    NotPsdError,
    SdpInputError,
    StrategyLimitError,
    UncertifiedError,
)
from .sdp import SdpProblem, SdpSolution, TermChunk, solve

STRATEGY_LIMIT = 100_000
PIVOT_TOL = 1e-10
ZERO_VEC_TOL = 1e-30


@dataclass(frozen=True)
class StateEmbedding:
    """Real unit vectors (rows) reproducing a Gram matrix of overlaps."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        object.__setattr__(self, "vectors", v)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidParametersError("embedding must be a square row-vector matrix")

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


def embed_states(gram: GramMatrix) -> StateEmbedding:
    """Lower-triangular Gram factor with pivot regularization.

    Pivots below the PSD tolerance raise; tiny nonnegative pivots are
    clamped to zero and their columns zeroed, which keeps rank-deficient
    Gram matrices (identical states) exactly representable.
    """
    g = gram.entries
    n = g.shape[0]
    L = np.zeros((n, n))
    for k in range(n):
        d = g[k, k] - float(L[k, :k] @ L[k, :k])
        if d < -PIVOT_TOL:
            raise NotPsdError(f"pivot {k} is {d:.3e}; Gram matrix not PSD")
        piv = math.sqrt(max(d, 0.0))
        L[k, k] = piv
        if piv > 1e-12:
            for i in range(k + 1, n):
                L[i, k] = (g[i, k] - float(L[i, :k] @ L[k, :k])) / piv
        else:
            L[k, k] = 0.0
    err = float(np.abs(L @ L.T - g).max())
    if err > 1e-10:
        raise NotPsdError(f"Gram factorization error {err:.3e} exceeds 1e-10")
    norms = np.linalg.norm(L, axis=1)
    if float(np.abs(norms - 1.0).max()) > 1e-12:
        raise NotPsdError("embedding vectors deviate from unit norm")
    return StateEmbedding(L)


def enumerate_strategies(n_inputs: int, n_outcomes: int,
                         limit: int = STRATEGY_LIMIT) -> np.ndarray:
    """All n_outcomes^n_inputs guess assignments, lexicographic, one per row."""
    if n_inputs < 1 or n_outcomes < 1:
        raise InvalidParametersError("need at least one input and one outcome")
    count = n_outcomes**n_inputs
    if count > limit:
        raise StrategyLimitError(count, limit)
    idx = np.arange(count, dtype=np.int64)
    cols = [
        (idx // n_outcomes ** (n_inputs - 1 - x)) % n_outcomes
        for x in range(n_inputs)
    ]
    return np.stack(cols, axis=1)


@dataclass
class GuessSdpInfo:
    """Index bookkeeping for the constructed program (used by the dual lift)."""

    n_inputs: int
    n_outcomes_kept: int
    n_strategies: int
    group_size: int  # constraints per strategy group
    norm_index: int
    diag_indices: np.ndarray
    block_outcome: np.ndarray  # kept-outcome index per block
    reductions: list[np.ndarray]  # U_b per kept outcome, (I, d_b)
    kept_outcomes: np.ndarray  # original outcome indices


def _completeness_template(U: np.ndarray):
    """Rank-one terms of the diagonal-consistency and off-diagonal constraints
    of sum_b U_b N_b U_b^T = c * identity, for one outcome's U (I x d)."""
    I = U.shape[0]
    coeffs, owners, vecs = [], [], []
    local = 0
    for i in range(1, I):
        for c, v in ((1.0, U[i]), (-1.0, U[0])):
            if float(v @ v) > ZERO_VEC_TOL:
                coeffs.append(c)
                owners.append(local)
                vecs.append(v)
        local += 1
    for k in range(I):
        for l in range(k + 1, I):
            p = (U[k] + U[l]) / math.sqrt(2.0)
            q = (U[k] - U[l]) / math.sqrt(2.0)
            for c, v in ((0.5, p), (-0.5, q)):
                if float(v @ v) > ZERO_VEC_TOL:
                    coeffs.append(c)
                    owners.append(local)
                    vecs.append(v)
            local += 1
    return np.array(coeffs), np.array(owners, dtype=np.int64), np.array(vecs), local


def _build_guess_sdp(
    vectors: np.ndarray,
    probs: np.ndarray,
    weights: np.ndarray,
    strategies: np.ndarray,
    reductions: list[np.ndarray] | None = None,
) -> tuple[SdpProblem, GuessSdpInfo]:
    """Assemble the guessing-probability SDP.

    One PSD block per (strategy, kept outcome).  Constraints, in order:
    per-strategy completeness groups (diagonal consistency then vanishing
    off-diagonals of the block sum), then statistics reproduction, then the
    strategy-weight normalization.  With `reductions`, outcome b's blocks
    live in the subspace U_b orthogonal to every state with p(b|x) = 0,
    which removes the zero-probability constraints exactly.
    """
    I, B = probs.shape
    if I < 2:
        raise InvalidParametersError("certification needs at least two inputs")
    S = strategies.shape[0]
    if reductions is None:
        reductions = [np.eye(I)] * B
    dims_b = np.array([u.shape[1] for u in reductions])
    kept = np.flatnonzero(dims_b > 0)
    B_kept = kept.size
    if B_kept == 0:
        raise InfeasibleTableError("every outcome column was eliminated")
    for b in np.flatnonzero(dims_b == 0):
        if probs[:, b].max() > 0.0:
            raise InfeasibleTableError(
                f"outcome {b} has positive probability but its measurement "
                "is forced to vanish by the zero-probability constraints"
            )
    kept_pos = -np.ones(B, dtype=np.int64)
    kept_pos[kept] = np.arange(B_kept)

    q = (I - 1) + I * (I - 1) // 2
    n_local = q * S

    # data constraints: one per (x, b) with p(b|x) > 0, deduplicated on the
    # reduced state vector (identical states at delta = 1 collapse to one row)
    data_rows = []  # (b_kept_index, reduced vector, rhs)
    seen: dict[tuple, int] = {}
    for b in kept:
        U = reductions[b]
        for x in range(I):
            pbx = float(probs[x, b])
            if pbx == 0.0 and dims_b[b] < I:
                continue  # removed exactly by the subspace reduction
            u = U.T @ vectors[x]
            nrm = float(u @ u)
            if nrm <= 1e-24:
                if pbx > 1e-12:
                    raise InfeasibleTableError(
                        f"outcome {b} requires probability {pbx:.3g} from a state "
                        "orthogonal to its allowed subspace"
                    )
                continue
            key = (int(b), u.tobytes())
            if key in seen:
                prev = data_rows[seen[key]]
                if abs(prev[2] - pbx) > 1e-9:
                    raise InfeasibleTableError(
                        "identical states assigned different outcome probabilities"
                    )
                continue
            seen[key] = len(data_rows)
            data_rows.append((int(kept_pos[b]), u, pbx))

    p_total = n_local + len(data_rows) + 1
    norm_index = p_total - 1
    rhs = np.zeros(p_total)
    rhs[norm_index] = 1.0

    chunks: list[TermChunk] = []
    obj_chunks: list[TermChunk] = []
    sid = np.arange(S, dtype=np.int64)

    for bk, b in enumerate(kept):
        U = reductions[b]
        d = U.shape[1]
        tc, town, tvec, local_count = _completeness_template(U)
        if local_count != q:
            raise SdpInputError("completeness template size mismatch")
        nt = tc.size
        if nt:
            chunks.append(
                TermChunk(
                    coeff=np.tile(tc, S),
                    block=np.repeat(sid * B_kept + bk, nt),
                    owner=np.repeat(sid * q, nt) + np.tile(town, S),
                    vecs=np.tile(tvec, (S, 1)),
                )
            )
        # normalization: first diagonal entry of every block sum
        u0 = U[0]
        if float(u0 @ u0) > ZERO_VEC_TOL:
            chunks.append(
                TermChunk(
                    coeff=np.ones(S),
                    block=sid * B_kept + bk,
                    owner=np.full(S, norm_index, dtype=np.int64),
                    vecs=np.tile(u0, (S, 1)),
                )
            )

    for row_idx, (bk, u, pbx) in enumerate(data_rows):
        owner = n_local + row_idx
        rhs[owner] = pbx
        chunks.append(
            TermChunk(
                coeff=np.ones(S),
                block=sid * B_kept + bk,
                owner=np.full(S, owner, dtype=np.int64),
                vecs=np.tile(u, (S, 1)),
            )
        )

    # objective: weighted guess success sum_x w_x tr[rho_x M^sigma_{sigma_x}]
    for bk, b in enumerate(kept):
        U = reductions[b]
        for x in range(I):
            if weights[x] == 0.0:
                continue
            hit = np.flatnonzero(strategies[:, x] == b)
            if hit.size == 0:
                continue
            u = U.T @ vectors[x]
            if float(u @ u) <= ZERO_VEC_TOL:
                continue
            obj_chunks.append(
                TermChunk(
                    coeff=np.full(hit.size, float(weights[x])),
                    block=hit * B_kept + bk,
                    owner=np.full(hit.size, -1, dtype=np.int64),
                    vecs=np.tile(u, (hit.size, 1)),
                )
            )

    block_dims = np.tile(dims_b[kept], S)
    problem = SdpProblem.from_terms(
        block_dims,
        rhs,
        chunks,
        obj_chunks,
        maximize=True,
        group_hint=(q, S),
    )
    diag_indices = (sid[:, None] * q + np.arange(I - 1)[None, :]).ravel()
    info = GuessSdpInfo(
        n_inputs=I,
        n_outcomes_kept=B_kept,
        n_strategies=S,
        group_size=q,
        norm_index=norm_index,
        diag_indices=diag_indices,
        block_outcome=np.tile(np.arange(B_kept), S),
        reductions=[reductions[b] for b in kept],
        kept_outcomes=kept,
    )
    return problem, info


def _zero_outcome_reductions(vectors: np.ndarray, probs: np.ndarray) -> list[np.ndarray] | None:
    """Orthonormal bases of the subspaces allowed to each outcome.

    Outcome b's measurement blocks must annihilate every state with
    p(b|x) exactly zero; U_b spans the orthogonal complement of those
    states.  Returns None when the table has no zeros.
    """
    I, B = probs.shape
    if not (probs == 0.0).any():
        return None
    reductions = []
    for b in range(B):
        zero_x = np.flatnonzero(probs[:, b] == 0.0)
        if zero_x.size == 0:
            reductions.append(np.eye(I))
            continue
        rows = vectors[zero_x]
        u_svd, sv, vt = np.linalg.svd(rows, full_matrices=True)
        rank = int((sv > 1e-12 * max(1.0, sv[0] if sv.size else 1.0)).sum())
        reductions.append(vt[rank:].T.copy())  # (I, I - rank)
    return reductions


def build_guess_sdp(
    embedding: StateEmbedding,
    table: CondProbTable,
    input_weights=None,
    strategy_limit: int = STRATEGY_LIMIT,
) -> SdpProblem:
    """The guessing-probability SDP in its literal form: B * B^I blocks of
    dimension I, no subspace reduction."""
    probs = _validated_probs(table, embedding.size)
    I, B = probs.shape
    weights = _validated_weights(input_weights, I)
    strategies = enumerate_strategies(I, B, strategy_limit)
    if strategies.shape[0] * B > 300_000:
        raise StrategyLimitError(strategies.shape[0] * B, 300_000)
    problem, _ = _build_guess_sdp(embedding.vectors, probs, weights, strategies)
    return problem


def _min_slack_eig(problem: SdpProblem, y: np.ndarray) -> float:
    """Smallest eigenvalue of A*(y) - C over all blocks (batched by dim).

    y is in original constraint units; the compiled terms are row-normalized,
    so the multipliers are rescaled before applying the adjoint.
    """
    from .sdp.kernels import apply_At, compile_problem, objective_stacks

    compiled = compile_problem(problem)
    y_scaled = y * compiled.row_scale
    slack = [a - c for a, c in zip(apply_At(compiled, y_scaled), objective_stacks(compiled))]
    return min(
        float(np.linalg.eigvalsh(0.5 * (s + s.transpose(0, 2, 1)))[:, 0].min())
        for s in slack
        if s.shape[0]
    )


def _validated_probs(table: CondProbTable, expect_inputs: int) -> np.ndarray:
    probs = np.asarray(table.probs, dtype=float)
    if probs.shape[0] != expect_inputs:
        raise InvalidParametersError(
            f"table has {probs.shape[0]} inputs but the embedding has {expect_inputs}"
        )
    worst = float(np.abs(probs.sum(axis=1) - 1.0).max())
    if worst > 1e-12:
        raise InvalidParametersError(f"table rows deviate from 1 by {worst:.3e}")
    return probs


def _validated_weights(input_weights, I: int) -> np.ndarray:
    if input_weights is None:
        return np.full(I, 1.0 / I)
    w = np.asarray(input_weights, dtype=float)
    if w.shape != (I,) or (w < 0).any():
        raise InvalidParametersError("input weights must be a nonnegative length-I vector")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise InvalidParametersError("input weights must sum to 1")
    return w


@dataclass
class CertificationResult:
    """Certified guessing-probability bound and the entropy it implies."""

    p_guess_primal: float
    p_guess_upper: float
    h_min_lower: float
    strategy_count: int
    status: str
    gap: float
    iterations: int
    lift_shift: float
    data_dual_norm: float = 0.0
    inputs: dict = field(default_factory=dict)
    problem: SdpProblem | None = field(default=None, repr=False)
    solution: SdpSolution | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "p_guess_primal": self.p_guess_primal,
            "p_guess_upper": self.p_guess_upper,
            "h_min_lower": self.h_min_lower,
            "strategies": self.strategy_count,
            "status": self.status,
            "gap": self.gap,
            "iterations": self.iterations,
            "lift_shift": self.lift_shift,
            "inputs": self.inputs,
        }


def certify_min_entropy(
    table: CondProbTable,
    *,
    group: StateGroup | None = None,
    mu: float | None = None,
    delta: float | None = None,
    input_weights=None,
    tol: float = 1e-6,
    max_iter: int = 100,
    strategy_limit: int = STRATEGY_LIMIT,
    keep_problem: bool = False,
) -> CertificationResult:
    """End-to-end certification: overlaps -> embedding -> SDP -> dual bound.

    Provide either a state group plus mean photon number, or an explicit
    overlap bound `delta` applied to every state pair.  The returned
    h_min_lower is -log2 of a certified upper bound on the guessing
    probability and remains valid (just loose) when the solver stops early.
    """
    I = table.n_inputs
    if group is not None:
        if mu is None:
            raise InvalidParametersError("a state group requires the mean photon number")
        if tuple(group.members) != tuple(table.inputs):
            raise InvalidParametersError("table inputs do not match the group members")
        gram = gram_matrix(group, mu)
        delta_echo = None
    elif delta is not None:
        gram = constant_gram(I, delta)
        delta_echo = float(delta)
    else:
        raise InvalidParametersError("need either group+mu or an explicit delta")

    embedding = embed_states(gram)
    probs = _validated_probs(table, I)
    weights = _validated_weights(input_weights, I)
    B = probs.shape[1]
    strategies = enumerate_strategies(I, B, strategy_limit)
    reductions = _zero_outcome_reductions(embedding.vectors, probs)
    problem, info = _build_guess_sdp(embedding.vectors, probs, weights, strategies, reductions)

    solution = solve(problem, tol=tol, max_iter=max_iter)
    if solution.status == "infeasible":
        raise InfeasibleTableError(
            "statistics are not reproducible by any model with the stated overlaps"
        )

    # structural dual lift: shift the slack spectrum into the PSD cone
    lam_min = _min_slack_eig(problem, solution.dual)
    shift = max(0.0, -lam_min)
    lifted = solution.dual.copy()
    lifted[info.diag_indices] += shift
    lifted[info.norm_index] += I * shift
    raw_bound = float(problem.rhs @ lifted)

    lam2 = _min_slack_eig(problem, lifted)
    if lam2 < -1e-9:
        raise UncertifiedError(f"lifted dual slack still has eigenvalue {lam2:.3e}")

    n_local = info.group_size * info.n_strategies
    data_dual_norm = float(np.abs(lifted[n_local:info.norm_index]).sum())
    p_upper = min(raw_bound, 1.0)  # a guessing probability never exceeds 1
    if p_upper <= 0.0:
        raise UncertifiedError(f"nonsensical certified bound {raw_bound:.3e}")
    p_primal = min(max(solution.primal_value, 0.0), p_upper)
    h_min = max(0.0, -math.log2(p_upper))

    result = CertificationResult(
        p_guess_primal=p_primal,
        p_guess_upper=p_upper,
        h_min_lower=h_min,
        strategy_count=int(strategies.shape[0]),
        status=solution.status,
        gap=solution.gap,
        iterations=solution.iterations,
        lift_shift=shift,
        data_dual_norm=data_dual_norm,
        inputs={
            "group": group.to_json() if group is not None else None,
            "mu": None if mu is None else float(mu),
            "delta": delta_echo,
            "weights": weights.tolist(),
            "table_digest": table.digest(),
            "outcomes": list(table.outcomes),
        },
    )
    if keep_problem:
        result.problem = problem
        result.solution = solution
    return result
