"""Independent validation machinery.

Nothing here shares code with the paths it checks: the attack search uses a
finite measurement dictionary plus a linear program, the certificate check
reuses only problem data, and the pattern-distribution oracle re-derives
the detector chain rule by explicit recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .combinatorics import _coerce_bits
from .detector import CondProbTable, DetectorParams, steady_state_click_prob
from .errors import (
    DimensionLimitError,
    NoFeasibleAttackError,
    UnsupportedDimensionError,
)
from .sdp import SdpProblem, SdpSolution, check_feasibility

LP_TABLE_TOL = 1e-6  # default statistics-reproduction band


@dataclass
class OracleReport:
    """Outcome of a brute-force lower-bound search against an SDP value."""

    lower_bound: float
    sdp_value: float | None
    margin: float | None
    verdict: str  # consistent | violation | unchecked
    grid_resolution: int
    lp_count: int
    tolerance: float = 1e-6

    def to_json(self) -> dict:
        return {
            "lower_bound": self.lower_bound,
            "sdp_value": self.sdp_value,
            "margin": self.margin,
            "verdict": self.verdict,
            "grid_resolution": self.grid_resolution,
            "lp_count": self.lp_count,
            "tolerance": self.tolerance,
        }


def _attack_angles(vectors: np.ndarray, grid_resolution: int) -> np.ndarray:
    """Angle grid on [0, pi) plus the states' own and orthogonal directions.

    The exact special angles make unambiguous-discrimination attacks (whose
    effects must annihilate one state exactly) representable on the grid.
    """
    base = np.pi * np.arange(grid_resolution) / grid_resolution
    special = []
    for v in vectors:
        phi = math.atan2(v[1], v[0]) % math.pi
        special.extend([phi, (phi + math.pi / 2) % math.pi])
    return np.unique(np.concatenate([base, np.array(special)]))


_SLACK_PENALTY = 1e4


def _solve_restricted_lp(thetas, vectors, probs, weights, strategies,
                         band=LP_TABLE_TOL):
    """Attack LP on a working angle set, with penalized band slacks.

    Slack variables keep coarse working sets feasible; a reported attack is
    only trusted once the total slack vanishes.  Returns
    (gain value, total slack, eq duals, ub duals).
    """
    from scipy import sparse

    I, B = probs.shape
    S = strategies.shape[0]
    G = thetas.size
    ct, st = np.cos(thetas), np.sin(thetas)
    q = (vectors[:, 0:1] * ct[None, :] + vectors[:, 1:2] * st[None, :]) ** 2
    comp = np.stack([ct * ct, st * st, ct * st])  # (3, G): xx, yy, xy

    nw = S * B * G
    n_ub = 2 * I * B
    n_cols = nw + S + n_ub
    rows_eq, cols_eq, vals_eq = [], [], []
    for s in range(S):
        for k in range(3):
            r = 3 * s + k
            for b in range(B):
                base = (s * B + b) * G
                rows_eq.append(np.full(G, r))
                cols_eq.append(base + np.arange(G))
                vals_eq.append(comp[k])
            rows_eq.append(np.array([r]))
            cols_eq.append(np.array([nw + s]))
            vals_eq.append(np.array([-1.0 if k < 2 else 0.0]))
    rows_eq.append(np.full(S, 3 * S))
    cols_eq.append(nw + np.arange(S))
    vals_eq.append(np.ones(S))
    A_eq = sparse.coo_matrix(
        (np.concatenate(vals_eq), (np.concatenate(rows_eq), np.concatenate(cols_eq))),
        shape=(3 * S + 1, n_cols),
    ).tocsc()
    b_eq = np.zeros(3 * S + 1)
    b_eq[-1] = 1.0

    rows_ub, cols_ub, vals_ub = [], [], []
    for x in range(I):
        for b in range(B):
            r = x * B + b
            for s in range(S):
                base = (s * B + b) * G
                rows_ub.append(np.full(G, r))
                cols_ub.append(base + np.arange(G))
                vals_ub.append(q[x])
    T = sparse.coo_matrix(
        (np.concatenate(vals_ub), (np.concatenate(rows_ub), np.concatenate(cols_ub))),
        shape=(I * B, n_cols),
    )
    A_ub = sparse.vstack(
        [T, -T]
    ).tolil()
    for r in range(n_ub):  # one slack per band row
        A_ub[r, nw + S + r] = -1.0
    A_ub = A_ub.tocsc()
    target = probs.reshape(I * B)
    b_ub = np.concatenate([target + band, -(target - band)])

    gain = np.zeros(n_cols)
    for s in range(S):
        for x in range(I):
            b = strategies[s, x]
            base = (s * B + b) * G
            gain[base : base + G] += weights[x] * q[x]
    cost = -gain
    cost[nw + S :] = _SLACK_PENALTY

    res = linprog(
        cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
        bounds=(0.0, None), method="highs",
    )
    if not res.success:
        return None, None, None, None
    value = float(gain[:nw] @ res.x[:nw])
    slack = float(res.x[nw + S :].sum())
    return value, slack, res.eqlin.marginals, res.ineqlin.marginals


def grid_lp_oracle(
    embedding,
    table: CondProbTable,
    grid_resolution: int = 10_000,
    weights=None,
    sdp_value: float | None = None,
    tolerance: float = 1e-6,
    band_sensitivity: float = 0.0,
    table_tol: float = LP_TABLE_TOL,
) -> OracleReport:
    """Exhaustive attack search for two-input instances.

    Every PSD effect on the real plane is a nonnegative combination of the
    rank-one projectors P(theta); restricting theta to a grid, each
    strategy's sub-measurement is modeled as such a combination, with
    completeness (effects of one strategy summing to a multiple of the
    identity) imposed exactly and the observed table reproduced within
    `LP_TABLE_TOL`.  The linear program maximizes the guess objective;
    every feasible point is an explicit adversarial model, so its optimum
    is a true lower bound on the guessing probability.

    The full-grid LP is solved by column generation: start from a coarse
    working subset (always containing the states' own and orthogonal
    angles), then repeatedly add grid angles whose reduced cost shows they
    could improve the attack, until none remain.  Intermediate values are
    already valid lower bounds; the final one is the full-grid optimum.
    """
    vectors = np.asarray(getattr(embedding, "vectors", embedding), dtype=float)
    I = vectors.shape[0]
    if I != 2 or vectors.shape[1] != 2:
        raise UnsupportedDimensionError(
            f"grid oracle supports exactly two inputs in the plane, got shape {vectors.shape}"
        )
    B = table.n_outcomes
    if B > 4:
        raise UnsupportedDimensionError(f"grid oracle limited to at most 4 outcomes, got {B}")
    if weights is None:
        weights = np.full(I, 1.0 / I)
    else:
        weights = np.asarray(weights, dtype=float)
    probs = np.asarray(table.probs, dtype=float)

    full = _attack_angles(vectors, grid_resolution)
    Gf = full.size
    ctf, stf = np.cos(full), np.sin(full)
    qf = (vectors[:, 0:1] * ctf[None, :] + vectors[:, 1:2] * stf[None, :]) ** 2
    compf = np.stack([ctf * ctf, stf * stf, ctf * stf])

    strategies = np.stack(
        [np.repeat(np.arange(B), B), np.tile(np.arange(B), B)], axis=1
    )
    S = strategies.shape[0]
    gain = np.zeros((S, B, Gf))  # objective coefficient of effect (s, b, theta)
    for s in range(S):
        for x in range(I):
            gain[s, strategies[s, x]] += weights[x] * qf[x]

    stride = max(1, Gf // 512)
    active = np.zeros(Gf, dtype=bool)
    active[::stride] = True
    active[np.isin(full, _attack_angles(vectors, 1))] = True  # the special angles

    value = slack = None
    prev_value = -np.inf
    lp_count = 0
    for _ in range(12):
        idx = np.flatnonzero(active)
        value, slack, lam, mu_ub = _solve_restricted_lp(
            full[idx], vectors, probs, weights, strategies, band=table_tol
        )
        lp_count += 1
        if value is None:
            raise NoFeasibleAttackError(
                "attack search LP failed on the working angle set"
            )
        if slack <= 1e-10 and value - prev_value < 1e-9 and lp_count > 1:
            break
        prev_value = value
        # reduced costs over the full grid (minimize form: c = -gain)
        lam_comp = lam[: 3 * S].reshape(S, 3)
        band = np.stack([mu_ub[: I * B].reshape(I, B), mu_ub[I * B :].reshape(I, B)])
        rc = -gain.copy()
        rc -= np.einsum("sk,kg->sg", lam_comp, compf)[:, None, :]
        rc -= np.einsum("xb,xg->bg", band[0] - band[1], qf)[None, :, :]
        rc_min = rc.min(axis=(0, 1))
        violated = np.flatnonzero((rc_min < -1e-7) & ~active)
        if violated.size == 0:
            break
        worst = violated[np.argsort(rc_min[violated])[:300]]
        active[worst] = True

    if slack is None or slack > 1e-10:
        raise NoFeasibleAttackError(
            f"no attack on the measurement grid reproduces the table "
            f"(residual band violation {slack})"
        )
    lower = float(value)
    if sdp_value is None:
        return OracleReport(lower, None, None, "unchecked", grid_resolution, lp_count, tolerance)
    # the attack reproduces a table within the band; the certified dual bounds
    # that perturbed table's optimum by sdp_value + band * sum|data duals|
    allowance = tolerance + table_tol * band_sensitivity
    margin = sdp_value - lower
    verdict = "violation" if lower > sdp_value + allowance else "consistent"
    return OracleReport(lower, sdp_value, margin, verdict, grid_resolution, lp_count, tolerance)


def verify_certificate(problem: SdpProblem, solution: SdpSolution):
    """Pass iff the dual point is feasible within 1e-8 and weak duality holds."""
    report = check_feasibility(problem, solution)
    weak_duality = solution.dual_value >= solution.primal_value - 1e-12
    passed = bool(report.dual_ok and weak_duality)
    return passed, {
        "dual_ok": report.dual_ok,
        "weak_duality": weak_duality,
        "feasibility": report.to_json(),
    }


def pattern_prob_oracle(
    state,
    mu: float,
    params: DetectorParams,
    boundary: str = "stationary",
) -> dict[str, float]:
    """Full click-pattern distribution by direct recursion over bins.

    Independent of the detector module's vectorized chain rule: conditional
    click probabilities are recomputed inline and the pattern tree expanded
    recursively.
    """
    bits = _coerce_bits(state)
    n = len(bits)
    if n > 12:
        raise DimensionLimitError(f"oracle recursion limited to 12 bins, got {n}")

    def click_given(prev: int, t: int) -> float:
        p = params.epsilon
        if bits[t] == 1:
            p += 1.0 - math.exp(-params.eta_det * params.loss * mu)
        if prev:
            p += params.p_ap
        return min(1.0, p)

    def expand(t: int, prev: int) -> dict[str, float]:
        if t == n:
            return {"": 1.0}
        pc = click_given(prev, t)
        out: dict[str, float] = {}
        for bit, pb in ((1, pc), (0, 1.0 - pc)):
            if pb == 0.0:
                continue
            for suffix, ps in expand(t + 1, bit).items():
                out[str(bit) + suffix] = pb * ps
        return out

    if boundary == "cold":
        start = {0: 1.0}
    elif boundary == "stationary":
        p_prev = steady_state_click_prob(mu, params)
        start = {0: 1.0 - p_prev, 1: p_prev}
    else:
        raise DimensionLimitError(f"unknown boundary {boundary!r}")

    dist: dict[str, float] = {}
    for prev, w in start.items():
        if w == 0.0:
            continue
        for pattern, p in expand(0, prev).items():
            dist[pattern] = dist.get(pattern, 0.0) + w * p
    # report every pattern, including unreachable ones
    full = {format(i, f"0{n}b"): 0.0 for i in range(2**n)}
    full.update(dist)
    return full
