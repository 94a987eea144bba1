"""Generation rate, mean-photon-number optimization, and parameter sweeps.

The certified random-bit rate of an n-bin frame clocked at f Hz with a
C-state input alphabet is R = (f/n) * C * h, h being the certified
min-entropy per transmission.  Normalized variants are reported alongside:
R/f (bits per clock cycle) and h/n (bits per bin), the latter matching the
dimensionless rate figures usually quoted for time-bin protocols.

Sweeps evaluate the full certification pipeline over a grid and emit
plot-ready rows; per-point failures are recorded in-row and never abort
the sweep.
"""

from __future__ import annotations

import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._backend import thread_cap
from .combinatorics import (
    StateGroup,
    construct_lower_bound_code,
    enumerate_states,
    ideal_outcome_set,
)
from .detector import (
    CondProbTable,
    DetectorParams,
    OutcomeGrouping,
    cond_prob_table,
    ideal_set_grouping,
)
from .certification import CertificationResult, certify_min_entropy
from .errors import InvalidParametersError, OptimizationAbortedError, QcertError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

CSV_HEADER = "axis,value,h_min_lower,p_guess_upper,mu,gap,status,runtime_s"


@dataclass
class RateResult:
    """Certified bits per second plus the operating point that achieves it."""

    R: float
    mu_optimal: float | None
    h_min_at_opt: float
    per_symbol: float  # R / f: certified bits per clock cycle
    per_bin: float  # h / n: certified bits per time bin
    inputs: dict = field(default_factory=dict)
    grid_log: list = field(default_factory=list)  # (mu, h) pairs from the search

    def to_json(self) -> dict:
        return {
            "R_bits_per_s": self.R,
            "mu_optimal": self.mu_optimal,
            "h_min_at_opt": self.h_min_at_opt,
            "per_symbol": self.per_symbol,
            "per_bin": self.per_bin,
            "inputs": self.inputs,
            "grid_log": self.grid_log,
        }


@dataclass
class SweepRow:
    axis: str
    value: float
    h_min_lower: float
    p_guess_upper: float
    mu: float
    gap: float
    status: str
    runtime_s: float

    def csv_line(self) -> str:
        def num(v):
            return "nan" if v != v else repr(float(v))

        return (
            f"{self.axis},{num(self.value)},{num(self.h_min_lower)},"
            f"{num(self.p_guess_upper)},{num(self.mu)},{num(self.gap)},"
            f"{self.status},{self.runtime_s:.3f}"
        )


def generation_rate(f: float, n: int, cardinality: int, h_min: float,
                    mu_optimal: float | None = None) -> RateResult:
    """R = (f/n) * cardinality * h_min, with normalized variants."""
    if f <= 0 or n <= 0 or cardinality <= 0 or h_min < 0:
        raise InvalidParametersError("rate arguments must be positive (h_min >= 0)")
    R = (f / n) * cardinality * h_min
    return RateResult(
        R=R,
        mu_optimal=mu_optimal,
        h_min_at_opt=h_min,
        per_symbol=R / f,
        per_bin=h_min / n,
        inputs={"f": f, "n": n, "cardinality": cardinality},
    )


def _certify_at_mu(
    group: StateGroup,
    mu: float,
    params: DetectorParams,
    grouping: OutcomeGrouping | None,
    boundary: str,
    overlap: str,
    tol: float,
    max_iter: int,
) -> CertificationResult:
    table = cond_prob_table(group, mu, params, grouping=grouping, boundary=boundary)
    if overlap == "source":
        return certify_min_entropy(table, group=group, mu=mu, tol=tol, max_iter=max_iter)
    if overlap == "trusted-loss":
        # channel and detector losses treated as trusted: overlaps taken at
        # the detected amplitude rather than at the source
        spread = group.spec.m - group.spec.s
        delta = math.exp(-params.eta_det * params.loss * mu * spread)
        return certify_min_entropy(table, delta=delta, tol=tol, max_iter=max_iter)
    raise InvalidParametersError(f"unknown overlap mode {overlap!r}")


def optimize_mu(
    group: StateGroup,
    params: DetectorParams,
    mu_range: tuple[float, float],
    grid: int = 9,
    refine_tol: float = 1e-3,
    *,
    grouping: OutcomeGrouping | None = None,
    boundary: str = "stationary",
    overlap: str = "source",
    tol: float = 1e-6,
    max_iter: int = 100,
) -> RateResult:
    """Coarse grid over mu followed by golden-section refinement.

    Heuristic optimum (assumes a unimodal entropy curve); the coarse grid is
    kept in the result for audit.  A certification failure at any point
    aborts with the rows evaluated so far attached.
    """
    lo, hi = float(mu_range[0]), float(mu_range[1])
    if lo <= 0 or hi < lo:
        raise InvalidParametersError(f"need 0 < mu_lo <= mu_hi, got {mu_range}")
    log: list[tuple[float, float]] = []

    def evaluate(mu: float) -> float:
        try:
            res = _certify_at_mu(group, mu, params, grouping, boundary, overlap, tol, max_iter)
        except QcertError as exc:
            raise OptimizationAbortedError(
                f"certification failed at mu={mu:.6g}: {exc}", partial=log
            ) from exc
        log.append((mu, res.h_min_lower))
        return res.h_min_lower

    if hi == lo:
        h = evaluate(lo)
        best_mu = lo
    else:
        if grid < 3:
            raise InvalidParametersError("grid must have at least 3 points")
        mus = np.linspace(lo, hi, grid)
        values = [evaluate(m) for m in mus]
        k = int(np.argmax(values))
        a = mus[max(0, k - 1)]
        b = mus[min(grid - 1, k + 1)]
        best_mu, h = float(mus[k]), float(values[k])
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc, fd = evaluate(c), evaluate(d)
        while b - a > refine_tol:
            if fc >= fd:
                b, d, fd = d, c, fc
                c = b - GOLDEN * (b - a)
                fc = evaluate(c)
            else:
                a, c, fc = c, d, fd
                d = a + GOLDEN * (b - a)
                fd = evaluate(d)
        for m, v in ((c, fc), (d, fd)):
            if v > h:
                best_mu, h = float(m), float(v)

    rate = generation_rate(params.f, group.spec.n, group.size, h, mu_optimal=best_mu)
    rate.inputs.update({"params": params.to_json(), "overlap": overlap})
    rate.grid_log = log
    return rate


def _set_one_group(n_inputs: int) -> StateGroup:
    return StateGroup.from_members(enumerate_states(n_inputs, 1))


def _family_group(family: dict) -> StateGroup:
    if "members" in family:
        return StateGroup.from_members(family["members"])
    if "inputs" in family:
        return _set_one_group(int(family["inputs"]))
    return construct_lower_bound_code(int(family["n"]), int(family["m"]), int(family["s"]))


def _family_params(family: dict) -> DetectorParams:
    return DetectorParams(
        eta_det=float(family.get("eta", 1.0)),
        loss=float(family.get("loss", 1.0)),
        epsilon=float(family.get("epsilon", 0.0)),
        p_ap=float(family.get("pap", 0.0)),
        f=float(family.get("f", 31.25e6)),
    )


def _family_grouping(family: dict, group: StateGroup) -> OutcomeGrouping | None:
    kind = family.get("grouping", "ideal")
    if kind == "ideal":
        return ideal_set_grouping(group)
    if kind in ("raw", "none"):
        return None
    from .detector import noclick_grouping

    if kind == "no-click":
        return noclick_grouping(group.spec.n)
    raise InvalidParametersError(f"unknown grouping {kind!r}")


def nested_outcome_grouping(group: StateGroup, n_outcomes: int) -> OutcomeGrouping:
    """Grouping with `n_outcomes` labels: the likeliest-structured ideal
    patterns stay distinct, everything else merges into the last label.

    Groupings for increasing n_outcomes are nested refinements, so certified
    entropy is non-decreasing along the family.
    """
    ideal = [str(p) for p in ideal_outcome_set(group)]
    ideal.sort(key=lambda lab: (lab.count("1"), lab))
    if not 2 <= n_outcomes <= len(ideal) + 1:
        raise InvalidParametersError(
            f"outcome count must lie in [2, {len(ideal) + 1}], got {n_outcomes}"
        )
    keep = ideal[: n_outcomes - 1]
    n = group.spec.n
    mapping = {}
    for i in range(2**n):
        label = format(i, f"0{n}b")
        mapping[label] = label if label in keep else "rest"
    return OutcomeGrouping(f"nested-{n_outcomes}", mapping)


def _sweep_point(axis: str, value: float, family: dict) -> SweepRow:
    t0 = time.perf_counter()
    group = _family_group(family)
    params = _family_params(family)
    boundary = family.get("boundary", "stationary")
    overlap = family.get("overlap", "source")
    tol = float(family.get("tol", 1e-6))
    max_iter = int(family.get("max_iter", 100))
    try:
        if axis == "overlap":
            spread = group.spec.m - group.spec.s
            mu = -math.log(value) / spread
            grouping = _family_grouping(family, group)
            res = _certify_at_mu(group, mu, params, grouping, boundary, overlap, tol, max_iter)
            row = (res.h_min_lower, res.p_guess_upper, mu, res.gap, res.status)
        elif axis == "mu":
            grouping = _family_grouping(family, group)
            res = _certify_at_mu(group, value, params, grouping, boundary, overlap, tol, max_iter)
            row = (res.h_min_lower, res.p_guess_upper, value, res.gap, res.status)
        elif axis == "outcomes":
            grouping = nested_outcome_grouping(group, int(value))
            mu_range = (
                float(family.get("mu_lo", 0.05)),
                float(family.get("mu_hi", 2.0)),
            )
            rate = optimize_mu(
                group, params, mu_range, grid=int(family.get("grid", 7)),
                refine_tol=float(family.get("refine_tol", 1e-3)),
                grouping=grouping, boundary=boundary, overlap=overlap,
                tol=tol, max_iter=max_iter,
            )
            row = (rate.h_min_at_opt, 2.0 ** (-rate.h_min_at_opt), rate.mu_optimal, 0.0, "optimal")
        elif axis == "inputs":
            sub = _set_one_group(int(value))
            delta = float(family["delta"])
            mu = -math.log(delta)
            grouping = ideal_set_grouping(sub)
            table = cond_prob_table(sub, mu, params, grouping=grouping, boundary=boundary)
            res = certify_min_entropy(table, group=sub, mu=mu, tol=tol, max_iter=max_iter)
            row = (res.h_min_lower, res.p_guess_upper, mu, res.gap, res.status)
        else:
            raise InvalidParametersError(f"unknown sweep axis {axis!r}")
    except QcertError as exc:
        return SweepRow(axis, float(value), float("nan"), float("nan"), float("nan"),
                        float("nan"), f"error[{type(exc).__name__}]",
                        time.perf_counter() - t0)
    h, p, mu, gap, status = row
    return SweepRow(axis, float(value), h, p, mu, gap, status, time.perf_counter() - t0)


def sweep(axis: str, family: dict, grid, sink=None, threads: int | None = None) -> list[SweepRow]:
    """One certified row per grid point, emitted in grid order.

    Grid points are independent; with threads > 1 they are evaluated
    concurrently but written in order.  Failed points carry an error status
    and NaN values.
    """
    values = list(grid)
    if not values:
        raise InvalidParametersError("empty sweep grid")
    if threads is None:
        threads = thread_cap()

    out: io.TextIOBase | None = None
    close = False
    if sink is not None:
        if isinstance(sink, (str, bytes)):
            out = open(sink, "w")
            close = True
        else:
            out = sink
        out.write(CSV_HEADER + "\n")

    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(lambda v: _sweep_point(axis, v, family), values))
        else:
            rows = []
            for v in values:
                row = _sweep_point(axis, v, family)
                rows.append(row)
                if out is not None:
                    out.write(row.csv_line() + "\n")
                    out.flush()
        if threads > 1 and out is not None:
            for row in rows:
                out.write(row.csv_line() + "\n")
    finally:
        if close and out is not None:
            out.close()
    return rows
