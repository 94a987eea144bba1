"""Single-photon detection model for time-bin frames.

Click probabilities combine detector efficiency, channel loss, a per-bin
noise-click probability (dark counts plus background) and first-order
afterpulsing: a detection in bin t-1 adds p_ap to the click probability in
bin t.  Frame boundaries are handled either "cold" (no click before bin 0)
or "stationary" (the bin before the frame clicked with the steady-state
probability, marginalized).

Exact conditional tables are computed by the chain rule over all 2^n click
patterns; a seeded Monte-Carlo sampler provides the stochastic counterpart.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._backend import backend
from .combinatorics import ClickPattern, Codeword, StateGroup, _coerce_bits
from .errors import (
    DimensionLimitError,
    InvalidParametersError,
    LengthMismatchError,
    PartialGroupingError,
)

PATTERN_BIN_LIMIT = 20
ROW_SUM_TOL = 1e-12

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is an install dependency
    njit = None


class ClampWarning(UserWarning):
    """A click probability left [0, 1] and was clamped."""


@dataclass(frozen=True)
class DetectorParams:
    """Detector and channel parameters.

    eta_det: detection efficiency in [0, 1]
    loss: channel transmission in [0, 1] (1 = lossless)
    epsilon: per-bin noise click probability (dark counts + background)
    p_ap: afterpulse probability, strictly below 1
    f: repetition rate in Hz
    """

    eta_det: float = 1.0
    loss: float = 1.0
    epsilon: float = 0.0
    p_ap: float = 0.0
    f: float = 31.25e6

    def __post_init__(self):
        if not 0.0 <= self.eta_det <= 1.0:
            raise InvalidParametersError(f"eta_det must be in [0,1], got {self.eta_det}")
        if not 0.0 <= self.loss <= 1.0:
            raise InvalidParametersError(f"loss must be in [0,1], got {self.loss}")
        if self.epsilon < 0.0:
            raise InvalidParametersError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0.0 <= self.p_ap < 1.0:
            raise InvalidParametersError(f"p_ap must be in [0,1), got {self.p_ap}")
        if self.f <= 0.0:
            raise InvalidParametersError(f"repetition rate must be > 0, got {self.f}")

    def to_json(self) -> dict:
        return {
            "eta_det": self.eta_det,
            "loss": self.loss,
            "epsilon": self.epsilon,
            "p_ap": self.p_ap,
            "f": self.f,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DetectorParams":
        return cls(**{k: float(v) for k, v in obj.items()})


def epsilon_from_dcr(dcr_hz: float, f_hz: float) -> float:
    """Per-bin noise click probability from a dark count rate in counts/s."""
    if dcr_hz < 0 or f_hz <= 0:
        raise InvalidParametersError("need dcr >= 0 and f > 0")
    return dcr_hz / f_hz


def base_click_prob(has_pulse: bool, mu: float, params: DetectorParams) -> float:
    """Click probability of a single bin absent afterpulsing.

    1 - exp(-eta*L*mu) + epsilon for a pulsed bin, epsilon for vacuum;
    clamped to [0, 1] with a ClampWarning when clamping occurs.
    """
    if mu < 0:
        raise InvalidParametersError(f"mean photon number must be >= 0, got {mu}")
    p = params.epsilon
    if has_pulse:
        p += 1.0 - math.exp(-params.eta_det * params.loss * mu)
    if p > 1.0:
        warnings.warn(f"click probability {p:.6g} clamped to 1", ClampWarning)
        p = 1.0
    return p


def steady_state_click_prob(mu: float, params: DetectorParams) -> float:
    """Steady-state click probability under continuous pulsed driving.

    Closed form of the one-bin-memory recursion
    P_t = base + p_ap * P_{t-1}: base / (1 - p_ap).
    """
    base = params.epsilon
    if mu < 0:
        raise InvalidParametersError(f"mean photon number must be >= 0, got {mu}")
    base += 1.0 - math.exp(-params.eta_det * params.loss * mu)
    p = base / (1.0 - params.p_ap)
    if p > 1.0:
        raise InvalidParametersError(
            f"steady-state click probability {p:.6g} exceeds 1; "
            "p_ap and/or epsilon too large for this mu"
        )
    return p


def _bin_click_probs(state_bits, mu, params):
    """(no-afterpulse, with-afterpulse) click probability per bin."""
    base = np.array([base_click_prob(b == 1, mu, params) for b in state_bits])
    boosted = np.minimum(1.0, base + params.p_ap)
    return base, boosted


def _initial_click_prob(mu: float, params: DetectorParams, boundary: str) -> float:
    if boundary == "cold":
        return 0.0
    if boundary == "stationary":
        return steady_state_click_prob(mu, params)
    raise InvalidParametersError(f"boundary must be 'cold' or 'stationary', got {boundary!r}")


def pattern_prob(state, pattern, mu: float, params: DetectorParams,
                 boundary: str = "stationary") -> float:
    """Probability of one click pattern given the transmitted state.

    Chain rule over bins: the click probability at bin t is the base
    probability of that bin's content plus p_ap if bin t-1 clicked,
    clamped at 1.  Bin 0 conditions on the frame boundary.
    """
    sbits = _coerce_bits(state)
    pbits = _coerce_bits(pattern)
    if len(sbits) != len(pbits):
        raise LengthMismatchError(f"state length {len(sbits)} != pattern length {len(pbits)}")
    base, boosted = _bin_click_probs(sbits, mu, params)
    p_init = _initial_click_prob(mu, params, boundary)

    def chain(prev0: int) -> float:
        prob = 1.0
        prev = prev0
        for t, bit in enumerate(pbits):
            pc = boosted[t] if prev else base[t]
            prob *= pc if bit else 1.0 - pc
            prev = bit
        return prob

    if p_init == 0.0:
        return chain(0)
    return (1.0 - p_init) * chain(0) + p_init * chain(1)


def _pattern_distribution(state_bits, mu, params, boundary) -> np.ndarray:
    """Probabilities of all 2^n patterns; index = pattern as MSB-first integer."""
    n = len(state_bits)
    base, boosted = _bin_click_probs(state_bits, mu, params)
    p_init = _initial_click_prob(mu, params, boundary)

    def chain(prev0: int) -> np.ndarray:
        p = np.ones(1)
        for t in range(n):
            if t == 0:
                pc = np.full(1, boosted[0] if prev0 else base[0])
            else:
                prev = np.arange(p.size) & 1
                pc = np.where(prev == 1, boosted[t], base[t])
            nxt = np.empty(2 * p.size)
            nxt[0::2] = p * (1.0 - pc)
            nxt[1::2] = p * pc
            p = nxt
        return p

    if p_init == 0.0:
        return chain(0)
    return (1.0 - p_init) * chain(0) + p_init * chain(1)


@dataclass(frozen=True)
class OutcomeGrouping:
    """Total surjective map from raw click-pattern labels to group labels."""

    name: str
    mapping: dict[str, str] = field(hash=False)

    def __post_init__(self):
        if not self.mapping:
            raise InvalidParametersError("empty grouping")

    def labels(self) -> list[str]:
        out: list[str] = []
        for v in self.mapping.values():
            if v not in out:
                out.append(v)
        return out

    def apply(self, raw_label: str) -> str:
        try:
            return self.mapping[raw_label]
        except KeyError:
            raise PartialGroupingError(f"outcome {raw_label!r} not covered by grouping")

    def to_json(self) -> dict:
        return {"name": self.name, "mapping": dict(self.mapping)}


def identity_grouping(n: int) -> OutcomeGrouping:
    labels = [format(i, f"0{n}b") for i in range(2**n)]
    return OutcomeGrouping("raw", {l: l for l in labels})


def noclick_grouping(n: int) -> OutcomeGrouping:
    """Binary grouping: E0 for the all-zero pattern, E1 for anything else."""
    mapping = {}
    for i in range(2**n):
        label = format(i, f"0{n}b")
        mapping[label] = "E0" if i == 0 else "E1"
    return OutcomeGrouping("no-click", mapping)


def ideal_set_grouping(group: StateGroup, other_label: str = "other") -> OutcomeGrouping:
    """Keep the group's noiseless patterns distinct; merge everything else.

    Patterns outside the ideal set only occur through noise or afterpulsing
    and carry little probability, so a single residual label keeps the
    outcome alphabet at its ideal size plus one.
    """
    from .combinatorics import ideal_outcome_set

    n = group.spec.n
    ideal = {str(p) for p in ideal_outcome_set(group)}
    mapping = {}
    for i in range(2**n):
        label = format(i, f"0{n}b")
        mapping[label] = label if label in ideal else other_label
    return OutcomeGrouping("ideal", mapping)


@dataclass(frozen=True)
class CondProbTable:
    """Conditional outcome probabilities p(b | x) with labeled rows/columns."""

    inputs: tuple[Codeword, ...]
    outcomes: tuple[str, ...]
    probs: np.ndarray
    mu: float | None = None
    params: DetectorParams | None = None
    grouping: OutcomeGrouping | None = None
    boundary: str | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        if p.ndim != 2 or p.shape != (len(self.inputs), len(self.outcomes)):
            raise InvalidParametersError(
                f"probs shape {p.shape} does not match {len(self.inputs)} inputs "
                f"x {len(self.outcomes)} outcomes"
            )
        if len(set(self.outcomes)) != len(self.outcomes):
            raise InvalidParametersError("outcome labels must be unique")
        if p.min() < -1e-15 or p.max() > 1.0 + 1e-15:
            raise InvalidParametersError("probabilities must lie in [0, 1]")
        rows = p.sum(axis=1)
        worst = float(np.abs(rows - 1.0).max())
        if worst > ROW_SUM_TOL:
            raise InvalidParametersError(
                f"row sums deviate from 1 by {worst:.3e} (> {ROW_SUM_TOL:.0e})"
            )

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)

    def to_json(self) -> dict:
        obj = {
            "inputs": [str(c) for c in self.inputs],
            "outcomes": list(self.outcomes),
            "probs": self.probs.tolist(),
            "mu": self.mu,
            "params": self.params.to_json() if self.params else None,
        }
        if self.grouping is not None:
            obj["grouping"] = self.grouping.to_json()
        if self.boundary is not None:
            obj["boundary"] = self.boundary
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CondProbTable":
        grouping = None
        if obj.get("grouping"):
            grouping = OutcomeGrouping(obj["grouping"]["name"], obj["grouping"]["mapping"])
        params = DetectorParams.from_json(obj["params"]) if obj.get("params") else None
        return cls(
            inputs=tuple(Codeword(_coerce_bits(s)) for s in obj["inputs"]),
            outcomes=tuple(obj["outcomes"]),
            probs=np.array(obj["probs"], dtype=float),
            mu=obj.get("mu"),
            params=params,
            grouping=grouping,
            boundary=obj.get("boundary"),
        )

    def digest(self) -> str:
        payload = json.dumps(
            {
                "inputs": [str(c) for c in self.inputs],
                "outcomes": list(self.outcomes),
                "probs": [[repr(v) for v in row] for row in self.probs.tolist()],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_csv_rows(self):
        for i, cw in enumerate(self.inputs):
            for j, out in enumerate(self.outcomes):
                yield str(cw), out, repr(float(self.probs[i, j]))


def cond_prob_table(
    group: StateGroup,
    mu: float,
    params: DetectorParams,
    grouping: OutcomeGrouping | None = None,
    boundary: str = "stationary",
) -> CondProbTable:
    """Exact conditional probability table for a state group.

    Rows run over group members, columns over all 2^n patterns or over the
    grouped labels when a grouping is supplied.  Computed by the chain rule,
    no sampling involved.
    """
    n = group.spec.n
    if n > PATTERN_BIN_LIMIT:
        raise DimensionLimitError(
            f"exact table needs 2^{n} outcomes; limited to n <= {PATTERN_BIN_LIMIT}"
        )
    rows = [
        _pattern_distribution(cw.bits, mu, params, boundary) for cw in group.members
    ]
    labels = tuple(format(i, f"0{n}b") for i in range(2**n))
    table = CondProbTable(
        inputs=group.members,
        outcomes=labels,
        probs=np.vstack(rows),
        mu=mu,
        params=params,
        boundary=boundary,
    )
    if grouping is not None:
        table = group_outcomes(table, grouping)
    return table


def group_outcomes(table: CondProbTable, grouping: OutcomeGrouping) -> CondProbTable:
    """Merge outcome columns according to a grouping; row sums are preserved."""
    merged_labels: list[str] = []
    index: dict[str, int] = {}
    cols: list[list[int]] = []
    for j, label in enumerate(table.outcomes):
        g = grouping.apply(label)
        if g not in index:
            index[g] = len(merged_labels)
            merged_labels.append(g)
            cols.append([])
        cols[index[g]].append(j)
    probs = np.column_stack([table.probs[:, c].sum(axis=1) for c in cols])
    return CondProbTable(
        inputs=table.inputs,
        outcomes=tuple(merged_labels),
        probs=probs,
        mu=table.mu,
        params=table.params,
        grouping=grouping,
        boundary=table.boundary,
    )


def _sample_numpy(base, boosted, p_init, uniforms, init_uniforms) -> np.ndarray:
    count, n = uniforms.shape
    out = np.zeros((count, n), dtype=np.uint8)
    prev = (init_uniforms < p_init).astype(np.uint8)
    for t in range(n):
        pc = np.where(prev == 1, boosted[t], base[t])
        out[:, t] = uniforms[:, t] < pc
        prev = out[:, t]
    return out


if njit is not None:

    @njit(cache=True)
    def _sample_numba(base, boosted, p_init, uniforms, init_uniforms):  # pragma: no cover
        count, n = uniforms.shape
        out = np.zeros((count, n), dtype=np.uint8)
        for i in range(count):
            prev = 1 if init_uniforms[i] < p_init else 0
            for t in range(n):
                pc = boosted[t] if prev == 1 else base[t]
                bit = 1 if uniforms[i, t] < pc else 0
                out[i, t] = bit
                prev = bit
        return out

else:  # pragma: no cover
    _sample_numba = None


def sample_patterns(
    state,
    mu: float,
    params: DetectorParams,
    count: int,
    seed: int,
    boundary: str = "stationary",
) -> np.ndarray:
    """IID draws from the click-pattern distribution, one row per frame.

    Deterministic given the seed; the numba and numpy backends consume the
    same uniform stream and return identical samples.
    """
    if count < 1:
        raise InvalidParametersError(f"count must be >= 1, got {count}")
    sbits = _coerce_bits(state)
    base, boosted = _bin_click_probs(sbits, mu, params)
    p_init = _initial_click_prob(mu, params, boundary)
    rng = np.random.default_rng(seed)
    init_uniforms = rng.random(count)
    uniforms = rng.random((count, len(sbits)))
    if backend() == "numba" and _sample_numba is not None:
        return _sample_numba(base, boosted, p_init, uniforms, init_uniforms)
    return _sample_numpy(base, boosted, p_init, uniforms, init_uniforms)


def patterns_to_strings(samples: np.ndarray) -> list[str]:
    return ["".join(map(str, row)) for row in samples.astype(int)]
