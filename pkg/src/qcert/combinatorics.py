"""State-set combinatorics for time-bin encodings.

A prepared state places m weak coherent pulses in n time bins and is
identified with a binary codeword of length n and weight m.  Families of
codewords whose members pairwise share exactly s pulsed bins ("coincidence
s") have a single common overlap value exp(-mu*(m-s)) and form the input
alphabets used throughout the rest of the package.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGroupError,
    InvalidParametersError,
    LengthMismatchError,
    NotPsdError,
    SearchLimitError,
)

PSD_TOL = 1e-10
CLIQUE_BIN_LIMIT = 16


def _coerce_bits(value) -> tuple[int, ...]:
    """Accept '1100', (1,1,0,0), Codeword or ClickPattern; return a bit tuple."""
    if isinstance(value, (Codeword, ClickPattern)):
        return value.bits
    if isinstance(value, str):
        if not value or set(value) - {"0", "1"}:
            raise InvalidParametersError(f"not a bit string: {value!r}")
        return tuple(int(c) for c in value)
    bits = tuple(int(b) for b in value)
    if any(b not in (0, 1) for b in bits):
        raise InvalidParametersError(f"bits must be 0/1, got {bits}")
    return bits


@dataclass(frozen=True, order=True)
class Codeword:
    """Binary word of length n >= 2; bit 1 marks a pulsed bin, bin 0 is leftmost.

    Weight must satisfy 1 <= weight < n, i.e. at least one pulse and at
    least one vacuum bin.
    """

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = _coerce_bits(self.bits)
        object.__setattr__(self, "bits", bits)
        if len(bits) < 2:
            raise InvalidParametersError("codeword needs at least two bins")
        w = sum(bits)
        if not 1 <= w < len(bits):
            raise InvalidParametersError(
                f"codeword weight must be in [1, n-1], got weight {w} for n={len(bits)}"
            )

    @property
    def n(self) -> int:
        return len(self.bits)

    @property
    def weight(self) -> int:
        return sum(self.bits)

    def support(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    def __str__(self) -> str:
        return "".join(map(str, self.bits))


@dataclass(frozen=True, order=True)
class ClickPattern:
    """Detection outcome: one bit per time bin, 1 = click. Any weight allowed."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = _coerce_bits(self.bits)
        object.__setattr__(self, "bits", bits)
        if not bits:
            raise InvalidParametersError("empty click pattern")

    @property
    def n(self) -> int:
        return len(self.bits)

    @property
    def weight(self) -> int:
        return sum(self.bits)

    def __str__(self) -> str:
        return "".join(map(str, self.bits))


@dataclass(frozen=True)
class ConfigurationSpec:
    """(n, m, s): n bins, m pulses per state, s coinciding pulses per pair."""

    n: int
    m: int
    s: int

    def __post_init__(self):
        if not (self.n > self.m >= self.s >= 0):
            raise InvalidParametersError(
                f"need n > m >= s >= 0, got n={self.n}, m={self.m}, s={self.s}"
            )


@dataclass(frozen=True)
class StateGroup:
    """Distinct codewords of common length/weight with constant pairwise coincidence."""

    spec: ConfigurationSpec
    members: tuple[Codeword, ...]

    def __post_init__(self):
        members = tuple(
            m if isinstance(m, Codeword) else Codeword(_coerce_bits(m))
            for m in self.members
        )
        object.__setattr__(self, "members", members)
        if not members:
            raise InvalidParametersError("empty state group")
        if len(set(members)) != len(members):
            raise InvalidParametersError("group members must be distinct")
        for cw in members:
            if cw.n != self.spec.n or cw.weight != self.spec.m:
                raise InvalidParametersError(
                    f"member {cw} does not match spec n={self.spec.n}, m={self.spec.m}"
                )
        for a, b in itertools.combinations(members, 2):
            c = coincidence(a, b)
            if c != self.spec.s:
                raise InvalidParametersError(
                    f"pair ({a}, {b}) has coincidence {c}, expected {self.spec.s}"
                )

    @property
    def size(self) -> int:
        return len(self.members)

    @classmethod
    def from_members(cls, members) -> "StateGroup":
        """Build a group from codewords, inferring (n, m, s)."""
        cws = [m if isinstance(m, Codeword) else Codeword(_coerce_bits(m)) for m in members]
        if not cws:
            raise InvalidParametersError("empty member list")
        n, m = cws[0].n, cws[0].weight
        if len(cws) >= 2:
            s = coincidence(cws[0], cws[1])
        else:
            s = 0
        return cls(ConfigurationSpec(n, m, s), tuple(cws))

    def to_json(self) -> dict:
        return {
            "n": self.spec.n,
            "m": self.spec.m,
            "s": self.spec.s,
            "members": [str(m) for m in self.members],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StateGroup":
        spec = ConfigurationSpec(int(obj["n"]), int(obj["m"]), int(obj["s"]))
        return cls(spec, tuple(Codeword(_coerce_bits(m)) for m in obj["members"]))


@dataclass(frozen=True)
class GramMatrix:
    """Real symmetric matrix of pairwise state overlaps; unit diagonal, PSD."""

    entries: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", g)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise InvalidParametersError("Gram matrix must be square")
        if not np.array_equal(g, g.T):
            raise InvalidParametersError("Gram matrix must be exactly symmetric")
        if not np.array_equal(np.diag(g), np.ones(g.shape[0])):
            raise InvalidParametersError("Gram matrix must have unit diagonal")
        if g.min() < 0.0 or g.max() > 1.0:
            raise InvalidParametersError("Gram entries must lie in [0, 1]")
        lam_min = float(np.linalg.eigvalsh(g)[0])
        if lam_min < -PSD_TOL:
            raise NotPsdError(
                f"Gram matrix has eigenvalue {lam_min:.3e} < -{PSD_TOL:.0e}; "
                "group is inconsistent"
            )

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def enumerate_states(n: int, m: int) -> list[Codeword]:
    """All C(n, m) codewords with m pulses in n bins, in lexicographic order.

    Lexicographic on pulse positions: 1100, 1010, 1001, 0110, ... for (4, 2).
    """
    if m < 1 or m >= n:
        raise InvalidParametersError(f"need n > m >= 1, got n={n}, m={m}")
    out = []
    for positions in itertools.combinations(range(n), m):
        bits = [0] * n
        for p in positions:
            bits[p] = 1
        out.append(Codeword(tuple(bits)))
    return out


def coincidence(a, b) -> int:
    """Number of bins where both words carry a pulse."""
    ba, bb = _coerce_bits(a), _coerce_bits(b)
    if len(ba) != len(bb):
        raise LengthMismatchError(f"lengths {len(ba)} and {len(bb)} differ")
    return sum(x & y for x, y in zip(ba, bb))


def hamming_from_s(m: int, s: int) -> int:
    """Hamming distance between two weight-m words with coincidence s: 2(m-s)."""
    if s > m or s < 0:
        raise InvalidParametersError(f"need m >= s >= 0, got m={m}, s={s}")
    return 2 * (m - s)


def subset_count(n: int, m: int) -> int:
    """Number of distinct-coincidence subsets in the (n, m) configuration."""
    if m < 1 or m >= n:
        raise InvalidParametersError(f"need n > m >= 1, got n={n}, m={m}")
    return m if 2 * m - n <= 0 else n - m


def lower_bound_size(n: int, m: int, s: int) -> int:
    """Size of the explicitly constructible constant-coincidence group."""
    _check_nms(n, m, s)
    if n + s - 2 * m < 0:
        return 1
    if 2 * m <= n:
        return (n - s) // (m - s)
    return (2 * m - s) // (m - s)


def _check_nms(n: int, m: int, s: int) -> None:
    if not (n > m >= s >= 0):
        raise InvalidParametersError(f"need n > m >= s >= 0, got ({n}, {m}, {s})")
    if m == s:
        raise DegenerateGroupError(
            f"m = s = {m}: only a single repeated state, no group to construct"
        )


def construct_lower_bound_code(n: int, m: int, s: int) -> StateGroup:
    """Explicit constant-coincidence group of the guaranteed size.

    For 2m <= n the members share s leading pulsed bins and place their
    remaining m-s pulses in disjoint blocks.  For 2m > n they share
    n+s-2m trailing vacuum bins and each member blanks a disjoint block
    of m-s bins among the 2m-s leading ones.
    """
    _check_nms(n, m, s)
    size = lower_bound_size(n, m, s)
    members = []
    if n + s - 2 * m < 0:
        bits = [1] * m + [0] * (n - m)
        members.append(Codeword(tuple(bits)))
    elif 2 * m <= n:
        for i in range(size):
            bits = [0] * n
            for p in range(s):
                bits[p] = 1
            start = s + i * (m - s)
            for p in range(start, start + (m - s)):
                bits[p] = 1
            members.append(Codeword(tuple(bits)))
    else:
        slots = 2 * m - s  # leading slots; the rest are shared vacuum
        for i in range(size):
            bits = [0] * n
            for p in range(slots):
                bits[p] = 1
            start = i * (m - s)
            for p in range(start, start + (m - s)):
                bits[p] = 0
            members.append(Codeword(tuple(bits)))
    return StateGroup(ConfigurationSpec(n, m, s), tuple(members))


def _max_clique_bitset(adj: list[int]) -> int:
    """Exact maximum clique via branch-and-bound with greedy coloring.

    Vertices are bit positions; adj[v] is the neighbor bitmask. Returns the
    best clique as a bitmask.
    """
    nv = len(adj)
    best_size = 0
    best_set = 0

    def expand(r_size: int, r_set: int, cand: int) -> None:
        nonlocal best_size, best_set
        order: list[int] = []
        bound: list[int] = []
        uncolored = cand
        color = 0
        while uncolored:
            color += 1
            avail = uncolored
            while avail:
                v = (avail & -avail).bit_length() - 1
                bit = 1 << v
                avail &= ~(adj[v] | bit)
                uncolored &= ~bit
                order.append(v)
                bound.append(color)
        for i in range(len(order) - 1, -1, -1):
            if r_size + bound[i] <= best_size:
                return
            v = order[i]
            bit = 1 << v
            new_cand = cand & adj[v]
            if new_cand:
                expand(r_size + 1, r_set | bit, new_cand)
            elif r_size + 1 > best_size:
                best_size = r_size + 1
                best_set = r_set | bit
            cand &= ~bit

    if nv:
        expand(0, 0, (1 << nv) - 1)
    return best_set


def max_constant_s_group(
    n: int, m: int, s: int, limit: int = CLIQUE_BIN_LIMIT
) -> tuple[int, StateGroup]:
    """Exact maximum constant-coincidence group size, with a witness group.

    Maximum clique on the graph whose vertices are all C(n, m) codewords and
    whose edges join pairs with coincidence exactly s.  Exact search is
    limited to n <= `limit` bins.
    """
    if n > limit:
        raise SearchLimitError(f"exact search limited to n <= {limit}, got n={n}")
    if not (n > m >= s >= 0):
        raise InvalidParametersError(f"need n > m >= s >= 0, got ({n}, {m}, {s})")
    words = enumerate_states(n, m)
    nv = len(words)
    adj = [0] * nv
    for i in range(nv):
        for j in range(i + 1, nv):
            if coincidence(words[i], words[j]) == s:
                adj[i] |= 1 << j
                adj[j] |= 1 << i
    mask = _max_clique_bitset(adj)
    members = tuple(words[i] for i in range(nv) if mask >> i & 1)
    group = StateGroup(ConfigurationSpec(n, m, s), members)
    return group.size, group


def ideal_outcome_set(group: StateGroup) -> list[ClickPattern]:
    """Click patterns reachable from the group under noiseless detection.

    Each member can produce any click pattern supported on its own pulse
    positions (every pulse independently clicks or not); the result is the
    deduplicated union, always including the all-zero pattern.
    """
    n = group.spec.n
    seen: set[tuple[int, ...]] = set()
    for cw in group.members:
        sup = cw.support()
        for r in range(len(sup) + 1):
            for combo in itertools.combinations(sup, r):
                bits = [0] * n
                for p in combo:
                    bits[p] = 1
                seen.add(tuple(bits))
    return [ClickPattern(b) for b in sorted(seen)]


def outcome_count_closed_form(group_size: int, m: int, s: int) -> int:
    """Closed-form outcome count C(2^m - 1) - 2^(m-s) + 1.

    Only valid for particular group shapes; `ideal_outcome_set` is the
    authoritative count (see tests for a known disagreement at m=1).
    """
    return group_size * (2**m - 1) - 2 ** (m - s) + 1


def overlap_delta(mu: float, m: int, s: int) -> float:
    """Pairwise state overlap exp(-mu*(m-s)) for coincidence-s weight-m states.

    A coherent pulse of mean photon number mu overlaps vacuum as
    exp(-mu/2); two states differing in 2(m-s) bins overlap as that factor
    raised to 2(m-s).
    """
    if mu < 0:
        raise InvalidParametersError(f"mean photon number must be >= 0, got {mu}")
    if s > m or s < 0:
        raise InvalidParametersError(f"need m >= s >= 0, got m={m}, s={s}")
    return math.exp(-mu * (m - s))


def gram_matrix(group: StateGroup, mu: float) -> GramMatrix:
    """Pairwise overlap matrix of a group at mean photon number mu."""
    size = group.size
    m = group.spec.m
    g = np.ones((size, size))
    for i in range(size):
        for j in range(i + 1, size):
            d = overlap_delta(mu, m, coincidence(group.members[i], group.members[j]))
            g[i, j] = d
            g[j, i] = d
    return GramMatrix(g)


def constant_gram(size: int, delta: float) -> GramMatrix:
    """Gram matrix with all off-diagonal overlaps equal to delta."""
    if not 0.0 <= delta <= 1.0:
        raise InvalidParametersError(f"overlap must lie in [0, 1], got {delta}")
    g = np.full((size, size), float(delta))
    np.fill_diagonal(g, 1.0)
    return GramMatrix(g)
