"""Compiled problem layout and the hot Schur-complement kernels.

The solver's per-iteration cost is dominated by assembling the Schur matrix
M[j,k] = sum over blocks of tr(A_j X A_k S^-1).  With every coefficient
matrix expanded into rank-one terms c * v v^T this reduces, per pair of
terms, to two d-dimensional dot products against precomputed X@v and
S^-1@v.  The pair list is fixed at compile time; per iteration only the
products are refreshed.

Two interchangeable implementations exist: a numba @njit kernel and a
chunked-vectorized numpy fallback, selected by the active backend.

Constraints are grouped by `group_hint` into Schur-independent leading
groups plus a trailing coupling set, which makes M block-arrowhead; without
a hint the dense layout is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._backend import backend
from ..errors import SdpInputError
from .problem import SdpProblem

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

TERM_CHUNK = 200_000
PAIR_CHUNK = 1_000_000
DENSE_LIMIT = 1500


@dataclass
class SchurLayout:
    kind: str  # "dense" | "arrow"
    p: int
    q: int = 0
    ngroups: int = 0
    ncouple: int = 0

    @property
    def buffer_size(self) -> int:
        if self.kind == "dense":
            return self.p * self.p
        return self.ngroups * self.q * self.q + self.ngroups * self.q * self.ncouple + self.ncouple**2

    def slots(self, jmin: np.ndarray, jmax: np.ndarray) -> np.ndarray:
        """Flat buffer slot for each constraint pair (jmin <= jmax elementwise)."""
        if self.kind == "dense":
            return jmin * self.p + jmax
        q, ng, c = self.q, self.ngroups, self.ncouple
        nloc = q * ng
        off_e = ng * q * q
        off_f = off_e + ng * q * c
        both_local = jmax < nloc
        both_couple = jmin >= nloc
        mixed = ~both_local & ~both_couple
        out = np.empty(jmin.size, dtype=np.int64)
        if both_local.any():
            a, b = jmin[both_local], jmax[both_local]
            g = a // q
            if not np.array_equal(g, b // q):
                raise SdpInputError(
                    "group_hint invalid: constraints from different groups share a block"
                )
            out[both_local] = g * q * q + (a - g * q) * q + (b - g * q)
        if mixed.any():
            a, b = jmin[mixed], jmax[mixed]
            g = a // q
            out[mixed] = off_e + g * q * c + (a - g * q) * c + (b - nloc)
        if both_couple.any():
            a, b = jmin[both_couple], jmax[both_couple]
            out[both_couple] = off_f + (a - nloc) * c + (b - nloc)
        return out


@dataclass
class ClassData:
    """All solver data for the blocks of one dimension."""

    dim: int
    blocks: np.ndarray  # global ids
    t_coeff: np.ndarray
    t_block: np.ndarray  # local
    t_owner: np.ndarray
    t_vecs: np.ndarray  # (T, dim)
    e_start: np.ndarray
    e_end: np.ndarray
    e_owner: np.ndarray
    pair_ei: np.ndarray
    pair_ej: np.ndarray
    pair_out: np.ndarray
    ent_tidx: np.ndarray  # (E, Tmax) padded
    ent_coeff: np.ndarray  # (E, Tmax) padded with 0
    C_stack: np.ndarray  # (count, dim, dim)

    @property
    def count(self) -> int:
        return self.blocks.size


@dataclass
class Compiled:
    rhs: np.ndarray  # row-normalized
    sign: float  # +1 for maximize, -1 for minimize (applied to C)
    dims: np.ndarray
    block_class: np.ndarray
    block_local: np.ndarray
    classes: list[ClassData]
    layout: SchurLayout
    n_total: int
    c_max: float = field(default=0.0)
    row_scale: np.ndarray = field(default=None)  # original A_j = scale_j * scaled A_j


def _build_class(dim, blocks, global_to_local, chunks, obj_chunks, nblocks_constr):
    coeffs, blks, owners, vecs = [], [], [], []
    for ch in chunks:
        coeffs.append(ch.coeff)
        blks.append(global_to_local[ch.block])
        owners.append(ch.owner)
        vecs.append(ch.vecs)
    if coeffs:
        t_coeff = np.concatenate(coeffs)
        t_block = np.concatenate(blks)
        t_owner = np.concatenate(owners)
        t_vecs = np.vstack(vecs)
    else:
        t_coeff = np.zeros(0)
        t_block = np.zeros(0, dtype=np.int64)
        t_owner = np.zeros(0, dtype=np.int64)
        t_vecs = np.zeros((0, dim))
    order = np.lexsort((t_owner, t_block))
    t_coeff, t_block, t_owner, t_vecs = (
        np.ascontiguousarray(t_coeff[order]),
        np.ascontiguousarray(t_block[order]),
        np.ascontiguousarray(t_owner[order]),
        np.ascontiguousarray(t_vecs[order]),
    )

    count = blocks.size
    T = t_coeff.size
    if T:
        key_change = np.empty(T, dtype=bool)
        key_change[0] = True
        key_change[1:] = (np.diff(t_block) != 0) | (np.diff(t_owner) != 0)
        e_start = np.flatnonzero(key_change).astype(np.int64)
        e_end = np.append(e_start[1:], T).astype(np.int64)
        e_owner = t_owner[e_start]
        e_block = t_block[e_start]
    else:
        e_start = e_end = e_owner = e_block = np.zeros(0, dtype=np.int64)

    # objective stack
    C_stack = np.zeros((count, dim, dim))
    for ch in obj_chunks:
        loc = global_to_local[ch.block]
        for lo in range(0, ch.coeff.size, TERM_CHUNK):
            sl = slice(lo, lo + TERM_CHUNK)
            outer = ch.coeff[sl, None, None] * (
                ch.vecs[sl, :, None] * ch.vecs[sl, None, :]
            )
            np.add.at(C_stack, loc[sl], outer)

    return t_coeff, t_block, t_owner, t_vecs, e_start, e_end, e_owner, e_block, C_stack


def _build_pairs(e_block, e_owner, count, layout):
    """Per-block entry pairs (i <= j by entry index) and their output slots."""
    if e_block.size == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy(), z.copy()
    blk_start = np.searchsorted(e_block, np.arange(count))
    blk_end = np.searchsorted(e_block, np.arange(count) + 1)
    k = blk_end - blk_start
    eis, ejs = [], []
    for kk in np.unique(k):
        if kk == 0:
            continue
        bases = blk_start[k == kk]
        iu0, iu1 = np.triu_indices(kk)
        eis.append((bases[:, None] + iu0[None, :]).ravel())
        ejs.append((bases[:, None] + iu1[None, :]).ravel())
    pair_ei = np.concatenate(eis).astype(np.int64)
    pair_ej = np.concatenate(ejs).astype(np.int64)
    ja = e_owner[pair_ei]
    jb = e_owner[pair_ej]
    jmin = np.minimum(ja, jb)
    jmax = np.maximum(ja, jb)
    pair_out = layout.slots(jmin, jmax)
    return pair_ei, pair_ej, pair_out


def compile_problem(problem: SdpProblem) -> Compiled:
    if problem._compiled is not None:
        return problem._compiled
    dims = problem.block_dims
    nb = dims.size
    p = problem.n_constraints
    if p == 0:
        raise SdpInputError("problem has no constraints")

    if problem.group_hint is not None:
        q, ng = problem.group_hint
        if q * ng > p:
            raise SdpInputError("group_hint larger than constraint count")
        layout = SchurLayout("arrow", p, q=q, ngroups=ng, ncouple=p - q * ng)
    else:
        if p > DENSE_LIMIT:
            raise SdpInputError(
                f"{p} constraints without a group_hint exceeds the dense limit "
                f"({DENSE_LIMIT}); provide structure or shrink the problem"
            )
        layout = SchurLayout("dense", p)

    udims = sorted(set(dims.tolist()))
    block_class = np.zeros(nb, dtype=np.int64)
    block_local = np.zeros(nb, dtype=np.int64)
    classes: list[ClassData] = []
    global_to_local = np.zeros(nb, dtype=np.int64)
    for ci, d in enumerate(udims):
        ids = np.flatnonzero(dims == d)
        block_class[ids] = ci
        block_local[ids] = np.arange(ids.size)
        global_to_local[ids] = np.arange(ids.size)

    sign = 1.0 if problem.maximize else -1.0
    c_max = 0.0
    a_norms = np.zeros(p)
    staged = []
    for ci, d in enumerate(udims):
        ids = np.flatnonzero(dims == d)
        cons_chunks = [ch for ch in problem.constraint_chunks if ch.vecs.shape[1] == d]
        obj_chunks = [ch for ch in problem.objective_chunks if ch.vecs.shape[1] == d]
        (t_coeff, t_block, t_owner, t_vecs, e_start, e_end, e_owner, e_block,
         C_stack) = _build_class(d, ids, global_to_local, cons_chunks, obj_chunks, p)
        C_stack *= sign
        if t_coeff.size:
            np.add.at(a_norms, t_owner, np.abs(t_coeff) * (t_vecs**2).sum(axis=1))
        if C_stack.size:
            c_max = max(c_max, float(np.abs(C_stack).max()))
        staged.append(
            (d, ids, t_coeff, t_block, t_owner, t_vecs, e_start, e_end, e_owner, e_block,
             C_stack)
        )

    # normalize every constraint to unit coefficient scale: keeps the duals
    # and the Schur matrix well conditioned when rows touch many blocks
    row_scale = np.maximum(a_norms, 1e-10)
    for (d, ids, t_coeff, t_block, t_owner, t_vecs, e_start, e_end, e_owner, e_block,
         C_stack) in staged:
        if t_coeff.size:
            t_coeff /= row_scale[t_owner]
        pair_ei, pair_ej, pair_out = _build_pairs(e_block, e_owner, ids.size, layout)
        E = e_start.size
        tmax = int((e_end - e_start).max()) if E else 1
        ent_tidx = np.zeros((E, tmax), dtype=np.int64)
        ent_coeff = np.zeros((E, tmax))
        for i in range(tmax):
            idx = e_start + i
            ok = idx < e_end
            ent_tidx[ok, i] = idx[ok]
            ent_coeff[ok, i] = t_coeff[idx[ok]]
        classes.append(
            ClassData(
                dim=d, blocks=ids, t_coeff=t_coeff, t_block=t_block, t_owner=t_owner,
                t_vecs=t_vecs, e_start=e_start, e_end=e_end, e_owner=e_owner,
                pair_ei=pair_ei, pair_ej=pair_ej, pair_out=pair_out,
                ent_tidx=ent_tidx, ent_coeff=ent_coeff, C_stack=C_stack,
            )
        )

    compiled = Compiled(
        rhs=problem.rhs.astype(float) / row_scale,
        sign=sign,
        dims=dims,
        block_class=block_class,
        block_local=block_local,
        classes=classes,
        layout=layout,
        n_total=int(dims.sum()),
        c_max=c_max,
        row_scale=row_scale,
    )
    problem._compiled = compiled
    return compiled


# ---------------------------------------------------------------------------
# stack helpers (one (count, d, d) array per dimension class)


def zeros_stacks(compiled: Compiled) -> list[np.ndarray]:
    return [np.zeros((c.count, c.dim, c.dim)) for c in compiled.classes]


def eye_stacks(compiled: Compiled, scale: float) -> list[np.ndarray]:
    out = []
    for c in compiled.classes:
        s = np.zeros((c.count, c.dim, c.dim))
        idx = np.arange(c.dim)
        s[:, idx, idx] = scale
        out.append(s)
    return out


def dot_stacks(a: list[np.ndarray], b: list[np.ndarray]) -> float:
    return float(sum(np.einsum("bij,bij->", x, y) for x, y in zip(a, b)))


def apply_A(compiled: Compiled, stacks: list[np.ndarray]) -> np.ndarray:
    """r_j = <A_j, G> for every constraint; G may be asymmetric."""
    r = np.zeros(compiled.layout.p)
    for c, G in zip(compiled.classes, stacks):
        T = c.t_coeff.size
        for lo in range(0, T, TERM_CHUNK):
            sl = slice(lo, min(lo + TERM_CHUNK, T))
            gv = np.einsum("tij,tj->ti", G[c.t_block[sl]], c.t_vecs[sl])
            vals = c.t_coeff[sl] * np.einsum("ti,ti->t", c.t_vecs[sl], gv)
            np.add.at(r, c.t_owner[sl], vals)
    return r


def apply_At(compiled: Compiled, y: np.ndarray) -> list[np.ndarray]:
    """Per-block sum of y_j A_j."""
    out = zeros_stacks(compiled)
    for c, S in zip(compiled.classes, out):
        T = c.t_coeff.size
        for lo in range(0, T, TERM_CHUNK):
            sl = slice(lo, min(lo + TERM_CHUNK, T))
            w = y[c.t_owner[sl]] * c.t_coeff[sl]
            outer = w[:, None, None] * (c.t_vecs[sl, :, None] * c.t_vecs[sl, None, :])
            np.add.at(S, c.t_block[sl], outer)
    return out


def objective_stacks(compiled: Compiled) -> list[np.ndarray]:
    return [c.C_stack for c in compiled.classes]


def objective_value(compiled: Compiled, X: list[np.ndarray]) -> float:
    return float(
        sum(np.einsum("bij,bij->", c.C_stack, x) for c, x in zip(compiled.classes, X))
    )


# ---------------------------------------------------------------------------
# Schur assembly


if njit is not None:

    @njit(cache=True)
    def _schur_numba(pair_ei, pair_ej, e_start, e_end, t_coeff, t_vecs, xv, sv,
                     pair_out, out):  # pragma: no cover - exercised via tests
        d = t_vecs.shape[1]
        for idx in range(pair_ei.size):
            ei = pair_ei[idx]
            ej = pair_ej[idx]
            acc = 0.0
            for ta in range(e_start[ei], e_end[ei]):
                ca = t_coeff[ta]
                for tb in range(e_start[ej], e_end[ej]):
                    d1 = 0.0
                    d2 = 0.0
                    for k in range(d):
                        d1 += t_vecs[ta, k] * xv[tb, k]
                        d2 += t_vecs[tb, k] * sv[ta, k]
                    acc += ca * t_coeff[tb] * d1 * d2
            out[pair_out[idx]] += acc

else:  # pragma: no cover
    _schur_numba = None


def _schur_numpy(c: ClassData, xv, sv, out):
    P = c.pair_ei.size
    for lo in range(0, P, PAIR_CHUNK):
        sl = slice(lo, min(lo + PAIR_CHUNK, P))
        ei, ej = c.pair_ei[sl], c.pair_ej[sl]
        ta, tb = c.ent_tidx[ei], c.ent_tidx[ej]
        ca, cb = c.ent_coeff[ei], c.ent_coeff[ej]
        d1 = np.einsum("pad,pbd->pab", c.t_vecs[ta], xv[tb])
        d2 = np.einsum("pbd,pad->pab", c.t_vecs[tb], sv[ta])
        vals = np.einsum("pa,pb,pab,pab->p", ca, cb, d1, d2)
        np.add.at(out, c.pair_out[sl], vals)


def schur_buffer(compiled: Compiled, X: list[np.ndarray], Sinv: list[np.ndarray]) -> np.ndarray:
    """Upper-triangular Schur data tr(A_j X A_k S^-1) in the layout's flat buffer."""
    out = np.zeros(compiled.layout.buffer_size)
    use_numba = backend() == "numba" and _schur_numba is not None
    for c, Xc, Sc in zip(compiled.classes, X, Sinv):
        T = c.t_coeff.size
        if T == 0 or c.pair_ei.size == 0:
            continue
        xv = np.empty((T, c.dim))
        sv = np.empty((T, c.dim))
        for lo in range(0, T, TERM_CHUNK):
            sl = slice(lo, min(lo + TERM_CHUNK, T))
            xv[sl] = np.einsum("tij,tj->ti", Xc[c.t_block[sl]], c.t_vecs[sl])
            sv[sl] = np.einsum("tij,tj->ti", Sc[c.t_block[sl]], c.t_vecs[sl])
        if use_numba:
            _schur_numba(
                c.pair_ei, c.pair_ej, c.e_start, c.e_end, c.t_coeff, c.t_vecs,
                xv, sv, c.pair_out, out,
            )
        else:
            _schur_numpy(c, xv, sv, out)
    return out
