"""Primal-dual interior-point solver for block-diagonal equality-form SDPs.

Infeasible-start path following with the dual-scaled (HKM) search direction
and a Mehrotra predictor-corrector step.  Per iteration one Schur matrix

    M[j,k] = sum_blocks tr(A_j X A_k S^-1)

is assembled (see kernels) and factored, then reused for the predictor and
corrector solves.  The Newton system, with residuals rp = b - A(X) and
Rd = C - A*(y) + S and centering target tau:

    M dy = tau * A(S^-1) + A(X Rd S^-1) - b - A(dXa dSa S^-1)
    dS   = A*(dy) - Rd
    dX   = sym(tau S^-1 - X - X dS S^-1 - dXa dSa S^-1)

Weak duality of the returned values is the caller's certificate: any y with
A*(y) - C >= 0 upper-bounds the maximum (see verify.certified_upper_bound).
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import SdpInputError
from . import kernels as K
from .problem import SdpProblem, SdpSolution

FEASTOL = 1e-8
STEP_FRACTION = 0.98


class _DenseSchur:
    def __init__(self, buf: np.ndarray, p: int):
        upper = buf.reshape(p, p)
        self.M = upper + upper.T - np.diag(np.diag(upper))
        self._factor = None
        scale = max(1.0, float(np.abs(np.diag(self.M)).max()))
        for reg in (0.0, 1e-13, 1e-10, 1e-7, 1e-5):
            try:
                self._factor = np.linalg.cholesky(self.M + reg * scale * np.eye(p))
                break
            except np.linalg.LinAlgError:
                continue

    def _raw_solve(self, r: np.ndarray) -> np.ndarray:
        if self._factor is None:
            return np.linalg.lstsq(self.M, r, rcond=None)[0]
        L = self._factor
        z = np.linalg.solve(L, r)
        return np.linalg.solve(L.T, z)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.M @ v

    def solve(self, r: np.ndarray) -> np.ndarray:
        dy = self._raw_solve(r)
        for _ in range(2):
            res = r - self.matvec(dy)
            if np.abs(res).max() <= 1e-10 * (1.0 + np.abs(r).max()):
                break
            dy = dy + self._raw_solve(res)
        return dy


class _ArrowSchur:
    def __init__(self, buf: np.ndarray, q: int, ng: int, c: int):
        self.q, self.ng, self.c = q, ng, c
        nd = ng * q * q
        ne = ng * q * c
        Du = buf[:nd].reshape(ng, q, q)
        iq = np.arange(q)
        self.D = Du + Du.transpose(0, 2, 1)
        self.D[:, iq, iq] -= Du[:, iq, iq]
        self.E = buf[nd : nd + ne].reshape(ng, q, c)
        Fu = buf[nd + ne :].reshape(c, c)
        self.F = Fu + Fu.T - np.diag(np.diag(Fu))
        scale_d = max(1.0, float(np.abs(np.einsum("gii->gi", self.D)).max(initial=0.0)))
        eye_q = np.eye(q)
        self.invD = None
        for reg in (0.0, 1e-13, 1e-10, 1e-7, 1e-5):
            try:
                self.invD = np.linalg.inv(self.D + reg * scale_d * eye_q)
                break
            except np.linalg.LinAlgError:
                continue
        if self.invD is None:
            raise np.linalg.LinAlgError("group blocks of the Schur matrix are singular")
        invD_E = np.einsum("gab,gbc->gac", self.invD, self.E)
        Fs = self.F - np.einsum("gqc,gqe->ce", self.E, invD_E)
        self._invD_E = invD_E
        self._Fs = Fs
        scale_f = max(1.0, float(np.abs(np.diag(Fs)).max(initial=0.0))) if c else 1.0
        self._Lf = None
        for reg in (0.0, 1e-13, 1e-10, 1e-7, 1e-5):
            try:
                self._Lf = np.linalg.cholesky(Fs + reg * scale_f * np.eye(c)) if c else None
                break
            except np.linalg.LinAlgError:
                continue

    def _split(self, r):
        nloc = self.ng * self.q
        return r[:nloc].reshape(self.ng, self.q), r[nloc:]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v1, v2 = self._split(v)
        y1 = np.einsum("gab,gb->ga", self.D, v1)
        if self.c:
            y1 += np.einsum("gqc,c->gq", self.E, v2)
            y2 = np.einsum("gqc,gq->c", self.E, v1) + self.F @ v2
            return np.concatenate([y1.ravel(), y2])
        return y1.ravel()

    def _raw_solve(self, r: np.ndarray) -> np.ndarray:
        r1, r2 = self._split(r)
        w = np.einsum("gab,gb->ga", self.invD, r1)
        if self.c:
            rhs2 = r2 - np.einsum("gqc,gq->c", self.E, w)
            if self._Lf is not None:
                z = np.linalg.solve(self._Lf, rhs2)
                v2 = np.linalg.solve(self._Lf.T, z)
            else:
                v2 = np.linalg.lstsq(self._Fs, rhs2, rcond=None)[0]
            v1 = w - np.einsum("gac,c->ga", self._invD_E, v2)
            return np.concatenate([v1.ravel(), v2])
        return w.ravel()

    def solve(self, r: np.ndarray) -> np.ndarray:
        dy = self._raw_solve(r)
        for _ in range(2):
            res = r - self.matvec(dy)
            if np.abs(res).max() <= 1e-10 * (1.0 + np.abs(r).max()):
                break
            dy = dy + self._raw_solve(res)
        return dy


def _factor_schur(compiled, buf):
    lay = compiled.layout
    if lay.kind == "dense":
        return _DenseSchur(buf, lay.p)
    return _ArrowSchur(buf, lay.q, lay.ngroups, lay.ncouple)


def _sym(stacks):
    return [0.5 * (s + s.transpose(0, 2, 1)) for s in stacks]


def _max_step(stacks, dstacks) -> float:
    """Largest alpha with X + alpha dX still PSD (1 = full step allowed)."""
    alpha = np.inf
    for x, dx in zip(stacks, dstacks):
        if x.shape[0] == 0:
            continue
        try:
            L = np.linalg.cholesky(x)
        except np.linalg.LinAlgError:
            # roundoff can push a boundary iterate slightly indefinite
            lam_x = float(np.linalg.eigvalsh(x)[:, 0].min())
            jitter = max(1e-14, -1.0001 * lam_x + 1e-14)
            d = x.shape[1]
            L = np.linalg.cholesky(x + jitter * np.eye(d))
        Li = np.linalg.inv(L)
        W = Li @ dx @ Li.transpose(0, 2, 1)
        lam = np.linalg.eigvalsh(0.5 * (W + W.transpose(0, 2, 1)))[:, 0].min()
        if lam < -1e-14:
            alpha = min(alpha, -1.0 / float(lam))
    return float(alpha)


def _min_eig(stacks) -> float:
    vals = [np.linalg.eigvalsh(s)[:, 0].min() for s in stacks if s.shape[0]]
    return float(min(vals)) if vals else 0.0


def solve(problem: SdpProblem, tol: float = 1e-6, max_iter: int = 100) -> SdpSolution:
    """Solve the SDP; status 'optimal' requires feasibility within 1e-8 and
    relative duality gap at most `tol`."""
    compiled = K.compile_problem(problem)
    p = compiled.layout.p
    b = compiled.rhs  # row-normalized
    bmax = max(1.0, float(np.abs(b).max()))
    cmax = max(1.0, compiled.c_max)
    C = K.objective_stacks(compiled)

    xi = max(10.0, 2.0 * bmax)
    eta = max(10.0, 2.0 * cmax)
    X = K.eye_stacks(compiled, xi)
    S = K.eye_stacks(compiled, eta)
    y = np.zeros(p)

    status = "limit"
    certificate = None
    iterations = 0
    best = None
    best_merit = np.inf
    stall = 0
    for it in range(1, max_iter + 1):
        iterations = it
        AX = K.apply_A(compiled, X)
        rp = b - AX
        Aty = K.apply_At(compiled, y)
        Rd = [c + s - a for c, s, a in zip(C, S, Aty)]
        mu = K.dot_stacks(X, S) / compiled.n_total

        primal_obj = K.objective_value(compiled, X)
        dual_obj = float(b @ y)
        pinf = float(np.abs(rp).max()) / bmax
        dinf = max(float(np.abs(r).max(initial=0.0)) for r in Rd) / cmax
        relgap = abs(dual_obj - primal_obj) / max(1.0, abs(primal_obj))

        merit = max(pinf, dinf, relgap)
        if merit < best_merit * 0.99:
            best_merit = merit
            best = ([x.copy() for x in X], y.copy(), [sx.copy() for sx in S])
            stall = 0
        elif pinf < 1e-4 and dinf < 1e-4:
            # count stalls only once residuals are small; the relative gap
            # legitimately fluctuates while infeasibility is being worked off
            stall += 1

        if pinf <= FEASTOL and dinf <= FEASTOL and relgap <= tol:
            status = "optimal"
            best = (X, y, S)
            break
        if stall >= 10 or mu < 1e-15:
            status = "limit"
            break

        # primal infeasibility: an improving dual ray with A*(y) >= 0, b'y < 0
        ynorm = float(np.abs(y).max(initial=0.0))
        if ynorm > 1e6 * bmax:
            ray = y / ynorm
            Sray = K.apply_At(compiled, ray)
            if _min_eig(Sray) >= -1e-7 and float(b @ ray) < -1e-9:
                status = "infeasible"
                certificate = ray / compiled.row_scale
                break

        try:
            Sinv = [np.linalg.inv(s) for s in S]
            Sinv = _sym(Sinv)
            buf = K.schur_buffer(compiled, X, Sinv)
            schur = _factor_schur(compiled, buf)
        except np.linalg.LinAlgError:
            status = "numerical-failure"
            break

        try:
            A_Sinv = K.apply_A(compiled, Sinv)
            XRdSinv = [x @ r @ si for x, r, si in zip(X, Rd, Sinv)]
            rhs_base = K.apply_A(compiled, XRdSinv) - b

            # predictor (affine scaling)
            dy_a = schur.solve(rhs_base)
            dS_a = [a - r for a, r in zip(K.apply_At(compiled, dy_a), Rd)]
            dX_a = _sym([-x - x @ ds @ si for x, ds, si in zip(X, dS_a, Sinv)])
            ap_a = min(1.0, STEP_FRACTION * _max_step(X, dX_a))
            ad_a = min(1.0, STEP_FRACTION * _max_step(S, dS_a))
            mu_aff = (
                K.dot_stacks(
                    [x + ap_a * dx for x, dx in zip(X, dX_a)],
                    [s + ad_a * ds for s, ds in zip(S, dS_a)],
                )
                / compiled.n_total
            )
            sigma = min(1.0, max(1e-8, (mu_aff / mu) ** 3))
            tau = sigma * mu

            # corrector
            corr = [dx @ ds @ si for dx, ds, si in zip(dX_a, dS_a, Sinv)]
            rhs = rhs_base + tau * A_Sinv - K.apply_A(compiled, corr)
            dy = schur.solve(rhs)
            dS = [a - r for a, r in zip(K.apply_At(compiled, dy), Rd)]
            dX = _sym(
                [
                    tau * si - x - x @ ds @ si - co
                    for x, ds, si, co in zip(X, dS, Sinv, corr)
                ]
            )
            frac = min(STEP_FRACTION, 0.9 + 0.09 * min(ap_a, ad_a))
            ap = min(1.0, frac * _max_step(X, dX))
            ad = min(1.0, frac * _max_step(S, dS))
            if pinf > 10.0 * FEASTOL * bmax:
                ap = ad = min(ap, ad)  # keep residual decay synchronized
        except np.linalg.LinAlgError:
            status = "numerical-failure"
            break
        if os.environ.get("QCERT_SDP_DEBUG"):
            print(
                f"  it={it} mu={mu:.3e} pinf={pinf:.3e} dinf={dinf:.3e} "
                f"gap={relgap:.3e} sigma={sigma:.2e} ap={ap:.3f} ad={ad:.3f}"
            )
            if os.environ.get("QCERT_SDP_DEBUG") == "2":
                r1 = float(np.abs(K.apply_A(compiled, dX) - rp).max())
                r2 = max(
                    float(np.abs(a - ds - r).max())
                    for a, ds, r in zip(K.apply_At(compiled, dy), dS, Rd)
                )
                r3 = max(
                    float(np.abs(x @ ds + dx @ s + x @ s + co @ s - tau * np.eye(x.shape[1])).max())
                    for x, s, dx, ds, co in zip(X, S, dX, dS, corr)
                )
                print(f"      |A(dX)-rp|={r1:.2e} |At(dy)-dS-Rd|={r2:.2e} |comp res|={r3:.2e}")
        if ap < 1e-10 and ad < 1e-10:
            status = "numerical-failure"
            break
        X = [x + ap * dx for x, dx in zip(X, dX)]
        S = [s + ad * ds for s, ds in zip(S, dS)]
        y = y + ad * dy
        if not all(np.isfinite(x).all() for x in X) or not np.isfinite(y).all():
            status = "numerical-failure"
            break

    if best is not None:
        X, y, S = best
    primal_obj = K.objective_value(compiled, X)
    dual_obj = float(b @ y)
    AX = K.apply_A(compiled, X)
    Aty = K.apply_At(compiled, y)
    Rd = [c + s - a for c, s, a in zip(C, S, Aty)]
    pinf = float(np.abs((b - AX) * compiled.row_scale).max())
    dinf = max(float(np.abs(r).max(initial=0.0)) for r in Rd)

    sign = compiled.sign
    primal_value = sign * primal_obj
    dual_value = sign * dual_obj
    gap = abs(dual_value - primal_value) / max(1.0, abs(primal_value))

    primal_blocks = [
        X[compiled.block_class[k]][compiled.block_local[k]].copy()
        for k in range(compiled.dims.size)
    ]
    return SdpSolution(
        primal=primal_blocks,
        dual=y / compiled.row_scale,
        primal_value=primal_value,
        dual_value=dual_value,
        gap=gap,
        status=status,
        iterations=iterations,
        primal_residual=pinf,
        dual_residual=dinf,
        infeasibility_certificate=certificate,
    )
