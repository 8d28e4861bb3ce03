"""Numeric kernels: tape evaluation and batched damped Newton.

Two interchangeable backends execute the same instruction tapes:

* a numba ``@njit`` per-point kernel (default when numba imports), and
* a vectorized pure-numpy path operating on whole seed batches.

Set ``FREDMAP_NO_NUMBA=1`` to force the numpy path; ``benchmarks/`` compares
the two.  Results are identical up to floating-point evaluation order.
"""

from __future__ import annotations

import os

import numpy as np

from .expr import (
    OP_ADD,
    OP_CONST,
    OP_COS,
    OP_DIV,
    OP_EXP,
    OP_MUL,
    OP_NEG,
    OP_POWI,
    OP_SIN,
    OP_SQRT,
    OP_SUB,
    Tape,
)

_FORCED_OFF = os.environ.get("FREDMAP_NO_NUMBA", "").strip() not in ("", "0", "false")

if not _FORCED_OFF:
    try:
        import numba

        njit = numba.njit
        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - mirror always has numba
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA

ARMIJO_C = 1e-4
MIN_BACKTRACK = 1e-12


# ---------------------------------------------------------------------------
# numpy backend


def _eval_batch_numpy(tape: Tape, X: np.ndarray) -> np.ndarray:
    """Evaluate the tape on points X (n, nvars); returns (n, n_outputs)."""
    n = X.shape[0]
    regs = np.empty((tape.nreg, n))
    regs[: tape.nvars] = X.T
    with np.errstate(all="ignore"):
        for i in range(tape.codes.shape[0]):
            code = tape.codes[i]
            a, b, o = tape.arg1[i], tape.arg2[i], tape.out[i]
            if code == OP_CONST:
                regs[o] = tape.consts[a]
            elif code == OP_ADD:
                regs[o] = regs[a] + regs[b]
            elif code == OP_SUB:
                regs[o] = regs[a] - regs[b]
            elif code == OP_MUL:
                regs[o] = regs[a] * regs[b]
            elif code == OP_DIV:
                regs[o] = regs[a] / regs[b]
            elif code == OP_NEG:
                regs[o] = -regs[a]
            elif code == OP_SIN:
                regs[o] = np.sin(regs[a])
            elif code == OP_COS:
                regs[o] = np.cos(regs[a])
            elif code == OP_EXP:
                regs[o] = np.exp(regs[a])
            elif code == OP_SQRT:
                regs[o] = np.sqrt(regs[a])
            elif code == OP_POWI:
                regs[o] = regs[a] ** int(b)
    return regs[tape.outputs].T


def _newton_batch_numpy(tape, f_idx, j_idx, seeds, y, lo, hi, max_iter, tol):
    """Damped Newton from every seed; returns (points, converged)."""
    n, d = seeds.shape
    k = y.shape[0]
    x = seeds.copy()
    span = hi - lo
    lo_inf, hi_inf = lo - 0.5 * span, hi + 0.5 * span
    active = np.ones(n, dtype=bool)

    def fval(pts):
        out = _eval_batch_numpy(tape, pts)
        return out[:, f_idx], out[:, j_idx].reshape(-1, k, d)

    F, J = fval(x)
    r = F - y
    g = 0.5 * np.einsum("ij,ij->i", r, r)
    g = np.where(np.isfinite(g), g, np.inf)

    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        Ja, ra = J[idx], r[idx]
        if k == d:
            with np.errstate(all="ignore"):
                det = np.linalg.det(Ja)
                ok = np.isfinite(det) & (np.abs(det) > 1e-300) & np.isfinite(Ja).all(axis=(1, 2))
                step = np.empty_like(x[idx])
                if ok.any():
                    step[ok] = np.linalg.solve(Ja[ok], ra[ok])
                if (~ok).any():
                    step[~ok] = np.einsum("ikj,ik->ij", Ja[~ok], ra[~ok])
        else:
            # underdetermined: Gauss-Newton via pseudo-inverse
            step = np.empty_like(x[idx])
            for m, ii in enumerate(idx):
                step[m] = np.linalg.pinv(J[ii]) @ r[ii]
        step = np.where(np.isfinite(step), step, 0.0)

        t = np.ones(len(idx))
        accepted = np.zeros(len(idx), dtype=bool)
        xa = x[idx].copy()
        ga = g[idx]
        while not accepted.all() and (t[~accepted] > MIN_BACKTRACK).any():
            trial = x[idx] - t[:, None] * step
            trial = np.clip(trial, lo_inf, hi_inf)
            Ft = _eval_batch_numpy(tape, trial)[:, f_idx]
            rt = Ft - y
            gt = 0.5 * np.einsum("ij,ij->i", rt, rt)
            ok_now = ~accepted & np.isfinite(gt) & (gt <= (1.0 - ARMIJO_C * t) * ga)
            xa[ok_now] = trial[ok_now]
            accepted |= ok_now
            t[~accepted] *= 0.5
        x[idx] = xa
        stalled = ~accepted

        F, J = fval(x)
        r = F - y
        g = 0.5 * np.einsum("ij,ij->i", r, r)
        g = np.where(np.isfinite(g), g, np.inf)
        done = np.sqrt(2.0 * g[idx]) <= tol
        active[idx[done | stalled]] = False

    res = np.sqrt(2.0 * g)
    return x, res <= tol


# ---------------------------------------------------------------------------
# numba backend

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _eval_point_nb(codes, arg1, arg2, out, consts, nreg, nvars, x, regs):
        for v in range(nvars):
            regs[v] = x[v]
        for i in range(codes.shape[0]):
            code = codes[i]
            a = arg1[i]
            b = arg2[i]
            o = out[i]
            if code == OP_CONST:
                regs[o] = consts[a]
            elif code == OP_ADD:
                regs[o] = regs[a] + regs[b]
            elif code == OP_SUB:
                regs[o] = regs[a] - regs[b]
            elif code == OP_MUL:
                regs[o] = regs[a] * regs[b]
            elif code == OP_DIV:
                regs[o] = regs[a] / regs[b]
            elif code == OP_NEG:
                regs[o] = -regs[a]
            elif code == OP_SIN:
                regs[o] = np.sin(regs[a])
            elif code == OP_COS:
                regs[o] = np.cos(regs[a])
            elif code == OP_EXP:
                regs[o] = np.exp(regs[a])
            elif code == OP_SQRT:
                if regs[a] < 0.0:
                    regs[o] = np.nan
                else:
                    regs[o] = np.sqrt(regs[a])
            elif code == OP_POWI:
                regs[o] = regs[a] ** b

    @njit(cache=True, nogil=True)
    def _eval_batch_nb(codes, arg1, arg2, out, consts, nreg, nvars, outputs, X):
        n = X.shape[0]
        res = np.empty((n, outputs.shape[0]))
        regs = np.empty(nreg)
        for p in range(n):
            _eval_point_nb(codes, arg1, arg2, out, consts, nreg, nvars, X[p], regs)
            for j in range(outputs.shape[0]):
                res[p, j] = regs[outputs[j]]
        return res

    @njit(cache=True, nogil=True)
    def _newton_batch_nb(
        codes, arg1, arg2, out, consts, nreg, nvars,
        f_idx, j_idx, seeds, y, lo_inf, hi_inf, max_iter, tol,
    ):
        n, d = seeds.shape
        k = y.shape[0]
        points = seeds.copy()
        converged = np.zeros(n, dtype=np.bool_)
        regs = np.empty(nreg)
        F = np.empty(k)
        J = np.empty((k, d))
        r = np.empty(k)

        for p in range(n):
            x = points[p].copy()
            for _ in range(max_iter):
                _eval_point_nb(codes, arg1, arg2, out, consts, nreg, nvars, x, regs)
                for i in range(k):
                    F[i] = regs[f_idx[i]]
                    r[i] = F[i] - y[i]
                    for j in range(d):
                        J[i, j] = regs[j_idx[i * d + j]]
                g = 0.0
                for i in range(k):
                    g += 0.5 * r[i] * r[i]
                if not np.isfinite(g):
                    break
                if np.sqrt(2.0 * g) <= tol:
                    converged[p] = True
                    break

                usable = True
                for i in range(k):
                    for j in range(d):
                        if not np.isfinite(J[i, j]):
                            usable = False
                if usable and np.abs(np.linalg.det(J)) > 1e-300:
                    step = np.linalg.solve(J, r)
                else:
                    step = J.T @ r

                t = 1.0
                accepted = False
                while t > MIN_BACKTRACK:
                    trial = x - t * step
                    for j in range(d):
                        if trial[j] < lo_inf[j]:
                            trial[j] = lo_inf[j]
                        elif trial[j] > hi_inf[j]:
                            trial[j] = hi_inf[j]
                    _eval_point_nb(codes, arg1, arg2, out, consts, nreg, nvars, trial, regs)
                    gt = 0.0
                    for i in range(k):
                        rt = regs[f_idx[i]] - y[i]
                        gt += 0.5 * rt * rt
                    if np.isfinite(gt) and gt <= (1.0 - ARMIJO_C * t) * g:
                        x = trial
                        accepted = True
                        break
                    t *= 0.5
                if not accepted:
                    break
            # final residual check
            _eval_point_nb(codes, arg1, arg2, out, consts, nreg, nvars, x, regs)
            g = 0.0
            for i in range(k):
                rt = regs[f_idx[i]] - y[i]
                g += 0.5 * rt * rt
            converged[p] = np.isfinite(g) and np.sqrt(2.0 * g) <= tol
            points[p] = x
        return points, converged


# ---------------------------------------------------------------------------
# dispatch


def eval_batch(tape: Tape, X) -> np.ndarray:
    """Evaluate all tape outputs at the points X (n, nvars)."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] != tape.nvars:
        raise ValueError(f"points have {X.shape[1]} coords, tape expects {tape.nvars}")
    if USING_NUMBA:
        return _eval_batch_nb(
            tape.codes, tape.arg1, tape.arg2, tape.out, tape.consts,
            tape.nreg, tape.nvars, tape.outputs, X,
        )
    return _eval_batch_numpy(tape, X)


def newton_batch(tape: Tape, f_idx, j_idx, seeds, y, lo, hi, max_iter, tol,
                 force_numpy: bool = False):
    """Run damped Newton from every seed toward F(x) = y.

    ``f_idx``/``j_idx`` index into the tape outputs (values, then the k*d
    row-major Jacobian).  Returns (points, converged mask).  Square systems
    use Newton steps with an Armijo backtracking line search on the merit
    0.5*|F-y|^2, falling back to gradient steps at singular Jacobians;
    underdetermined systems take pseudo-inverse Gauss-Newton steps (numpy
    path only).
    """
    seeds = np.ascontiguousarray(np.atleast_2d(np.asarray(seeds, dtype=float)))
    y = np.asarray(y, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    f_idx = np.asarray(f_idx, dtype=np.int64)
    j_idx = np.asarray(j_idx, dtype=np.int64)
    k, d = y.shape[0], seeds.shape[1]
    span = hi - lo
    if USING_NUMBA and not force_numpy and k == d:
        return _newton_batch_nb(
            tape.codes, tape.arg1, tape.arg2, tape.out, tape.consts,
            tape.nreg, tape.nvars, f_idx, j_idx, seeds, y,
            lo - 0.5 * span, hi + 0.5 * span, max_iter, tol,
        )
    return _newton_batch_numpy(tape, f_idx, j_idx, seeds, y, lo, hi, max_iter, tol)
