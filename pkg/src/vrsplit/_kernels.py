"""Compiled fast path for the row-swap scheme on affine problems.

The kernel mirrors the python engine's loop — same index stream, same
two-evaluations-per-iteration accounting, same incremental-mean table
maintenance with an exact recompute every n swaps — but evaluates the
affine components and resolvents in nopython code.  Indices are pre-drawn
in fixed-size chunks; numpy generators produce bit-identical streams
whether draws are batched or sequential, so the chunking does not alter
which indices a seed yields.  The two engines agree to float rounding,
not bit-for-bit: the compiled loop accumulates dot products in scalar
order and applies the affine resolvent through a precomputed inverse.

Only the row-swap scheme is compiled; it is the one that runs long enough
(ill-conditioned benchmark problems, inner loops of the acceleration
wrapper) for interpreter overhead to dominate.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .schemes import init_table

_CHUNK = 1 << 18

_RES_ZERO, _RES_L2, _RES_BOX, _RES_AFFINE = 0, 1, 2, 3


@numba.njit(cache=True)
def _saga_chunk(M, bvec, res_kind, res_scale, lo, hi, P, shift,
                gamma, x, phi, mean, ref, use_ref, xs, stop_d2,
                idx, k0, op0, upd0, record_every,
                rec_k, rec_op, rec_g, rec_x):
    n, d = phi.shape
    nrec = 0
    op = op0
    upd = upd0
    bi = np.empty(d)
    y = np.empty(d)
    stopped = False
    t_done = 0
    for t in range(idx.shape[0]):
        k = k0 + t
        if k % record_every == 0:
            rec_k[nrec] = k
            rec_op[nrec] = op
            gs = 0.0
            if use_ref:
                for i in range(n):
                    for j in range(d):
                        df = phi[i, j] - ref[i, j]
                        gs += df * df
            rec_g[nrec] = gs
            for j in range(d):
                rec_x[nrec, j] = x[j]
            nrec += 1

        i = idx[t]
        for r in range(d):
            acc = bvec[i, r]
            for c in range(d):
                acc += M[i, r, c] * x[c]
            bi[r] = acc
        for r in range(d):
            y[r] = x[r] - gamma * ((bi[r] - phi[i, r]) + mean[r])

        if res_kind == _RES_ZERO:
            for r in range(d):
                x[r] = y[r]
        elif res_kind == _RES_L2:
            for r in range(d):
                x[r] = y[r] / (1.0 + gamma * res_scale)
        elif res_kind == _RES_BOX:
            for r in range(d):
                v = y[r]
                if v < lo[r]:
                    v = lo[r]
                if v > hi[r]:
                    v = hi[r]
                x[r] = v
        else:
            for r in range(d):
                acc = 0.0
                for c in range(d):
                    acc += P[r, c] * (y[c] - shift[c])
                x[r] = acc

        for r in range(d):
            mean[r] = mean[r] + (bi[r] - phi[i, r]) / n
            phi[i, r] = bi[r]
        upd += 1
        if upd >= n:
            for r in range(d):
                acc = 0.0
                for i2 in range(n):
                    acc += phi[i2, r]
                mean[r] = acc / n
            upd = 0

        op += 2
        t_done = t + 1
        if stop_d2 >= 0.0:
            dd = 0.0
            for r in range(d):
                df = x[r] - xs[r]
                dd += df * df
            if dd <= stop_d2:
                stopped = True
                break
    return nrec, op, upd, t_done, stopped


def _resolvent_params(A, gamma, d):
    lo = np.zeros(d)
    hi = np.zeros(d)
    P = np.zeros((d, d))
    shift = np.zeros(d)
    scale = 0.0
    if A.kind == "zero":
        kind = _RES_ZERO
    elif A.kind == "l2":
        kind = _RES_L2
        scale = float(A.lam)
    elif A.kind == "box":
        kind = _RES_BOX
        lo = np.broadcast_to(np.asarray(A.lo, dtype=np.float64), (d,)).copy()
        hi = np.broadcast_to(np.asarray(A.hi, dtype=np.float64), (d,)).copy()
    elif A.kind == "affine":
        kind = _RES_AFFINE
        P = np.linalg.inv(np.eye(d) + gamma * np.asarray(A.M, dtype=np.float64))
        shift = gamma * np.asarray(A.b, dtype=np.float64)
    else:
        raise ValueError(
            f"the compiled engine has no resolvent for kind {A.kind!r}"
        )
    return kind, scale, lo, hi, P, shift


def run_vr_numba(problem, scheme, config, gamma, rho):
    """Compiled counterpart of the python engine for the row-swap scheme."""
    from .solver import Trace, _dist_sq, _exact_residual, _start_point

    if scheme.variant != "saga":
        raise ValueError(
            "the compiled engine only implements the row-swap scheme; "
            f"got {scheme.variant!r}"
        )
    arrays = problem.affine_arrays
    if arrays is None:
        raise ValueError("the compiled engine requires affine components")
    Mstack, bstack = arrays
    kind, scale, lo, hi, P, shift = _resolvent_params(problem.A, gamma, problem.d)

    n, d = problem.n, problem.d
    T = config.max_iterations
    record_every = config.record_every
    x = _start_point(problem, config.x0)
    ss = np.random.SeedSequence(config.seed).spawn(3)
    rng_idx = np.random.default_rng(ss[0])

    table, op0 = init_table(scheme, problem, x)
    phi = np.ascontiguousarray(table.phi, dtype=np.float64)
    mean = np.ascontiguousarray(table.mean_cache, dtype=np.float64)
    upd = table.updates_since_recompute

    xs = problem.known_solution
    use_ref = xs is not None
    ref = (
        np.ascontiguousarray(problem.components_at_solution)
        if use_ref
        else np.zeros((n, d))
    )
    xs_arr = np.asarray(xs, dtype=np.float64) if use_ref else np.zeros(d)
    stop_d2 = -1.0 if config.stop_dist_sq is None else float(config.stop_dist_sq)

    ks, ops, gs, snaps = [], [], [], []
    op = op0
    k_end = T
    for k0 in range(0, T, _CHUNK):
        cnt = min(_CHUNK, T - k0)
        idx = rng_idx.integers(n, size=cnt)
        cap = cnt // record_every + 2
        rec_k = np.empty(cap, dtype=np.int64)
        rec_op = np.empty(cap, dtype=np.int64)
        rec_g = np.empty(cap)
        rec_x = np.empty((cap, d))
        nrec, op, upd, t_done, stopped = _saga_chunk(
            Mstack, bstack, kind, scale, lo, hi, P, shift,
            gamma, x, phi, mean, ref, use_ref, xs_arr, stop_d2,
            idx, k0, op, upd, record_every,
            rec_k, rec_op, rec_g, rec_x,
        )
        ks.append(rec_k[:nrec].copy())
        ops.append(rec_op[:nrec].copy())
        gs.append(rec_g[:nrec].copy())
        snaps.append(rec_x[:nrec].copy())
        if stopped:
            k_end = k0 + t_done
            break

    k_col = np.concatenate(ks) if ks else np.empty(0, dtype=np.int64)
    op_col = np.concatenate(ops) if ops else np.empty(0, dtype=np.int64)
    g_col = np.concatenate(gs) if gs else np.empty(0)
    x_rows = np.vstack(snaps) if snaps else np.empty((0, d))

    rows = k_col.shape[0] + 1
    dist = np.full(rows, math.nan)
    resid = np.full(rows, math.nan)
    lyap = np.full(rows, math.nan)
    res_cadence = record_every * n
    for r in range(rows - 1):
        xr = x_rows[r]
        if use_ref:
            dist[r] = _dist_sq(xr, xs_arr)
            lyap[r] = dist[r] + rho * (g_col[r] / n)
        if k_col[r] % res_cadence == 0:
            resid[r] = _exact_residual(problem, gamma, xr)

    if use_ref:
        dist[-1] = _dist_sq(x, xs_arr)
        lyap[-1] = dist[-1] + rho * (float(np.sum((phi - ref) ** 2)) / n)
    resid[-1] = _exact_residual(problem, gamma, x)

    trace = Trace(
        k=np.concatenate([k_col, [k_end]]).astype(np.int64),
        op_evals=np.concatenate([op_col, [op]]).astype(np.int64),
        dist_sq=dist,
        residual=resid,
        lyapunov=lyap,
        epoch_boundary=np.ones(rows, dtype=bool),
    )
    return x.copy(), trace


__all__ = ["run_vr_numba"]
