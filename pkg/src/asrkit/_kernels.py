"""Compiled inner loops of the backward induction.

Each kernel processes a slab of lattice nodes: for every (node, inventory)
pair it scans the candidate next-inventory grid and returns the optimal
stage value and argmin index.  All kernels are exact (no fast-math), run
without the GIL, and depend only on their inputs, so results are identical
for any scheduling of slabs across worker threads.

The CARA kernel evaluates, per candidate, the exact log-sum-exp over the
five branches shifted by the per-candidate maximum exponent.  A running
branch-and-bound prune skips candidates whose cheap lower bound
(L + max_j exponent - log(12)/gamma) already exceeds the incumbent; the
bound is exact because the branch mixture lies between the largest branch
weighted by the smallest probability (1/12) and the largest branch itself.

Infinite continuation values mark infeasible candidates (they would make
the expectation infinite) and are skipped; if nothing is feasible the
stage value is +inf and the argmin defaults to "stay put".
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG12 = math.log(12.0)


@njit(inline="always")
def _lse_candidate(Cb, F, gamma, probs, i, k, m):
    s = 0.0
    for j in range(5):
        s += probs[j] * math.exp(gamma * (F[i, j] + Cb[j, k] - m))
    return m + math.log(s) / gamma


@njit(inline="always")
def _branch_max(Cb, F, i, k):
    m = F[i, 0] + Cb[0, k]
    for j in range(1, 5):
        x = F[i, j] + Cb[j, k]
        if x > m:
            m = x
    return m


@njit(nogil=True, cache=True)
def stage_slab_cara(C, Cmean, F, Lmat, gamma, probs, buy_only, out_v, out_k):
    """Stage minimisation for gamma > 0 over a slab of nodes.

    C      (B, 5, M1)  continuation at the five children, +inf allowed
    Cmean  (B, M1)     probability-weighted continuation mean
    F      (M1, 5)     risk exposure sig*sqrt(dt)*(j-2)*(q_i - Q/(n+1))
    Lmat   (M1, M1)    execution cost of moving inventory i -> k
    out_v  (B, M1)     stage value before the node-constant spread term
    out_k  (B, M1)     argmin candidate index (smallest index on ties)

    Candidates are pruned against the incumbent with two exact lower
    bounds on the per-candidate value t = L + (1/gamma) lse:
    Jensen (t >= L + mean, since the risk exposure is centred) and the
    max-branch bound (t >= L + max - log(12)/gamma).  The seed is the
    Jensen argmin, which is near-optimal at small gamma.
    """
    B = C.shape[0]
    M1 = C.shape[2]
    band = LOG12 / gamma
    for b in range(B):
        Cb = C[b]
        Mb = Cmean[b]
        for i in range(M1):
            kmax = i + 1 if buy_only else M1
            seed = -1
            seed_lb = np.inf
            for k in range(kmax):
                lb = Lmat[i, k] + Mb[k]
                if lb < seed_lb:
                    seed_lb = lb
                    seed = k
            if seed < 0 or not np.isfinite(seed_lb):
                out_v[b, i] = np.inf
                out_k[b, i] = i
                continue
            best = Lmat[i, seed] + _lse_candidate(
                Cb, F, gamma, probs, i, seed, _branch_max(Cb, F, i, seed))
            ba = seed
            for k in range(kmax):
                if k == seed:
                    continue
                if Lmat[i, k] + Mb[k] > best:
                    continue
                m = _branch_max(Cb, F, i, k)
                if Lmat[i, k] + m - band > best:
                    continue
                t = Lmat[i, k] + _lse_candidate(Cb, F, gamma, probs, i, k, m)
                if t < best or (t == best and k < ba):
                    best = t
                    ba = k
            out_v[b, i] = best
            out_k[b, i] = ba


@njit(nogil=True, cache=True)
def stage_slab_neutral(Cmean, Lmat, buy_only, out_v, out_k):
    """Risk-neutral stage minimisation: cost + probability-weighted mean."""
    B, M1 = Cmean.shape
    for b in range(B):
        for i in range(M1):
            kmax = i + 1 if buy_only else M1
            best = np.inf
            ba = i
            for k in range(kmax):
                t = Lmat[i, k] + Cmean[b, k]
                if t < best:
                    best = t
                    ba = k
            out_v[b, i] = best
            out_k[b, i] = ba


@njit(inline="always")
def _lerp_column(nextT, k, pos, top):
    """Continuation at real node coordinate pos, clamped, inf-safe."""
    if pos <= 0.0:
        return nextT[k, 0]
    if pos >= top:
        return nextT[k, top]
    lo = int(math.floor(pos))
    w = pos - lo
    x0 = nextT[k, lo]
    if w == 0.0:
        return x0
    x1 = nextT[k, lo + 1]
    if np.isinf(x0) or np.isinf(x1):
        return np.inf
    return x0 + w * (x1 - x0)


@njit(nogil=True, cache=True)
def stage_slab_perm_cara(nextT, zbase, n, dz, f2, base, gamma, probs,
                         buy_only, out_v, out_k):
    """Permanent-impact stage for gamma > 0.

    The price shift from trading moves the spread off-lattice, so the
    continuation is interpolated between node columns at
    zeta + n*j + dz[i, k].

    nextT (M1, K1)  next level, inventory-major
    dz    (M1, M1)  node-coordinate shift n*(G(q_k)-G(q_i))/(sig*sqrt(dt))
    f2    (M1, M1)  per-branch slope: risk exposure minus intraday-noise drag
    base  (M1, M1)  execution cost + noise variance + impact drift terms
    """
    B = zbase.shape[0]
    M1 = nextT.shape[0]
    top = nextT.shape[1] - 1
    xs = np.empty(5)
    for b in range(B):
        zb = zbase[b]
        for i in range(M1):
            kmax = i + 1 if buy_only else M1
            best = np.inf
            ba = i
            for k in range(kmax):
                m = -np.inf
                for j in range(5):
                    pos = zb + n * j + dz[i, k]
                    v = _lerp_column(nextT, k, pos, top)
                    x = (j - 2.0) * f2[i, k] + v
                    xs[j] = x
                    if x > m:
                        m = x
                if np.isinf(m):
                    continue
                s = 0.0
                for j in range(5):
                    s += probs[j] * math.exp(gamma * (xs[j] - m))
                # same summation shape as the base kernel, so the zero-impact
                # case reduces to it bit for bit
                t = base[i, k] + (m + math.log(s) / gamma)
                if t < best:
                    best = t
                    ba = k
            out_v[b, i] = best
            out_k[b, i] = ba


@njit(nogil=True, cache=True)
def stage_slab_perm_neutral(nextT, zbase, n, dz, base, probs, buy_only,
                            out_v, out_k):
    """Permanent-impact stage for gamma == 0 (noise terms average out)."""
    B = zbase.shape[0]
    M1 = nextT.shape[0]
    top = nextT.shape[1] - 1
    for b in range(B):
        zb = zbase[b]
        for i in range(M1):
            kmax = i + 1 if buy_only else M1
            best = np.inf
            ba = i
            for k in range(kmax):
                s = 0.0
                for j in range(5):
                    pos = zb + n * j + dz[i, k]
                    s += probs[j] * _lerp_column(nextT, k, pos, top)
                t = base[i, k] + s
                if t < best:
                    best = t
                    ba = k
            out_v[b, i] = best
            out_k[b, i] = ba


@njit(inline="always")
def _refine_objective(Cb, F, qgrid, dq, eta, phi, psi, vdt, gamma, probs,
                      neutral, i, qt):
    """Stage objective at an off-grid candidate, continuation lerped in q."""
    rho = abs(qgrid[i] - qt) / vdt
    cost = (eta * rho ** (1.0 + phi) + psi * rho) * vdt
    pos = qt / dq
    top = qgrid.shape[0] - 1
    if pos <= 0.0:
        lo = 0
        w = 0.0
    elif pos >= top:
        lo = top
        w = 0.0
    else:
        lo = int(math.floor(pos))
        w = pos - lo
    if neutral:
        s = 0.0
        for j in range(5):
            x0 = Cb[j, lo]
            if w == 0.0:
                cj = x0
            else:
                x1 = Cb[j, lo + 1]
                if np.isinf(x0) or np.isinf(x1):
                    return np.inf
                cj = x0 + w * (x1 - x0)
            s += probs[j] * cj
        return cost + s
    m = -np.inf
    xs = np.empty(5)
    for j in range(5):
        x0 = Cb[j, lo]
        if w == 0.0:
            cj = x0
        else:
            x1 = Cb[j, lo + 1]
            if np.isinf(x0) or np.isinf(x1):
                return np.inf
            cj = x0 + w * (x1 - x0)
        x = F[i, j] + cj
        xs[j] = x
        if x > m:
            m = x
    if np.isinf(m):
        return np.inf
    s = 0.0
    for j in range(5):
        s += probs[j] * math.exp(gamma * (xs[j] - m))
    return cost + m + math.log(s) / gamma


GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


@njit(nogil=True, cache=True)
def refine_slab(C, F, qgrid, eta, phi, psi, vdt, gamma, probs, neutral,
                buy_only, ks, out_v):
    """Golden-section polish of the stage value between neighbouring grid
    candidates; fixed iteration count keeps the result deterministic.
    Never worse than the grid optimum."""
    B = C.shape[0]
    M1 = qgrid.shape[0]
    dq = qgrid[1] - qgrid[0]
    for b in range(B):
        Cb = C[b]
        for i in range(M1):
            if not np.isfinite(out_v[b, i]):
                continue
            k = ks[b, i]
            lo = max(k - 1, 0)
            hi = min(k + 1, M1 - 1)
            if buy_only and hi > i:
                hi = i
            a = qgrid[lo]
            c = qgrid[hi]
            if c <= a:
                continue
            x1 = c - GOLDEN * (c - a)
            x2 = a + GOLDEN * (c - a)
            f1 = _refine_objective(Cb, F, qgrid, dq, eta, phi, psi, vdt,
                                   gamma, probs, neutral, i, x1)
            f2 = _refine_objective(Cb, F, qgrid, dq, eta, phi, psi, vdt,
                                   gamma, probs, neutral, i, x2)
            for _ in range(60):
                if f1 <= f2:
                    c = x2
                    x2 = x1
                    f2 = f1
                    x1 = c - GOLDEN * (c - a)
                    f1 = _refine_objective(Cb, F, qgrid, dq, eta, phi, psi,
                                           vdt, gamma, probs, neutral, i, x1)
                else:
                    a = x1
                    x1 = x2
                    f1 = f2
                    x2 = a + GOLDEN * (c - a)
                    f2 = _refine_objective(Cb, F, qgrid, dq, eta, phi, psi,
                                           vdt, gamma, probs, neutral, i, x2)
            cand = f1 if f1 <= f2 else f2
            if cand < out_v[b, i]:
                out_v[b, i] = cand
