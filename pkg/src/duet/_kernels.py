"""Compiled per-row projected gradient solver for the Poisson subproblems.

Each row minimizes over the unit simplex

    w_i * nll(theta; x_i, s_i) + (q/2) * ||theta - c_i||^2

which covers the spotwise fit (q = 0) and the proximal ADMM theta step.
Rows are solved one at a time with sequential loops, so a row's result is
bitwise independent of batch composition and thread scheduling.
"""

import numpy as np
from numba import njit

_MAX_BACKTRACKS = 60

# status codes
OK = 0
BAD_START = 1


@njit(cache=True, nogil=True)
def _project(v, out, u):
    # u: scratch, filled with v sorted in decreasing order (insertion sort;
    # K is small)
    K = v.size
    for k in range(K):
        val = v[k]
        j = k
        while j > 0 and u[j - 1] < val:
            u[j] = u[j - 1]
            j -= 1
        u[j] = val
    css = 0.0
    tau = 0.0
    for k in range(K):
        css += u[k]
        t = (css - 1.0) / (k + 1)
        if u[k] - t > 0:
            tau = t
    for k in range(K):
        out[k] = max(v[k] - tau, 0.0)


@njit(cache=True, nogil=True)
def _rates(B, theta, eta):
    G, K = B.shape
    for g in range(G):
        acc = 0.0
        for k in range(K):
            acc += B[g, k] * theta[k]
        eta[g] = acc


@njit(cache=True, nogil=True)
def _grad(B, x, eta, s, w, q, theta, c, out):
    G, K = B.shape
    for k in range(K):
        out[k] = q * (theta[k] - c[k])
    for g in range(G):
        a = s
        if x[g] > 0:
            a -= x[g] / eta[g]
        a *= w
        for k in range(K):
            out[k] += a * B[g, k]


@njit(cache=True, nogil=True)
def _delta(x, eta_new, eta_old, s, w, q, t_new, t_old, c):
    # objective(new) - objective(old) without forming either total
    acc = 0.0
    for g in range(x.size):
        d = eta_new[g] - eta_old[g]
        if x[g] > 0:
            if eta_new[g] <= 0:
                return np.inf
            acc += s * d - x[g] * np.log1p(d / eta_old[g])
        else:
            acc += s * d
    acc *= w
    prox = 0.0
    for k in range(t_new.size):
        prox += (t_new[k] - t_old[k]) * (t_new[k] + t_old[k] - 2.0 * c[k])
    return acc + 0.5 * q * prox


@njit(cache=True, nogil=True)
def _solve_row(B, x, s, w, q, c, theta, max_iters, stat_tol, armijo_c, factor, init_step,
               eta, eta_t, work):
    K = B.shape[1]
    G = B.shape[0]
    g, g_t, trial, tmp, srt = work[0], work[1], work[2], work[3], work[4]
    _rates(B, theta, eta)
    for k in range(G):
        if x[k] > 0 and not eta[k] > 0:
            return False, 0, BAD_START
    _grad(B, x, eta, s, w, q, theta, c, g)
    # the proximal term alone has curvature q; larger first steps only backtrack
    step = init_step / (1.0 + q)
    it = 0
    while it < max_iters:
        for k in range(K):
            tmp[k] = theta[k] - g[k]
        _project(tmp, trial, srt)
        res = 0.0
        for k in range(K):
            res += (theta[k] - trial[k]) ** 2
        if np.sqrt(res) <= stat_tol:
            return True, it, OK
        it += 1

        gmean = 0.0
        for k in range(K):
            gmean += g[k]
        gmean /= K
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            for k in range(K):
                tmp[k] = theta[k] - step * g[k]
            _project(tmp, trial, srt)
            _rates(B, trial, eta_t)
            df = _delta(x, eta_t, eta, s, w, q, trial, theta, c)
            # centred gradient: 1^T d = 0 on the simplex
            lin = 0.0
            for k in range(K):
                lin += (g[k] - gmean) * (trial[k] - theta[k])
            if df <= armijo_c * lin:
                accepted = True
                break
            step *= factor
        if not accepted:
            return True, it, OK

        _grad(B, x, eta_t, s, w, q, trial, c, g_t)
        ss = 0.0
        sy = 0.0
        for k in range(K):
            dk = trial[k] - theta[k]
            ss += dk * dk
            sy += dk * (g_t[k] - g[k])
            theta[k] = trial[k]
            g[k] = g_t[k]
        for k in range(G):
            eta[k] = eta_t[k]
        if ss == 0.0:
            return True, it, OK
        step = ss / sy if sy > 0 else step / factor
        step = min(max(step, 1e-12), 1e12)
    return False, it, OK


@njit(cache=True, nogil=True)
def solve_rows(X, B, s, w, q, C, Theta, max_iters, stat_tol, armijo_c, factor, init_step):
    """Solve every row in place; returns (converged, iterations, status)."""
    n = X.shape[0]
    conv = np.zeros(n, dtype=np.bool_)
    iters = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    # scratch is fully overwritten before use, so sharing it keeps rows independent
    eta = np.empty(B.shape[0])
    eta_t = np.empty(B.shape[0])
    work = np.empty((5, B.shape[1]))
    for i in range(n):
        ok, it, st = _solve_row(
            B, X[i], s[i], w[i], q, C[i], Theta[i],
            max_iters, stat_tol, armijo_c, factor, init_step, eta, eta_t, work,
        )
        conv[i] = ok
        iters[i] = it
        status[i] = st
    return conv, iters, status
