# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a numpy twin in :mod:`delaycast._fallback` with the
same signature and semantics; :mod:`delaycast.kernels` picks one at import.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs, sqrt, pow, INFINITY

cnp.import_array()


def nearest_neighbors(const double[:, ::1] X, Py_ssize_t theiler=0):
    """Exact nearest neighbor of every row of ``X`` (Euclidean).

    Candidates with ``|i - j| <= theiler`` are excluded; ties go to the
    smaller index.
    """
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k, best
    cdef double acc, diff, best_d
    idx_arr = np.full(n, -1, dtype=np.int64)
    dist_arr = np.full(n, np.inf)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    with nogil:
        for i in range(n):
            best = -1
            best_d = INFINITY
            for j in range(n):
                if i - j <= theiler and j - i <= theiler:
                    continue
                acc = 0.0
                for k in range(d):
                    diff = X[i, k] - X[j, k]
                    acc = acc + diff * diff
                    if acc >= best_d:
                        break
                if acc < best_d:
                    best_d = acc
                    best = j
            idx[i] = best
            dist[i] = sqrt(best_d)
    return idx_arr, dist_arr


def hist2d_counts(const double[::1] a, const double[::1] b,
                  double lo_a, double hi_a, double lo_b, double hi_b,
                  Py_ssize_t nx, Py_ssize_t ny):
    """Uniform-bin 2-D counts; right edge inclusive. Returns (counts, n_out)."""
    cdef Py_ssize_t n = a.shape[0], t, i, j
    cdef double span_a = hi_a - lo_a, span_b = hi_b - lo_b, va, vb
    cdef long long n_out = 0
    counts_arr = np.zeros((nx, ny), dtype=np.int64)
    cdef long long[:, ::1] counts = counts_arr
    with nogil:
        for t in range(n):
            va = a[t]
            vb = b[t]
            if not (va >= lo_a and va <= hi_a and vb >= lo_b and vb <= hi_b):
                n_out += 1
                continue
            i = <Py_ssize_t> floor((va - lo_a) / span_a * nx)
            j = <Py_ssize_t> floor((vb - lo_b) / span_b * ny)
            if i >= nx:
                i = nx - 1
            if j >= ny:
                j = ny - 1
            counts[i, j] += 1
    return counts_arr, int(n_out)


def mlp_rollout(const double[::1] w_flat, const double[::1] b_flat,
                const long long[::1] sizes, const int[::1] relu,
                const double[:, ::1] z0, Py_ssize_t d_p, Py_ssize_t n_steps,
                double limit):
    """Iterate a dense net as a delay-register stepper.

    ``z0`` rows are newest-first embeddings of width ``m * d_p``. Each step
    the net output is prepended and the oldest block dropped. A member stops
    when any output component exceeds ``limit`` in magnitude; its remaining
    rows are NaN. Returns (outputs[B, n_steps + 1, d_p], n_valid[B]).
    """
    cdef Py_ssize_t B = z0.shape[0], width = z0.shape[1]
    cdef Py_ssize_t n_layers = sizes.shape[0] - 1
    cdef Py_ssize_t max_w = 0, l, i, j, s, bidx, w_off, b_off, n_in, n_out
    cdef double acc, v
    cdef bint dead
    for l in range(n_layers + 1):
        if sizes[l] > max_w:
            max_w = sizes[l]
    out_arr = np.full((B, n_steps + 1, d_p), np.nan)
    valid_arr = np.zeros(B, dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef long long[::1] valid = valid_arr
    cdef double[::1] reg = np.empty(width)
    cdef double[::1] h0 = np.empty(max_w)
    cdef double[::1] h1 = np.empty(max_w)
    cdef double[::1] cur
    cdef double[::1] nxt
    for bidx in range(B):
        for i in range(width):
            reg[i] = z0[bidx, i]
        for i in range(d_p):
            out[bidx, 0, i] = reg[i]
        valid[bidx] = 1
        dead = False
        for s in range(n_steps):
            for i in range(width):
                h0[i] = reg[i]
            cur = h0
            nxt = h1
            w_off = 0
            b_off = 0
            for l in range(n_layers):
                n_in = sizes[l]
                n_out = sizes[l + 1]
                for j in range(n_out):
                    nxt[j] = b_flat[b_off + j]
                for i in range(n_in):
                    v = cur[i]
                    for j in range(n_out):
                        nxt[j] += v * w_flat[w_off + i * n_out + j]
                if relu[l]:
                    for j in range(n_out):
                        if nxt[j] <= 0.0:
                            nxt[j] = 0.0
                w_off += n_in * n_out
                b_off += n_out
                cur, nxt = nxt, cur
            for j in range(d_p):
                if not fabs(cur[j]) <= limit:
                    dead = True
            if dead:
                break
            for i in range(width - 1, d_p - 1, -1):
                reg[i] = reg[i - d_p]
            for j in range(d_p):
                reg[j] = cur[j]
                out[bidx, s + 1, j] = cur[j]
            valid[bidx] = s + 2
    return out_arr, valid_arr


cdef double[7] DP_C = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0]
cdef double[7][6] DP_A = [
    [0, 0, 0, 0, 0, 0],
    [0.2, 0, 0, 0, 0, 0],
    [3.0 / 40, 9.0 / 40, 0, 0, 0, 0],
    [44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0],
    [19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0],
    [9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0],
    [35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84],
]
cdef double[7] DP_E = [71.0 / 57600, 0, -71.0 / 16695, 71.0 / 1920,
                       -17253.0 / 339200, 22.0 / 525, -1.0 / 40]
cdef double[7][4] DP_P = [
    [1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933, 87487479700.0 / 32700410799],
    [0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072],
    [0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408, 701980252875.0 / 199316789632],
    [0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844],
    [0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423],
]


cdef inline void _lorenz(double s, double r, double b, double* y, double* out) noexcept nogil:
    out[0] = s * (y[1] - y[0])
    out[1] = y[0] * (r - y[2]) - y[1]
    out[2] = y[0] * y[1] - b * y[2]


def lorenz_dopri5(double sigma, double rho, double beta, const double[::1] y0,
                  Py_ssize_t n_out, double sample_dt, double rtol, double atol,
                  double max_step, double first_step):
    """Adaptive DOPRI5 Lorenz trajectory sampled by dense output.

    Returns (values[n_out, 3], status, last_time); status 0 is success,
    1 step-size underflow, 2 non-finite state.
    """
    out_arr = np.empty((n_out, 3))
    cdef double[:, ::1] out = out_arr
    cdef double k[7][3]
    cdef double y[3]
    cdef double ynew[3]
    cdef double err[3]
    cdef double th[4]
    cdef double tmp[3]
    cdef double t = 0.0, t_end = (n_out - 1) * sample_dt, h, ts, theta
    cdef double en, sc, acc, w, d0, d1, d2, h0, h1, factor
    cdef Py_ssize_t i, j, s, c, i_next = 1
    cdef int status = 0
    for c in range(3):
        y[c] = y0[c]
        out[0, c] = y[c]
    if n_out == 1:
        return out_arr, 0, 0.0
    _lorenz(sigma, rho, beta, y, k[0])
    if first_step > 0:
        h = first_step
    else:
        d0 = 0.0
        d1 = 0.0
        for c in range(3):
            sc = atol + rtol * fabs(y[c])
            d0 += (y[c] / sc) ** 2
            d1 += (k[0][c] / sc) ** 2
        d0 = sqrt(d0 / 3)
        d1 = sqrt(d1 / 3)
        if d0 < 1e-5 or d1 < 1e-5:
            h0 = 1e-6
        else:
            h0 = 0.01 * d0 / d1
        h0 = min(h0, t_end, max_step)
        for c in range(3):
            tmp[c] = y[c] + h0 * k[0][c]
        _lorenz(sigma, rho, beta, tmp, k[1])
        d2 = 0.0
        for c in range(3):
            sc = atol + rtol * fabs(y[c])
            d2 += ((k[1][c] - k[0][c]) / sc) ** 2
        d2 = sqrt(d2 / 3) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        h = min(100 * h0, h1, t_end, max_step)
    with nogil:
        while i_next < n_out:
            h = min(h, max_step, t_end - t)
            if h <= 1e-12 * max(1.0, fabs(t)):
                status = 1
                break
            for s in range(1, 7):
                for c in range(3):
                    acc = 0.0
                    for j in range(s):
                        acc = acc + DP_A[s][j] * k[j][c]
                    tmp[c] = y[c] + h * acc
                _lorenz(sigma, rho, beta, tmp, k[s])
            # stage 6 argument is the 5th-order solution (FSAL)
            en = 0.0
            for c in range(3):
                ynew[c] = tmp[c]
                acc = 0.0
                for j in range(7):
                    acc = acc + DP_E[j] * k[j][c]
                err[c] = h * acc
                sc = atol + rtol * max(fabs(y[c]), fabs(ynew[c]))
                en += (err[c] / sc) ** 2
            en = sqrt(en / 3)
            if not (en == en) or not (fabs(ynew[0]) < INFINITY and fabs(ynew[1]) < INFINITY and fabs(ynew[2]) < INFINITY):
                h *= 0.2
                continue
            if en <= 1.0:
                while i_next < n_out and i_next * sample_dt <= (t + h) * (1 + 1e-14) + 1e-14:
                    ts = i_next * sample_dt
                    if ts >= t + h:
                        for c in range(3):
                            out[i_next, c] = ynew[c]
                    else:
                        theta = (ts - t) / h
                        th[0] = theta
                        th[1] = theta * theta
                        th[2] = th[1] * theta
                        th[3] = th[2] * theta
                        for c in range(3):
                            acc = 0.0
                            for j in range(7):
                                w = DP_P[j][0] * th[0] + DP_P[j][1] * th[1] + DP_P[j][2] * th[2] + DP_P[j][3] * th[3]
                                acc = acc + w * k[j][c]
                            out[i_next, c] = y[c] + h * acc
                    i_next += 1
                t = t + h
                for c in range(3):
                    y[c] = ynew[c]
                    k[0][c] = k[6][c]
                if en == 0:
                    factor = 5.0
                else:
                    factor = min(5.0, max(0.2, 0.9 * pow(en, -0.2)))
                h *= factor
            else:
                h *= max(0.2, 0.9 * pow(en, -0.2))
    return out_arr, status, t
