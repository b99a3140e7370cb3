"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def nearest_neighbors(X, theiler=0):
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    idx = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, np.inf)
    if n < 2:
        return idx, dist
    chunk = max(1, int(2**22 // max(1, n * X.shape[1])))
    cols = np.arange(n)
    for start in range(0, n, chunk):
        rows = np.arange(start, min(n, start + chunk))
        diff = X[rows, None, :] - X[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        d2[np.abs(rows[:, None] - cols[None, :]) <= theiler] = np.inf
        best = np.argmin(d2, axis=1)
        bd = d2[np.arange(rows.size), best]
        ok = np.isfinite(bd)
        idx[rows[ok]] = best[ok]
        dist[rows] = np.sqrt(bd)
    return idx, dist


def hist2d_counts(a, b, lo_a, hi_a, lo_b, hi_b, nx, ny):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inside = (a >= lo_a) & (a <= hi_a) & (b >= lo_b) & (b <= hi_b)
    i = np.floor((a[inside] - lo_a) / (hi_a - lo_a) * nx).astype(np.int64)
    j = np.floor((b[inside] - lo_b) / (hi_b - lo_b) * ny).astype(np.int64)
    np.minimum(i, nx - 1, out=i)
    np.minimum(j, ny - 1, out=j)
    counts = np.bincount(i * ny + j, minlength=nx * ny).reshape(nx, ny)
    return counts.astype(np.int64), int(a.size - inside.sum())


def mlp_rollout(w_flat, b_flat, sizes, relu, z0, d_p, n_steps, limit):
    sizes = [int(s) for s in sizes]
    weights, biases = [], []
    w_off = b_off = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(w_flat[w_off:w_off + n_in * n_out].reshape(n_in, n_out))
        biases.append(b_flat[b_off:b_off + n_out])
        w_off += n_in * n_out
        b_off += n_out

    z0 = np.asarray(z0, dtype=np.float64)
    B = z0.shape[0]
    out = np.full((B, n_steps + 1, d_p), np.nan)
    valid = np.zeros(B, dtype=np.int64)
    for bidx in range(B):
        reg = z0[bidx].copy()
        out[bidx, 0] = reg[:d_p]
        valid[bidx] = 1
        for s in range(n_steps):
            h = reg
            for W, bias, act in zip(weights, biases, relu):
                h = h @ W + bias
                if act:
                    h = np.maximum(h, 0.0)
            if not np.all(np.abs(h) <= limit):
                break
            reg = np.concatenate([h, reg[:-d_p]]) if reg.size > d_p else h.copy()
            out[bidx, s + 1] = h
            valid[bidx] = s + 2
    return out, valid
