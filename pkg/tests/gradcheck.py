"""Central finite differences over network parameters."""
import numpy as np

EPS = 1e-5
# per-entry errors are measured relative to max(|analytic|, |numeric|, FLOOR * max|numeric|)
FLOOR = 1e-3


def numeric_grads(net, loss_fn, eps=EPS):
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            hi = loss_fn()
            p[idx] = old - eps
            lo = loss_fn()
            p[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def max_rel_err(analytic, numeric, floor=FLOOR):
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    scale = floor * max(np.abs(n).max(), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), scale)
    return float(np.max(np.abs(a - n) / denom))
