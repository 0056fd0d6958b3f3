"""Central finite-difference gradient oracle, independent of the tape.

Only forward evaluations are used, so agreement with tape gradients is a
genuine two-route check.
"""

import numpy as np


def numeric_grad(f, arrays, h=1e-5, coords=None):
    """Central-difference gradient of scalar f w.r.t. each array.

    ``arrays`` is a list of float64 ndarrays that f reads. Returns a list
    of gradient arrays. With ``coords`` given as {array_index: [flat
    indices]}, only those coordinates are evaluated (others stay zero).
    """
    grads = []
    for ai, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        indices = range(flat.size) if coords is None else coords.get(ai, [])
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(analytic, numeric):
    """Worst-case relative disagreement, floored to dodge 0/0."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def max_rel_err(analytic_list, numeric_list, coords=None):
    worst = 0.0
    for ai, (a, n) in enumerate(zip(analytic_list, numeric_list)):
        if coords is not None:
            idx = coords.get(ai, [])
            if len(idx) == 0:
                continue
            a = a.reshape(-1)[idx]
            n = n.reshape(-1)[idx]
        worst = max(worst, rel_err(a, n))
    return worst
