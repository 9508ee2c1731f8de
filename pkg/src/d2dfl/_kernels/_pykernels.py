"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` running the same
algorithm with the same iteration counts, so the two backends agree to
floating-point rounding.
"""
from __future__ import annotations

import numpy as np

NBISECT = 60
DYKSTRA_MAX_ITER = 200
DYKSTRA_TOL = 1e-9
MIN_STEP = 1e-16
MAX_STEP = 1e8


def lloyd(points, centroids, max_iters, tol):
    """Lloyd iterations from the given starting centroids.

    Returns ``(centroids, labels, n_iter)``. Centroids are the means of the
    returned labels. Requires ``k <= n``; an empty cluster steals the point
    farthest from its own centroid (among clusters with more than one point).
    """
    X = np.ascontiguousarray(points, dtype=np.float64)
    C = np.array(centroids, dtype=np.float64, copy=True)
    n, k = X.shape[0], C.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, minlength=k)
        if (counts == 0).any():
            own = d2[np.arange(n), labels].copy()
            for e in np.flatnonzero(counts == 0):
                own_masked = np.where(counts[labels] > 1, own, -1.0)
                far = int(np.argmax(own_masked))
                counts[labels[far]] -= 1
                labels[far] = e
                counts[e] += 1
                own[far] = 0.0
        new_c = np.zeros_like(C)
        for m in range(X.shape[1]):
            new_c[:, m] = np.bincount(labels, weights=X[:, m], minlength=k)
        new_c /= counts[:, None]
        shift = float(np.sqrt(((new_c - C) ** 2).sum(axis=1)).max())
        C = new_c
        if shift < tol:
            break
    return C, labels, n_iter


def _proj_family(z, coef, group, rhs, n_groups):
    # projection onto [0,1]^J intersected with {sum_{j in g} coef_j x_j <= rhs_g}
    x = np.clip(z, 0.0, 1.0)
    if n_groups == 0:
        return x
    s = np.bincount(group, weights=coef * x, minlength=n_groups)
    viol = s > rhs
    if not viol.any():
        return x
    ratio = np.where(coef > 0, z / np.where(coef > 0, coef, 1.0), 0.0)
    hi = np.zeros(n_groups)
    np.maximum.at(hi, group, ratio)
    lo = np.zeros(n_groups)
    for _ in range(NBISECT):
        mid = 0.5 * (lo + hi)
        xm = np.clip(z - mid[group] * coef, 0.0, 1.0)
        sm = np.bincount(group, weights=coef * xm, minlength=n_groups)
        over = sm > rhs
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)
    lam = np.where(viol, hi, 0.0)
    return np.clip(z - lam[group] * coef, 0.0, 1.0)


def project(z, a, recv, cap, e, send, budget):
    """Euclidean projection onto box, receiver and sender half-spaces.

    Dykstra alternation between the two separable families, then a final
    pass that restores exact feasibility by shrinking offending senders.
    """
    z = np.asarray(z, dtype=np.float64)
    n_recv, n_send = len(cap), len(budget)
    y = _proj_family(z, a, recv, cap, n_recv)
    if n_send == 0 or (np.bincount(send, weights=e * y, minlength=n_send) <= budget).all():
        return y
    x = z.copy()
    p = np.zeros_like(z)
    q = np.zeros_like(z)
    for _ in range(DYKSTRA_MAX_ITER):
        y = _proj_family(x + p, a, recv, cap, n_recv)
        p = x + p - y
        xn = _proj_family(y + q, e, send, budget, n_send)
        q = y + q - xn
        done = np.abs(xn - x).max() <= DYKSTRA_TOL and np.abs(xn - y).max() <= 1e-8
        x = xn
        if done:
            break
    x = _proj_family(x, a, recv, cap, n_recv)
    se = np.bincount(send, weights=e * x, minlength=n_send)
    factor = np.where(se > budget, budget / np.where(se > 0, se, 1.0), 1.0)
    return x * factor[send]


def _terms(x, a, recv, d0):
    return d0 + np.bincount(recv, weights=a * x, minlength=len(d0))


def objective(x, a, e, recv, d0, pcost, alpha, beta_e, gamma_e, kappa, grad,
              d_unsampled, n_sampled):
    D = _terms(x, a, recv, d0)
    dn = D.sum() + d_unsampled
    f = alpha * (d_unsampled * grad / dn + kappa / n_sampled * np.sum(D ** -0.5))
    return float(f + beta_e * np.dot(pcost, D) + gamma_e * np.dot(e, x))


def _gradient(x, a, e, recv, d0, pcost, alpha, beta_e, gamma_e, kappa, grad,
              d_unsampled, n_sampled):
    D = _terms(x, a, recv, d0)
    dn = D.sum() + d_unsampled
    per_recv = alpha * (-d_unsampled * grad / dn ** 2
                        - 0.5 * kappa / n_sampled * D ** -1.5) + beta_e * pcost
    return a * per_recv[recv] + gamma_e * e


def pgd_solve(a, e, recv, send, d0, pcost, cap, budget, alpha, beta_e, gamma_e,
              kappa, grad, d_unsampled, n_sampled, x0, max_iter, tol,
              record_history=False):
    """Projected gradient descent with backtracking for one offload step.

    Returns ``(x, objective, n_iter, history)``; ``history`` lists the
    objective after every accepted iteration (empty unless requested).
    """
    a = np.asarray(a, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    recv = np.asarray(recv, dtype=np.int64)
    send = np.asarray(send, dtype=np.int64)
    d0 = np.asarray(d0, dtype=np.float64)
    pcost = np.asarray(pcost, dtype=np.float64)
    cap = np.asarray(cap, dtype=np.float64)
    budget = np.asarray(budget, dtype=np.float64)
    args = (a, e, recv, d0, pcost, alpha, beta_e, gamma_e, kappa, grad,
            d_unsampled, n_sampled)

    x = project(np.asarray(x0, dtype=np.float64), a, recv, cap, e, send, budget)
    f = objective(x, *args)
    g = _gradient(x, *args)
    history = [f] if record_history else []
    # first trial step moves the largest coordinate across the whole box
    gmax = float(np.max(np.abs(g))) if len(g) else 0.0
    step = min(1.0 / gmax, MAX_STEP) if gmax > 0 else 1.0
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        accepted = False
        while step > MIN_STEP:
            xn = project(x - step * g, a, recv, cap, e, send, budget)
            d = xn - x
            dd = float(np.dot(d, d))
            if dd == 0.0:
                break
            fn = objective(xn, *args)
            if fn <= f and fn <= f + float(np.dot(g, d)) + dd / (2.0 * step):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        change = f - fn
        x, f = xn, fn
        g = _gradient(x, *args)
        if record_history:
            history.append(f)
        if change < tol:
            break
        step = min(step * 2.0, MAX_STEP)
    return x, f, n_iter, history
