"""Coordinate-descent kernels compiled with numba.

All kernels work on Gram-form problems and update their coefficient arrays in
place. Convergence is judged by the caller through KKT residuals.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def lasso_gram(G, c, beta, lam, tol, max_sweeps):
    """Minimize 0.5 b'Gb - c'b + lam |b|_1 by cyclic coordinate descent.

    Returns (sweeps, max KKT violation) where the violation is computed from a
    freshly recomputed gradient.
    """
    p = G.shape[0]
    grad = c - G @ beta
    viol = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        for k in range(p):
            gkk = G[k, k]
            if gkk <= 0.0:
                if beta[k] != 0.0:
                    beta[k] = 0.0
                continue
            old = beta[k]
            new = soft(grad[k] + gkk * old, lam) / gkk
            if new != old:
                delta = new - old
                beta[k] = new
                for l in range(p):
                    grad[l] -= G[l, k] * delta
        if sweeps % 10 == 0 or sweeps == max_sweeps:
            grad = c - G @ beta
        viol = 0.0
        for k in range(p):
            if G[k, k] <= 0.0:
                continue
            if beta[k] == 0.0:
                v = abs(grad[k]) - lam
            else:
                v = abs(grad[k] - lam * np.sign(beta[k]))
            if v > viol:
                viol = v
        if viol <= tol:
            grad = c - G @ beta
            viol = 0.0
            for k in range(p):
                if G[k, k] <= 0.0:
                    continue
                if beta[k] == 0.0:
                    v = abs(grad[k]) - lam
                else:
                    v = abs(grad[k] - lam * np.sign(beta[k]))
                if v > viol:
                    viol = v
            if viol <= tol:
                break
    return sweeps, viol


@njit(cache=True)
def group_lasso_gram(G, C, B, lam, tol, max_sweeps):
    """Minimize 0.5 tr(B'GB) - tr(C'B) + lam sum_i |B_i|_2 over rows B_i.

    Each row block has Hessian ``G[i, i] * I`` so the block update is an exact
    group soft-threshold.
    """
    p, q = C.shape
    grad = C - G @ B
    viol = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        for i in range(p):
            gii = G[i, i]
            if gii <= 0.0:
                continue
            u = grad[i] + gii * B[i]
            norm = np.sqrt(np.sum(u * u))
            if norm <= lam:
                new = np.zeros(q)
            else:
                new = (1.0 - lam / norm) * u / gii
            delta = new - B[i]
            if np.any(delta != 0.0):
                B[i] = new
                for l in range(p):
                    grad[l] -= G[l, i] * delta
        if sweeps % 10 == 0 or sweeps == max_sweeps:
            grad = C - G @ B
        viol = _group_kkt(G, grad, B, lam)
        if viol <= tol:
            grad = C - G @ B
            viol = _group_kkt(G, grad, B, lam)
            if viol <= tol:
                break
    return sweeps, viol


@njit(cache=True)
def _group_kkt(G, grad, B, lam):
    p = B.shape[0]
    viol = 0.0
    for i in range(p):
        if G[i, i] <= 0.0:
            continue
        bn = np.sqrt(np.sum(B[i] * B[i]))
        if bn == 0.0:
            v = np.sqrt(np.sum(grad[i] * grad[i])) - lam
        else:
            r = grad[i] - lam * B[i] / bn
            v = np.sqrt(np.sum(r * r))
        if v > viol:
            viol = v
    return viol


@njit(cache=True)
def _weighted_pass(G, H, omega, B, M, lam, active_only):
    p, q = B.shape
    dmax = 0.0
    for k in range(p):
        gkk = G[k, k]
        if gkk <= 0.0:
            continue
        for j in range(q):
            old = B[k, j]
            if active_only and old == 0.0:
                continue
            a = gkk * omega[j, j]
            u = H[k, j] - M[k, j] + a * old
            new = soft(u, lam) / a
            if new != old:
                delta = new - old
                B[k, j] = new
                d = abs(delta) * a
                if d > dmax:
                    dmax = d
                for l in range(p):
                    glk = G[l, k] * delta
                    if glk != 0.0:
                        for m in range(q):
                            M[l, m] += glk * omega[j, m]
    return dmax


@njit(cache=True)
def weighted_lasso_gram(G, H, omega, B, lam, tol, max_sweeps):
    """Minimize 0.5 tr(B' G B omega) - tr(B' H) + lam |B|_1 (``H = Z'Y omega``).

    Coordinate (k, j) has curvature ``G[k,k] * omega[j,j]``; the running
    product ``M = G B omega`` is updated by rank-one corrections. Full passes
    alternate with passes over the nonzero coordinates only; the KKT check
    always follows a full pass on a freshly recomputed ``M``.
    """
    M = G @ B @ omega
    viol = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        _weighted_pass(G, H, omega, B, M, lam, False)
        M = G @ B @ omega
        viol = _weighted_kkt(G, H, M, B, lam)
        if viol <= tol:
            break
        inner = 0
        while sweeps < max_sweeps:
            sweeps += 1
            inner += 1
            dmax = _weighted_pass(G, H, omega, B, M, lam, True)
            if inner % 10 == 0:
                M = G @ B @ omega
            if dmax <= 0.1 * tol:
                break
        M = G @ B @ omega
    return sweeps, viol


@njit(cache=True)
def _weighted_kkt(G, H, M, B, lam):
    p, q = B.shape
    viol = 0.0
    for k in range(p):
        if G[k, k] <= 0.0:
            continue
        for j in range(q):
            g = M[k, j] - H[k, j]
            if B[k, j] == 0.0:
                v = abs(g) - lam
            else:
                v = abs(g + lam * np.sign(B[k, j]))
            if v > viol:
                viol = v
    return viol


@njit(cache=True)
def glasso_sweep(S, W, Beta, lam, inner_tol, inner_max):
    """One pass of block coordinate descent over the columns of ``W``.

    Column ``j`` solves the lasso ``0.5 b'W11 b - b's12 + lam |b|_1`` with the
    diagonal of ``W`` held at ``diag(S)``. ``Beta[:, j]`` keeps the solution
    (with ``Beta[j, j]`` unused) for warm starts. Returns the largest change
    in ``W``.
    """
    q = S.shape[0]
    max_change = 0.0
    idx = np.empty(q - 1, dtype=np.int64)
    for j in range(q):
        m = 0
        for k in range(q):
            if k != j:
                idx[m] = k
                m += 1
        W11 = np.empty((q - 1, q - 1))
        s12 = np.empty(q - 1)
        b = np.empty(q - 1)
        for a in range(q - 1):
            s12[a] = S[idx[a], j]
            b[a] = Beta[idx[a], j]
            for c in range(q - 1):
                W11[a, c] = W[idx[a], idx[c]]
        grad = s12 - W11 @ b
        for it in range(inner_max):
            dmax = 0.0
            for a in range(q - 1):
                waa = W11[a, a]
                old = b[a]
                new = soft(grad[a] + waa * old, lam) / waa
                if new != old:
                    delta = new - old
                    b[a] = new
                    for c in range(q - 1):
                        grad[c] -= W11[c, a] * delta
                    d = abs(delta) * waa
                    if d > dmax:
                        dmax = d
            if dmax < inner_tol:
                break
        w12 = W11 @ b
        for a in range(q - 1):
            i = idx[a]
            Beta[i, j] = b[a]
            change = abs(W[i, j] - w12[a])
            if change > max_change:
                max_change = change
            W[i, j] = w12[a]
            W[j, i] = w12[a]
    return max_change
