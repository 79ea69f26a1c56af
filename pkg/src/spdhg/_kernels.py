"""Compiled inner loops.

Everything here operates on raw CSR arrays and float64 vectors so it can be
shared by the public wrappers and the solver loops. Summation order is fixed
(sequential, left to right) and fastmath is off, so results are bitwise
reproducible.
"""

import math

import numba as nb
import numpy as np

LOGISTIC = 0
LEAST_SQUARES = 1

SET_L2 = 0
SET_BOX = 1
SET_LINF = 2

GENERAL_CONVEX = 0
STRONGLY_CONVEX_UNIFORM = 1
STRONGLY_CONVEX_NONUNIFORM = 2

STEP_SCHEDULE = 0
STEP_CONSTANT = 1

jit = nb.njit(cache=True, fastmath=False, nogil=True)


# -- sparse kernels ----------------------------------------------------------

@jit
def csr_matvec(indptr, indices, data, v, out):
    for i in range(indptr.shape[0] - 1):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * v[indices[p]]
        out[i] = acc
    return out


@jit
def csr_rmatvec(indptr, indices, data, v, out):
    out[:] = 0.0
    for i in range(indptr.shape[0] - 1):
        vi = v[i]
        for p in range(indptr[i], indptr[i + 1]):
            out[indices[p]] += data[p] * vi
    return out


@jit
def dot(u, v):
    acc = 0.0
    for j in range(u.shape[0]):
        acc += u[j] * v[j]
    return acc


@jit
def norm2(v):
    return math.sqrt(dot(v, v))


# -- losses ------------------------------------------------------------------

@jit
def row_dot(indptr, indices, data, i, x):
    acc = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        acc += data[p] * x[indices[p]]
    return acc


@jit
def sample_loss(loss, margin, label):
    if loss == LOGISTIC:
        u = label * margin
        # log(1 + exp(-u)) without overflow for either sign of u
        if u > 0.0:
            return math.log1p(math.exp(-u))
        return -u + math.log1p(math.exp(u))
    r = margin - label
    return 0.5 * r * r


@jit
def sample_coef(loss, margin, label):
    """Scalar c with grad_x l(x, (a, b)) = c * a."""
    if loss == LOGISTIC:
        z = -label * margin
        if z >= 0.0:
            sig = 1.0 / (1.0 + math.exp(-z))
        else:
            e = math.exp(z)
            sig = e / (1.0 + e)
        return -label * sig
    return margin - label


@jit
def mean_loss(indptr, indices, data, labels, loss, gamma, x, lo, hi):
    acc = 0.0
    for i in range(lo, hi):
        acc += sample_loss(loss, row_dot(indptr, indices, data, i, x), labels[i])
    val = acc / (hi - lo)
    if gamma > 0.0:
        val += 0.5 * gamma * dot(x, x)
    return val


@jit
def batch_gradient(indptr, indices, data, labels, loss, gamma, x, rows, g):
    """Mean gradient over the listed rows, plus the ridge term.

    A single-element ``rows`` gives the per-sample gradient; all rows give
    the full gradient. Both go through the same arithmetic.
    """
    g[:] = 0.0
    nnz = 0
    for r in range(rows.shape[0]):
        i = rows[r]
        c = sample_coef(loss, row_dot(indptr, indices, data, i, x), labels[i])
        for p in range(indptr[i], indptr[i + 1]):
            g[indices[p]] += c * data[p]
        nnz += indptr[i + 1] - indptr[i]
    m = float(rows.shape[0])
    for j in range(g.shape[0]):
        g[j] = g[j] / m
    if gamma > 0.0:
        for j in range(g.shape[0]):
            g[j] += gamma * x[j]
    # dot + axpy per row, one scale and one ridge axpy per coordinate
    return 4 * nnz + 3 * g.shape[0]


# -- projections ---------------------------------------------------------------

@jit
def project_inplace(code, radius, lo, hi, v):
    """Project ``v`` in place; returns False if a non-finite entry was seen."""
    finite = True
    if code == SET_L2:
        nv = norm2(v)
        if not math.isfinite(nv):
            return False
        if nv > radius:
            scale = radius / nv
            orig = v.copy()
            for j in range(v.shape[0]):
                v[j] = orig[j] * scale
            while norm2(v) > radius:
                scale = np.nextafter(scale, 0.0)
                for j in range(v.shape[0]):
                    v[j] = orig[j] * scale
    elif code == SET_LINF:
        for j in range(v.shape[0]):
            if not math.isfinite(v[j]):
                finite = False
            if v[j] > radius:
                v[j] = radius
            elif v[j] < -radius:
                v[j] = -radius
    else:
        for j in range(v.shape[0]):
            if not math.isfinite(v[j]):
                finite = False
            if v[j] > hi[j]:
                v[j] = hi[j]
            elif v[j] < lo[j]:
                v[j] = lo[j]
    return finite


# -- schedules -----------------------------------------------------------------

@jit
def step_size(regime, k, L, mu):
    if regime == GENERAL_CONVEX:
        return 1.0 / (math.sqrt(k + 1.0) + L)
    if regime == STRONGLY_CONVEX_UNIFORM:
        return 1.0 / (mu * (k + 1.0) + L)
    return 2.0 / (mu * (k + 2.0) + 2.0 * L)


@jit
def averaging_weight(regime, k, t):
    if regime == STRONGLY_CONVEX_NONUNIFORM:
        return 2.0 * (k + 1.0) / ((t + 1.0) * (t + 2.0))
    return 1.0 / (t + 1.0)


# -- solver loops -----------------------------------------------------------------

@jit
def pdhg_segment(
    a_ptr, a_idx, a_val, labels, loss, gamma,
    f_ptr, f_idx, f_val,
    x_code, x_radius, x_lo, x_hi,
    y_code, y_radius,
    s, regime, L, mu, horizon, step_rule, beta_const,
    samples, full_rows,
    x, y, xacc, yacc, wacc, k_start, k_end, counters,
):
    """Run PDHG iterations k_start..k_end-1 in place.

    ``samples`` holds one row index per iteration (stochastic oracle, indexed
    by k - k_start); when it is empty ``full_rows`` is used every iteration.
    Returns the iteration at which a non-finite iterate appeared, or -1.
    ``wacc`` is a length-1 array carrying the running weight total.
    """
    d = x.shape[0]
    l = y.shape[0]
    nnz_f = f_ptr[-1]
    fx = np.empty(l)
    fty = np.empty(d)
    g = np.empty(d)
    one = np.empty(1, dtype=np.int64)
    stochastic = samples.shape[0] > 0
    for k in range(k_start, k_end):
        # dual ascent step, closed form: Π_Y(y + s F x)
        csr_matvec(f_ptr, f_idx, f_val, x, fx)
        for i in range(l):
            y[i] = y[i] + s * fx[i]
        ok = project_inplace(y_code, y_radius, x_lo, x_hi, y)
        ops = 2 * nnz_f + 3 * l
        if stochastic:
            one[0] = samples[k - k_start]
            ops += batch_gradient(a_ptr, a_idx, a_val, labels, loss, gamma, x, one, g)
        else:
            ops += batch_gradient(a_ptr, a_idx, a_val, labels, loss, gamma, x, full_rows, g)
        csr_rmatvec(f_ptr, f_idx, f_val, y, fty)
        if step_rule == STEP_CONSTANT:
            beta = beta_const
        else:
            beta = step_size(regime, k, L, mu)
        for j in range(d):
            x[j] = x[j] - beta * (g[j] + fty[j])
        ok = project_inplace(x_code, x_radius, x_lo, x_hi, x) and ok
        w = averaging_weight(regime, k, horizon)
        for j in range(d):
            xacc[j] += w * x[j]
        for i in range(l):
            yacc[i] += w * y[i]
        wacc[0] += w
        ops += 2 * nnz_f + 6 * d + 2 * l
        counters[0] += ops
        counters[1] += 1
        if not ok:
            return k
    return -1


@jit
def reference_loop(
    a_ptr, a_idx, a_val, labels, loss, gamma,
    f_ptr, f_idx, f_val,
    x_code, x_radius, x_lo, x_hi,
    y_code, y_radius,
    s, beta, full_rows, x, y, max_iters, tol,
):
    """Constant-step full-gradient PDHG until the fixed-point residual drops below tol."""
    d = x.shape[0]
    l = y.shape[0]
    fx = np.empty(l)
    fty = np.empty(d)
    g = np.empty(d)
    x_old = np.empty(d)
    y_old = np.empty(l)
    residual = np.inf
    best = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        x_old[:] = x
        y_old[:] = y
        csr_matvec(f_ptr, f_idx, f_val, x, fx)
        for i in range(l):
            y[i] = y[i] + s * fx[i]
        project_inplace(y_code, y_radius, x_lo, x_hi, y)
        batch_gradient(a_ptr, a_idx, a_val, labels, loss, gamma, x, full_rows, g)
        csr_rmatvec(f_ptr, f_idx, f_val, y, fty)
        for j in range(d):
            x[j] = x[j] - beta * (g[j] + fty[j])
        if not project_inplace(x_code, x_radius, x_lo, x_hi, x):
            return it, np.nan, best
        dx = 0.0
        for j in range(d):
            dx += (x[j] - x_old[j]) ** 2
        dy = 0.0
        for i in range(l):
            dy += (y[i] - y_old[i]) ** 2
        residual = math.sqrt(dx) + math.sqrt(dy)
        if residual < best:
            best = residual
        if residual < tol:
            break
    return it, residual, best


@jit
def gadmm_segment(
    a_ptr, a_idx, a_val, labels, loss, gamma,
    f_ptr, f_idx, f_val,
    x_code, x_radius, x_lo, x_hi,
    y_code, y_radius,
    rho, full_rows,
    x, z, lam, k_start, k_end, counters,
):
    """Gradient-based ADMM on min l(x) + r(z) s.t. z = Fx, r the support function of Y.

    z-update: prox of r/rho at Fx + lam/rho, via Moreau (w - Π_Y(rho w)/rho);
    for the l-inf ball this is soft-thresholding at radius/rho.
    """
    d = x.shape[0]
    l = z.shape[0]
    nnz_f = f_ptr[-1]
    fx = np.empty(l)
    w = np.empty(l)
    u = np.empty(l)
    ftl = np.empty(d)
    ftu = np.empty(d)
    g = np.empty(d)
    for k in range(k_start, k_end):
        csr_matvec(f_ptr, f_idx, f_val, x, fx)
        for i in range(l):
            w[i] = fx[i] + lam[i] / rho
            u[i] = rho * w[i]
        project_inplace(y_code, y_radius, x_lo, x_hi, u)
        for i in range(l):
            z[i] = w[i] - u[i] / rho
        ops = 2 * nnz_f + 6 * l
        ops += batch_gradient(a_ptr, a_idx, a_val, labels, loss, gamma, x, full_rows, g)
        csr_rmatvec(f_ptr, f_idx, f_val, lam, ftl)
        for i in range(l):
            u[i] = z[i] - fx[i]
        csr_rmatvec(f_ptr, f_idx, f_val, u, ftu)
        for j in range(d):
            x[j] = x[j] - rho * (g[j] + ftl[j] - rho * ftu[j])
        ok = project_inplace(x_code, x_radius, x_lo, x_hi, x)
        # multiplier step needs F x^{k+1}
        csr_matvec(f_ptr, f_idx, f_val, x, fx)
        for i in range(l):
            lam[i] = lam[i] - rho * (z[i] - fx[i])
        ops += 6 * nnz_f + l + 6 * d + 3 * l
        counters[0] += ops
        counters[1] += 1
        if not ok:
            return k
    return -1
