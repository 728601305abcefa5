"""Primal-dual interior-point kernel on the homogeneous self-dual embedding.

Standard form handled here::

    minimize    0.5 x'Px + q'x
    subject to  Ax + s = b,   s in K

with K = {0}^n_eq x R_+^n_lin x SOC(d_1) x ... x SOC(d_k), rows ordered the
same way. Search directions use Nesterov-Todd scaling and a Mehrotra
predictor-corrector. Everything below is restricted to numpy constructs
numba can compile, so the same functions serve both backends.
"""

import numpy as np

from .._jit import jit

OPTIMAL = 0
PRIMAL_INFEASIBLE = 1
DUAL_INFEASIBLE = 2
MAX_ITER = 3
NUMERICAL = 4
ALMOST_OPTIMAL = 5


@jit
def _cone_min_eig(v, n_eq, n_lin, soc_dims):
    out = np.inf
    for i in range(n_eq, n_eq + n_lin):
        if v[i] < out:
            out = v[i]
    p = n_eq + n_lin
    for d in soc_dims:
        e = v[p] - np.sqrt(np.dot(v[p + 1 : p + d], v[p + 1 : p + d]))
        if e < out:
            out = e
        p += d
    return out


@jit
def _add_identity(v, t, n_eq, n_lin, soc_dims):
    for i in range(n_eq, n_eq + n_lin):
        v[i] += t
    p = n_eq + n_lin
    for d in soc_dims:
        v[p] += t
        p += d


@jit
def _soc_step(v, dv):
    """Largest a >= 0 keeping v + a*dv in the second-order cone."""
    a = dv[0] * dv[0] - np.dot(dv[1:], dv[1:])
    b = 2.0 * (v[0] * dv[0] - np.dot(v[1:], dv[1:]))
    c = v[0] * v[0] - np.dot(v[1:], v[1:])
    if c <= 0.0 or v[0] <= 0.0:
        return 0.0
    scale = max(abs(a), abs(b), c)
    if abs(a) <= 1e-14 * scale:
        if b < 0.0:
            return -c / b
        return np.inf
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return np.inf
    sq = np.sqrt(disc)
    if b >= 0.0:
        t = -0.5 * (b + sq)
    else:
        t = -0.5 * (b - sq)
    best = np.inf
    r1 = t / a
    if r1 > 0.0 and r1 < best:
        best = r1
    if t != 0.0:
        r2 = c / t
        if r2 > 0.0 and r2 < best:
            best = r2
    return best


@jit
def _step_to_boundary(v, dv, n_eq, n_lin, soc_dims):
    amax = np.inf
    for i in range(n_eq, n_eq + n_lin):
        if dv[i] < 0.0:
            a = -v[i] / dv[i]
            if a < amax:
                amax = a
    p = n_eq + n_lin
    for d in soc_dims:
        a = _soc_step(v[p : p + d], dv[p : p + d])
        if a < amax:
            amax = a
        p += d
    return amax


@jit
def _soc_offsets(soc_dims):
    off = np.zeros(soc_dims.size + 1, dtype=np.int64)
    for k in range(soc_dims.size):
        off[k + 1] = off[k] + soc_dims[k] * soc_dims[k]
    return off


@jit
def nt_scaling(s, z, n_eq, n_lin, soc_dims):
    """Nesterov-Todd scaling: returns (w_lin, W_soc, Winv_soc, lam).

    ``W_soc``/``Winv_soc`` hold the symmetric SOC blocks flattened row-major,
    ``lam`` satisfies lam = W z = W^{-1} s on every cone row.
    """
    m = s.size
    lam = np.zeros(m)
    w_lin = np.zeros(n_lin)
    for k in range(n_lin):
        i = n_eq + k
        w_lin[k] = np.sqrt(s[i] / z[i])
        lam[i] = np.sqrt(s[i] * z[i])
    off = _soc_offsets(soc_dims)
    W_soc = np.zeros(off[-1])
    Winv_soc = np.zeros(off[-1])
    p = n_eq + n_lin
    for k in range(soc_dims.size):
        d = soc_dims[k]
        sk = s[p : p + d]
        zk = z[p : p + d]
        # factored form keeps the cone determinant accurate near the boundary
        s1 = np.sqrt(np.dot(sk[1:], sk[1:]))
        z1 = np.sqrt(np.dot(zk[1:], zk[1:]))
        sn = np.sqrt(max((sk[0] - s1) * (sk[0] + s1), 1e-300))
        zn = np.sqrt(max((zk[0] - z1) * (zk[0] + z1), 1e-300))
        sb = sk / sn
        zb = zk / zn
        gamma = np.sqrt(max(0.5 * (1.0 + np.dot(sb, zb)), 1e-300))
        wb = np.empty(d)
        wb[0] = (sb[0] + zb[0]) / (2.0 * gamma)
        wb[1:] = (sb[1:] - zb[1:]) / (2.0 * gamma)
        eta = np.sqrt(sn / zn)
        W = np.empty((d, d))
        Wi = np.empty((d, d))
        W[0, 0] = wb[0]
        Wi[0, 0] = wb[0]
        for i in range(1, d):
            W[0, i] = wb[i]
            W[i, 0] = wb[i]
            Wi[0, i] = -wb[i]
            Wi[i, 0] = -wb[i]
            for j in range(1, d):
                v = wb[i] * wb[j] / (1.0 + wb[0])
                if i == j:
                    v += 1.0
                W[i, j] = v
                Wi[i, j] = v
        W *= eta
        Wi /= eta
        lam[p : p + d] = W @ zk
        W_soc[off[k] : off[k + 1]] = W.ravel()
        Winv_soc[off[k] : off[k + 1]] = Wi.ravel()
        p += d
    return w_lin, W_soc, Winv_soc, lam


@jit
def _apply_scaling(v, w_lin, Wflat, inverse, n_eq, n_lin, soc_dims):
    out = np.zeros(v.size)
    for k in range(n_lin):
        i = n_eq + k
        if inverse:
            out[i] = v[i] / w_lin[k]
        else:
            out[i] = v[i] * w_lin[k]
    off = _soc_offsets(soc_dims)
    p = n_eq + n_lin
    for k in range(soc_dims.size):
        d = soc_dims[k]
        W = Wflat[off[k] : off[k + 1]].reshape((d, d))
        out[p : p + d] = W @ v[p : p + d]
        p += d
    return out


@jit
def _jordan_prod(u, v, n_eq, n_lin, soc_dims):
    out = np.zeros(u.size)
    for i in range(n_eq, n_eq + n_lin):
        out[i] = u[i] * v[i]
    p = n_eq + n_lin
    for d in soc_dims:
        out[p] = np.dot(u[p : p + d], v[p : p + d])
        out[p + 1 : p + d] = u[p] * v[p + 1 : p + d] + v[p] * u[p + 1 : p + d]
        p += d
    return out


@jit
def _jordan_div(lam, r, n_eq, n_lin, soc_dims):
    """Solve lam o d = r for d on the cone rows."""
    out = np.zeros(r.size)
    for i in range(n_eq, n_eq + n_lin):
        out[i] = r[i] / lam[i]
    p = n_eq + n_lin
    for d in soc_dims:
        l0 = lam[p]
        l1 = lam[p + 1 : p + d]
        r0 = r[p]
        r1 = r[p + 1 : p + d]
        d0 = (l0 * r0 - np.dot(l1, r1)) / (l0 * l0 - np.dot(l1, l1))
        out[p] = d0
        out[p + 1 : p + d] = (r1 - d0 * l1) / l0
        p += d
    return out


@jit
def _identity_vec(m, n_eq, n_lin, soc_dims):
    e = np.zeros(m)
    _add_identity(e, 1.0, n_eq, n_lin, soc_dims)
    return e


@jit
def _scale_rows(A, w_lin, Wflat, n_eq, n_lin, soc_dims):
    """Apply the block scaling to the rows of A (2-D) on the cone rows."""
    out = A.copy()
    for k in range(n_lin):
        out[n_eq + k] = A[n_eq + k] * w_lin[k]
    off = _soc_offsets(soc_dims)
    p = n_eq + n_lin
    for k in range(soc_dims.size):
        d = soc_dims[k]
        W = Wflat[off[k] : off[k + 1]].reshape((d, d))
        out[p : p + d] = W @ A[p : p + d]
        p += d
    return out


@jit
def _solve_refined(M0, Minv, rhs, n_refine):
    sol = Minv @ rhs
    for _ in range(n_refine):
        sol = sol + Minv @ (rhs - M0 @ sol)
    return sol


@jit
def _direction(M0, Minv, A, b, x, tau, kappa, w_lin, W_soc, Winv_soc, lam,
               rx, rz, rtau, rc, rtk, weight, n_eq, n_lin, soc_dims):
    """Newton direction in the scaled dual variable dz~ = W dz."""
    n = x.size
    m = b.size
    d_s = _jordan_div(lam, rc, n_eq, n_lin, soc_dims)
    inv_w = 1.0 / w_lin
    rhs = np.empty(n + m + 1)
    rhs[:n] = -weight * rx
    r2 = _apply_scaling(-weight * rz, inv_w, Winv_soc, False, n_eq, n_lin, soc_dims) - d_s
    r2[:n_eq] = -weight * rz[:n_eq]
    rhs[n : n + m] = r2
    rhs[n + m] = -weight * rtau - rtk / tau
    sol = _solve_refined(M0, Minv, rhs, 2)
    dx = sol[:n].copy()
    dzt = sol[n : n + m].copy()
    dtau = sol[n + m]
    dz = _apply_scaling(dzt, inv_w, Winv_soc, False, n_eq, n_lin, soc_dims)
    dz[:n_eq] = dzt[:n_eq]
    # ds from the linearized primal rows; going through W loses accuracy
    # when a cone iterate is close to its boundary
    ds = -weight * rz - A @ dx + b * dtau
    ds[:n_eq] = 0.0
    dkappa = (rtk - kappa * dtau) / tau
    return dx, dz, ds, dtau, dkappa


@jit
def _max_step(s, ds, z, dz, tau, dtau, kappa, dkappa, n_eq, n_lin, soc_dims):
    a = min(_step_to_boundary(s, ds, n_eq, n_lin, soc_dims),
            _step_to_boundary(z, dz, n_eq, n_lin, soc_dims))
    if dtau < 0.0:
        a = min(a, -tau / dtau)
    if dkappa < 0.0:
        a = min(a, -kappa / dkappa)
    return a


@jit
def _norm_inf(v):
    if v.size == 0:
        return 0.0
    return np.max(np.abs(v))


@jit
def _converged(P, q, A, b, x, s, z, tau, eps_abs, eps_rel):
    xs = x / tau
    ss = s / tau
    zs = z / tau
    Pxs = P @ xs
    Axs = A @ xs
    Atz = A.T @ zs
    pres = _norm_inf(Axs + ss - b)
    dres = _norm_inf(Pxs + Atz + q)
    xPx = np.dot(xs, Pxs)
    pobj = 0.5 * xPx + np.dot(q, xs)
    dobj = -0.5 * xPx - np.dot(b, zs)
    gap = abs(pobj - dobj)
    ptol = eps_abs + eps_rel * max(1.0, _norm_inf(b), _norm_inf(Axs), _norm_inf(ss))
    dtol = eps_abs + eps_rel * max(1.0, _norm_inf(q), _norm_inf(Pxs), _norm_inf(Atz))
    # the solution error near an active cone scales like sqrt(gap)
    gtol = 1e-2 * max(eps_abs, eps_rel * min(abs(pobj), abs(dobj)))
    ok = pres <= ptol and dres <= dtol and gap <= gtol
    return ok, pres, dres, gap


@jit
def ipm_solve(P, q, A, b, n_eq, n_lin, soc_dims, max_iter, eps_abs, eps_rel,
              eps_inf, reg):
    """Returns (status, x, s, z, iterations, pres, dres, gap, certificate)."""
    n = q.size
    m = b.size
    nu = n_lin + soc_dims.size

    # Initial point: least-squares primal slack and dual, shifted into K.
    K = np.zeros((n + m, n + m))
    K[:n, :n] = P
    for i in range(n):
        K[i, i] += 1e-8
    K[:n, n:] = A.T
    K[n:, :n] = A
    for i in range(m):
        K[n + i, n + i] = -1e-8 if i < n_eq else -1.0
    rhs = np.zeros(n + m)
    rhs[n:] = b
    sol = np.linalg.solve(K, rhs)
    x = sol[:n].copy()
    s = -sol[n:]
    s[:n_eq] = 0.0
    rhs[:] = 0.0
    rhs[:n] = -q
    sol = np.linalg.solve(K, rhs)
    z = sol[n:].copy()
    ap = _cone_min_eig(s, n_eq, n_lin, soc_dims)
    if ap < 1.0:
        _add_identity(s, 1.0 - ap, n_eq, n_lin, soc_dims)
    ad = _cone_min_eig(z, n_eq, n_lin, soc_dims)
    if ad < 1.0:
        _add_identity(z, 1.0 - ad, n_eq, n_lin, soc_dims)
    tau = 1.0
    kappa = 1.0

    e = _identity_vec(m, n_eq, n_lin, soc_dims)
    status = MAX_ITER
    pres = np.inf
    dres = np.inf
    gap = np.inf
    cert = np.inf
    it = 0
    M0 = np.zeros((n + m + 1, n + m + 1))
    # best iterate by scaled residual, returned if the method stalls
    best = np.inf
    bx = x.copy()
    bs_ = s.copy()
    bz = z.copy()
    btau = tau
    while it < max_iter:
        Px = P @ x
        rx = Px + A.T @ z + q * tau
        rz = A @ x + s - b * tau
        xPx = np.dot(x, Px)
        rtau = kappa + np.dot(q, x) + np.dot(b, z) + xPx / tau

        ok, pres, dres, gap = _converged(P, q, A, b, x, s, z, tau, eps_abs, eps_rel)
        if ok:
            status = OPTIMAL
            break
        score = max(pres, dres, gap) / tau
        if score < best:
            best = score
            bx[:] = x
            bs_[:] = s
            bz[:] = z
            btau = tau
        btz = np.dot(b, z)
        if btz < 0.0:
            cert = _norm_inf(A.T @ z) / -btz
            if cert <= eps_inf:
                status = PRIMAL_INFEASIBLE
                break
        qtx = np.dot(q, x)
        if qtx < 0.0:
            r = max(_norm_inf(Px), _norm_inf(A @ x + s)) / -qtx
            if r <= eps_inf:
                status = DUAL_INFEASIBLE
                cert = r
                break

        mu = (np.dot(s[n_eq:], z[n_eq:]) + tau * kappa) / (nu + 1)
        w_lin, W_soc, Winv_soc, lam = nt_scaling(s, z, n_eq, n_lin, soc_dims)

        xi = x / tau
        Pxi = P @ xi
        inv_w = 1.0 / w_lin
        As = _scale_rows(A, inv_w, Winv_soc, n_eq, n_lin, soc_dims)
        bs = _apply_scaling(b, inv_w, Winv_soc, False, n_eq, n_lin, soc_dims)
        bs[:n_eq] = b[:n_eq]
        M0[:, :] = 0.0
        M0[:n, :n] = P
        M0[:n, n : n + m] = As.T
        M0[:n, n + m] = q
        M0[n : n + m, :n] = As
        M0[n : n + m, n + m] = -bs
        M0[n + m, :n] = q + 2.0 * Pxi
        M0[n + m, n : n + m] = bs
        M0[n + m, n + m] = -(np.dot(xi, Pxi) + kappa / tau)
        for i in range(n_eq, m):
            M0[n + i, n + i] = -1.0
        M = M0.copy()
        for i in range(n):
            M[i, i] += reg
        for i in range(n_eq):
            M[n + i, n + i] -= reg
        if not np.all(np.isfinite(M)):
            # scaling broke down on the cone boundary; keep the last iterate
            status = NUMERICAL
            break
        Minv = np.linalg.inv(M)

        # predictor
        rc = -_jordan_prod(lam, lam, n_eq, n_lin, soc_dims)
        rtk = -tau * kappa
        dx, dz, ds, dtau, dkappa = _direction(
            M0, Minv, A, b, x, tau, kappa, w_lin, W_soc, Winv_soc, lam,
            rx, rz, rtau, rc, rtk, 1.0, n_eq, n_lin, soc_dims)
        a_aff = min(1.0, _max_step(s, ds, z, dz, tau, dtau, kappa, dkappa,
                                   n_eq, n_lin, soc_dims))
        sigma = (1.0 - a_aff) ** 3

        # corrector
        Winv_ds = _apply_scaling(ds, w_lin, Winv_soc, True, n_eq, n_lin, soc_dims)
        # W^{-1} on SOC rows uses the stored inverse block, on linear rows 1/w
        W_dz = _apply_scaling(dz, w_lin, W_soc, False, n_eq, n_lin, soc_dims)
        rc = (-_jordan_prod(lam, lam, n_eq, n_lin, soc_dims)
              - _jordan_prod(Winv_ds, W_dz, n_eq, n_lin, soc_dims)
              + sigma * mu * e)
        rtk = -tau * kappa - dtau * dkappa + sigma * mu
        dx, dz, ds, dtau, dkappa = _direction(
            M0, Minv, A, b, x, tau, kappa, w_lin, W_soc, Winv_soc, lam,
            rx, rz, rtau, rc, rtk, 1.0 - sigma, n_eq, n_lin, soc_dims)
        amax = _max_step(s, ds, z, dz, tau, dtau, kappa, dkappa, n_eq, n_lin, soc_dims)
        alpha = min(1.0, 0.99 * amax)
        it += 1
        if not (alpha > 1e-12) or not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dz))
                                       and np.all(np.isfinite(ds))):
            status = NUMERICAL
            break
        x = x + alpha * dx
        z = z + alpha * dz
        s = s + alpha * ds
        s[:n_eq] = 0.0
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    if status == MAX_ITER or status == NUMERICAL:
        ok, pres, dres, gap = _converged(P, q, A, b, x, s, z, tau, 1e-6, 1e-6)
        if not ok and best < np.inf:
            okb, pb, db, gb = _converged(P, q, A, b, bx, bs_, bz, btau, 1e-6, 1e-6)
            if okb:
                ok, pres, dres, gap = okb, pb, db, gb
                x, s, z, tau = bx, bs_, bz, btau
        if ok:
            status = ALMOST_OPTIMAL

    if status == PRIMAL_INFEASIBLE:
        btz = np.dot(b, z)
        return status, x, s, z / -btz, it, pres, dres, gap, cert
    if status == DUAL_INFEASIBLE:
        qtx = np.dot(q, x)
        return status, x / -qtx, s / -qtx, z, it, pres, dres, gap, cert
    return status, x / tau, s / tau, z / tau, it, pres, dres, gap, cert
