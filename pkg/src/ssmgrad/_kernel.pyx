# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward pass: Kalman filter plus first/second-order parameter
sensitivities in tight C loops.

Mirrors the pure-Python reference loop in ``ssmgrad.derivatives`` exactly,
with the time-invariant noise blocks (G Q G' and derivatives) pre-folded by
the caller into NQ/dNQ/d2NQ.  Covariance-like quantities are symmetrized
after every predict and update; the (i, j) curvature grid is computed for
j >= i and mirrored so parameter-pair symmetry is exact.
"""

import numpy as np

from libc.math cimport isfinite

ctypedef double f64


cdef inline f64 dot(const f64[::1] a, const f64[::1] b) noexcept nogil:
    cdef Py_ssize_t i, n = a.shape[0]
    cdef f64 acc = 0.0
    for i in range(n):
        acc += a[i] * b[i]
    return acc


cdef inline void mat_vec(const f64[:, ::1] A, const f64[::1] x, f64[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = A.shape[0], m = A.shape[1]
    cdef f64 acc
    for i in range(n):
        acc = 0.0
        for j in range(m):
            acc += A[i, j] * x[j]
        out[i] = acc


cdef inline void mm_nn(const f64[:, ::1] A, const f64[:, ::1] B, f64[:, ::1] out) noexcept nogil:
    # out = A @ B; i-k-j order keeps the inner loop contiguous in B and out
    cdef Py_ssize_t i, j, k, n = A.shape[0], m = B.shape[1], l = A.shape[1]
    cdef f64 aik
    for i in range(n):
        for j in range(m):
            out[i, j] = 0.0
        for k in range(l):
            aik = A[i, k]
            for j in range(m):
                out[i, j] += aik * B[k, j]


cdef inline void mm_nn_add(const f64[:, ::1] A, const f64[:, ::1] B, f64[:, ::1] out) noexcept nogil:
    # out += A @ B
    cdef Py_ssize_t i, j, k, n = A.shape[0], m = B.shape[1], l = A.shape[1]
    cdef f64 aik
    for i in range(n):
        for k in range(l):
            aik = A[i, k]
            for j in range(m):
                out[i, j] += aik * B[k, j]


cdef inline void mm_nt_add(const f64[:, ::1] A, const f64[:, ::1] B, f64[:, ::1] out) noexcept nogil:
    # out += A @ B.T
    cdef Py_ssize_t i, j, k, n = A.shape[0], m = B.shape[0], l = A.shape[1]
    cdef f64 acc
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(l):
                acc += A[i, k] * B[j, k]
            out[i, j] += acc


cdef inline void add_mat(const f64[:, ::1] A, f64[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            out[i, j] += A[i, j]


# The dF/d2F arrays of the supported model families are row-sparse (only a
# few rows of F carry parameters), so derivative products accumulate over
# flagged rows only.

cdef inline void sparse_mm_add(const f64[:, ::1] A, const unsigned char[:] rows,
                               const f64[:, ::1] B, f64[:, ::1] out) noexcept nogil:
    # out += A @ B over the flagged nonzero rows of A
    cdef Py_ssize_t a, j, c, n = A.shape[0], l = A.shape[1], mb = B.shape[1]
    cdef f64 aac
    for a in range(n):
        if not rows[a]:
            continue
        for c in range(l):
            aac = A[a, c]
            if aac != 0.0:
                for j in range(mb):
                    out[a, j] += aac * B[c, j]


cdef inline void sparse_mt_add(const f64[:, ::1] A, const f64[:, ::1] Bt,
                               const unsigned char[:] rows, f64[:, ::1] out) noexcept nogil:
    # out += A @ Bt.T; flagged rows of Bt are the nonzero columns of Bt.T
    cdef Py_ssize_t a, b, c, n = A.shape[0], mb = Bt.shape[0], l = A.shape[1]
    cdef f64 acc
    for b in range(mb):
        if not rows[b]:
            continue
        for a in range(n):
            acc = 0.0
            for c in range(l):
                acc += A[a, c] * Bt[b, c]
            out[a, b] += acc


cdef inline void sparse_mv_add(const f64[:, ::1] A, const unsigned char[:] rows,
                               const f64[:] x, f64[:] out) noexcept nogil:
    # out += A @ x over the flagged nonzero rows of A
    cdef Py_ssize_t a, c, n = A.shape[0], l = A.shape[1]
    cdef f64 acc
    for a in range(n):
        if not rows[a]:
            continue
        acc = 0.0
        for c in range(l):
            acc += A[a, c] * x[c]
        out[a] += acc


cdef inline void sym_into(const f64[:, ::1] raw, f64[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = raw.shape[0]
    cdef f64 v
    for i in range(n):
        for j in range(i, n):
            v = 0.5 * (raw[i, j] + raw[j, i])
            out[i, j] = v
            out[j, i] = v


def forward(const f64[:, ::1] F, const f64[::1] H, const f64[:, ::1] NQ,
            const f64[:, :, ::1] dF, const f64[:, ::1] dH,
            const f64[:, :, ::1] dNQ, const f64[::1] dR,
            const f64[:, :, :, ::1] d2F, const f64[:, :, ::1] d2H,
            const f64[:, :, :, ::1] d2NQ, const f64[:, ::1] d2R,
            const unsigned char[:, ::1] rF, const unsigned char[:, :, ::1] r2F,
            const f64[::1] y, const f64[::1] x0, const f64[:, ::1] V0,
            int order, bint store_steps,
            bint has_dF, bint has_dH, bint has_dR):
    """Run the filter and sensitivity recursions over the whole series.

    Returns (status, traces): status is -1 on success or the first time
    index with a non-finite innovation/variance.
    """
    cdef Py_ssize_t n_obs = y.shape[0]
    cdef Py_ssize_t m = F.shape[0]
    cdef Py_ssize_t p = dF.shape[0]

    eps_np = np.empty(n_obs)
    r_np = np.empty(n_obs)
    cdef f64[::1] eps_tr = eps_np
    cdef f64[::1] r_tr = r_np
    out = {"eps": eps_np, "r": r_np}

    cdef Py_ssize_t p_eff = p if order >= 1 else 0
    cdef Py_ssize_t p2_eff = p if order >= 2 else 0

    deps_np = np.empty((n_obs, p_eff))
    dr_np = np.empty((n_obs, p_eff))
    cdef f64[:, ::1] deps_tr = deps_np
    cdef f64[:, ::1] dr_tr = dr_np
    if order >= 1:
        out["deps"] = deps_np
        out["dr"] = dr_np

    d2eps_np = np.empty((n_obs, p2_eff, p2_eff))
    d2r_np = np.empty((n_obs, p2_eff, p2_eff))
    cdef f64[:, :, ::1] d2eps_tr = d2eps_np
    cdef f64[:, :, ::1] d2r_tr = d2r_np
    if order >= 2:
        out["d2eps"] = d2eps_np
        out["d2r"] = d2r_np

    cdef Py_ssize_t ns = n_obs if store_steps else 0
    xp_np = np.empty((ns, m)); Vp_np = np.empty((ns, m, m))
    gain_np = np.empty((ns, m))
    xf_np = np.empty((ns, m)); Vf_np = np.empty((ns, m, m))
    cdef f64[:, ::1] xp_st = xp_np
    cdef f64[:, :, ::1] Vp_st = Vp_np
    cdef f64[:, ::1] gain_st = gain_np
    cdef f64[:, ::1] xf_st = xf_np
    cdef f64[:, :, ::1] Vf_st = Vf_np
    if store_steps:
        out.update(x_pred=xp_np, V_pred=Vp_np, gain=gain_np,
                   x_filt=xf_np, V_filt=Vf_np)

    # Filtered / predicted state and derivative buffers.
    cdef f64[::1] x = np.array(x0, dtype=np.float64)
    cdef f64[:, ::1] V = np.array(V0, dtype=np.float64)
    cdef f64[::1] xp = np.empty(m)
    cdef f64[:, ::1] Vp = np.empty((m, m))
    cdef f64[:, ::1] dx = np.zeros((p, m))
    cdef f64[:, :, ::1] dV = np.zeros((p, m, m))
    cdef f64[:, ::1] dxp = np.empty((p, m))
    cdef f64[:, :, ::1] dVp = np.empty((p, m, m))
    cdef f64[:, :, ::1] d2x = np.zeros((p, p, m))
    cdef f64[:, :, :, ::1] d2V = np.zeros((p, p, m, m))
    cdef f64[:, :, ::1] d2xp = np.empty((p, p, m))
    cdef f64[:, :, :, ::1] d2Vp = np.empty((p, p, m, m))

    # Scratch.
    cdef f64[:, ::1] FV = np.empty((m, m))
    cdef f64[:, :, ::1] P = np.empty((p, m, m))      # F dV[i] + dF[i] V
    cdef f64[:, ::1] M1 = np.empty((m, m))
    cdef f64[:, ::1] M2 = np.empty((m, m))
    cdef f64[::1] w = np.empty(m)
    cdef f64[::1] K = np.empty(m)
    cdef f64[:, ::1] u0 = np.empty((p, m))            # dVp[i] H
    cdef f64[:, ::1] VdH = np.empty((p, m))           # Vp dH[i]
    cdef f64[:, ::1] dKn = np.empty((p, m))           # gain numerator derivative
    cdef f64[:, ::1] dK = np.empty((p, m))
    cdef f64[::1] tvec = np.empty(m)
    cdef f64[::1] qvec = np.empty(m)
    cdef f64[::1] d2Kv = np.empty(m)
    cdef f64[::1] scr = np.empty(m)

    cdef Py_ssize_t n, i, j, a, b
    cdef f64 yn, r, epsn, deps_i, dr_i, d2e, d2rv, acc, inv_r, inv_r2, inv_r3
    cdef Py_ssize_t status = -1

    with nogil:
        for n in range(n_obs):
            yn = y[n]

            # ---------- prediction ----------
            mat_vec(F, x, xp)
            mm_nn(F, V, FV)
            for a in range(m):
                for b in range(m):
                    M1[a, b] = NQ[a, b]
            mm_nt_add(FV, F, M1)
            sym_into(M1, Vp)

            if order >= 2:
                for i in range(p):
                    mm_nn(F, dV[i], P[i])
                    if has_dF:
                        sparse_mm_add(dF[i], rF[i], V, P[i])
                for i in range(p):
                    for j in range(i, p):
                        # d2x_pred = dF[j] dx[i] + dF[i] dx[j] + F d2x + d2F x
                        for a in range(m):
                            acc = 0.0
                            for b in range(m):
                                acc += F[a, b] * d2x[i, j, b]
                            d2xp[i, j, a] = acc
                        if has_dF:
                            sparse_mv_add(dF[j], rF[j], dx[i], d2xp[i, j])
                            sparse_mv_add(dF[i], rF[i], dx[j], d2xp[i, j])
                            sparse_mv_add(d2F[i, j], r2F[i, j], x, d2xp[i, j])
                        if j > i:
                            for a in range(m):
                                d2xp[j, i, a] = d2xp[i, j, a]
                        # d2V_pred = (dF_i dV_j + dF_j dV_i + F d2V + d2F V) F'
                        #            + P_i dF_j' + P_j dF_i' + FV d2F' + d2NQ
                        mm_nn(F, d2V[i, j], M1)
                        for a in range(m):
                            for b in range(m):
                                M2[a, b] = d2NQ[i, j, a, b]
                        if has_dF:
                            sparse_mm_add(dF[i], rF[i], dV[j], M1)
                            sparse_mm_add(dF[j], rF[j], dV[i], M1)
                            sparse_mm_add(d2F[i, j], r2F[i, j], V, M1)
                            sparse_mt_add(P[i], dF[j], rF[j], M2)
                            sparse_mt_add(P[j], dF[i], rF[i], M2)
                            sparse_mt_add(FV, d2F[i, j], r2F[i, j], M2)
                        mm_nt_add(M1, F, M2)
                        sym_into(M2, d2Vp[i, j])
                        if j > i:
                            for a in range(m):
                                for b in range(m):
                                    d2Vp[j, i, a, b] = d2Vp[i, j, a, b]

            if order >= 1:
                for i in range(p):
                    # dx_pred = F dx[i] + dF[i] x
                    mat_vec(F, dx[i], dxp[i])
                    if has_dF:
                        sparse_mv_add(dF[i], rF[i], x, dxp[i])
                    # dV_pred = (F dV[i] + dF[i] V) F' + FV dF[i]' + dNQ[i]
                    if order < 2:
                        mm_nn(F, dV[i], P[i])
                        if has_dF:
                            sparse_mm_add(dF[i], rF[i], V, P[i])
                    for a in range(m):
                        for b in range(m):
                            M1[a, b] = dNQ[i, a, b]
                    mm_nt_add(P[i], F, M1)
                    if has_dF:
                        sparse_mt_add(FV, dF[i], rF[i], M1)
                    sym_into(M1, dVp[i])

            # ---------- measurement update ----------
            mat_vec(Vp, H, w)
            r = dot(H, w) + 1.0
            epsn = yn - dot(H, xp)
            if not (isfinite(epsn) and isfinite(r)):
                status = n
                break
            inv_r = 1.0 / r
            inv_r2 = inv_r * inv_r
            inv_r3 = inv_r2 * inv_r
            for a in range(m):
                K[a] = w[a] * inv_r
            eps_tr[n] = epsn
            r_tr[n] = r

            if order >= 1:
                for i in range(p):
                    mat_vec(dVp[i], H, u0[i])
                    dr_i = dot(H, u0[i])
                    deps_i = -dot(H, dxp[i])
                    for a in range(m):
                        dKn[i, a] = u0[i, a]
                    if has_dH:
                        mat_vec(Vp, dH[i], VdH[i])
                        dr_i += 2.0 * dot(dH[i], w)
                        deps_i -= dot(dH[i], xp)
                        for a in range(m):
                            dKn[i, a] += VdH[i, a]
                    if has_dR:
                        dr_i += dR[i]
                    deps_tr[n, i] = deps_i
                    dr_tr[n, i] = dr_i
                    for a in range(m):
                        dK[i, a] = dKn[i, a] * inv_r - K[a] * dr_i * inv_r

            if order >= 2:
                for i in range(p):
                    for j in range(i, p):
                        # second derivatives of the innovation pair
                        d2e = -dot(H, d2xp[i, j])
                        mat_vec(d2Vp[i, j], H, tvec)
                        d2rv = dot(H, tvec)
                        if has_dH:
                            d2e -= dot(dH[i], dxp[j]) + dot(dH[j], dxp[i]) \
                                   + dot(d2H[i, j], xp)
                            d2rv += 2.0 * (dot(dH[i], u0[j]) + dot(dH[j], u0[i])
                                           + dot(d2H[i, j], w)
                                           + dot(dH[i], VdH[j]))
                        if has_dR:
                            d2rv += d2R[i, j]
                        d2eps_tr[n, i, j] = d2e
                        d2eps_tr[n, j, i] = d2e
                        d2r_tr[n, i, j] = d2rv
                        d2r_tr[n, j, i] = d2rv
                        # gain curvature
                        for a in range(m):
                            qvec[a] = tvec[a]
                        if has_dH:
                            mat_vec(dVp[i], dH[j], scr)
                            for a in range(m):
                                qvec[a] += scr[a]
                            mat_vec(dVp[j], dH[i], scr)
                            for a in range(m):
                                qvec[a] += scr[a]
                            mat_vec(Vp, d2H[i, j], scr)
                            for a in range(m):
                                qvec[a] += scr[a]
                        for a in range(m):
                            d2Kv[a] = (qvec[a] * inv_r
                                       - (dKn[i, a] * dr_tr[n, j]
                                          + dKn[j, a] * dr_tr[n, i]
                                          + w[a] * d2rv) * inv_r2
                                       + 2.0 * w[a] * dr_tr[n, i] * dr_tr[n, j] * inv_r3)
                        # filtered curvature of the state mean
                        for a in range(m):
                            acc = (d2xp[i, j, a]
                                   + dK[i, a] * deps_tr[n, j]
                                   + dK[j, a] * deps_tr[n, i]
                                   + K[a] * d2e
                                   + d2Kv[a] * epsn)
                            d2x[i, j, a] = acc
                            d2x[j, i, a] = acc
                        # filtered curvature of the covariance
                        for a in range(m):
                            for b in range(m):
                                M1[a, b] = (d2Vp[i, j, a, b]
                                            - d2Kv[a] * w[b]
                                            - dK[i, a] * u0[j, b]
                                            - dK[j, a] * u0[i, b]
                                            - K[a] * tvec[b])
                        if has_dH:
                            mat_vec(dVp[j], dH[i], scr)
                            mat_vec(dVp[i], dH[j], qvec)   # reuse as scratch
                            mat_vec(Vp, d2H[i, j], d2Kv)   # reuse as scratch
                            for a in range(m):
                                for b in range(m):
                                    M1[a, b] -= (dK[i, a] * VdH[j, b]
                                                 + dK[j, a] * VdH[i, b]
                                                 + K[a] * (d2Kv[b] + scr[b] + qvec[b]))
                        sym_into(M1, d2V[i, j])
                        if j > i:
                            for a in range(m):
                                for b in range(m):
                                    d2V[j, i, a, b] = d2V[i, j, a, b]

            if order >= 1:
                for i in range(p):
                    for a in range(m):
                        dx[i, a] = dxp[i, a] + K[a] * deps_tr[n, i] + dK[i, a] * epsn
                    for a in range(m):
                        for b in range(m):
                            M1[a, b] = dVp[i, a, b] - dK[i, a] * w[b] - K[a] * u0[i, b]
                    if has_dH:
                        for a in range(m):
                            for b in range(m):
                                M1[a, b] -= K[a] * VdH[i, b]
                    sym_into(M1, dV[i])

            # filtered state
            for a in range(m):
                x[a] = xp[a] + K[a] * epsn
            for a in range(m):
                for b in range(m):
                    M1[a, b] = Vp[a, b] - K[a] * w[b]
            sym_into(M1, V)

            if store_steps:
                for a in range(m):
                    xp_st[n, a] = xp[a]
                    gain_st[n, a] = K[a]
                    xf_st[n, a] = x[a]
                    for b in range(m):
                        Vp_st[n, a, b] = Vp[a, b]
                        Vf_st[n, a, b] = V[a, b]

    return status, out
