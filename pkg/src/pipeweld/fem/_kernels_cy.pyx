# cython: language_level=3
"""Compiled element assembly kernels.

Signature-compatible with `kernels_py`; see that module for the
conventions (Voigt order, engineering shear, explicit out-of-plane
component).
"""
import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport exp, fabs, pow, sqrt

cnp.import_array()

DEF NEWTON_TOL = 1.0e-10
DEF NEWTON_MAX = 60
DEF BISECT_MAX = 80


@cython.boundscheck(False)
@cython.wraparound(False)
cdef inline double _solve_dp(double svm_tr, double acc, double g_over,
                             double E, double sy, double n_hard,
                             double G3) nogil:
    cdef double dp = 0.0, x, sf, dsf, r, tol, lo, hi, mid
    cdef int it
    tol = NEWTON_TOL * (svm_tr if svm_tr > sy else sy)
    for it in range(NEWTON_MAX):
        x = 1.0 + E * (acc + dp) / sy
        sf = sy * pow(x, n_hard)
        dsf = n_hard * E * pow(x, n_hard - 1.0)
        r = svm_tr - G3 * dp - g_over * sf
        if fabs(r) <= tol:
            return dp
        dp = dp + r / (G3 + g_over * dsf)
    # bisection fallback; the residual is decreasing with a bracketed root
    lo = 0.0
    hi = svm_tr / G3
    for it in range(BISECT_MAX):
        mid = 0.5 * (lo + hi)
        x = 1.0 + E * (acc + mid) / sy
        r = svm_tr - G3 * mid - g_over * sy * pow(x, n_hard)
        if r > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@cython.boundscheck(False)
@cython.wraparound(False)
def mech_batch(double[:, :, :, ::1] grads, double[:, ::1] detJw,
               double[:, ::1] N, double[:, ::1] ue,
               double[:, :, ::1] eps_extra, double[:, :, ::1] eps_p_old,
               double[:, ::1] acc_old, phie_obj,
               double[:, ::1] E_qp, double[:, ::1] sy_qp,
               double[::1] nu_e, double[::1] n_e, double[::1] beta_e,
               double kres, active_obj):
    cdef Py_ssize_t nel = grads.shape[0]
    cdef Py_ssize_t nqp = grads.shape[1]
    cdef Py_ssize_t nn = grads.shape[2]
    cdef Py_ssize_t ndofe = 2 * nn

    Ke_np = np.zeros((nel, ndofe, ndofe))
    fint_np = np.zeros((nel, ndofe))
    eps_p_np = np.array(eps_p_old, copy=True)
    acc_np = np.array(acc_old, copy=True)
    eps_e_np = np.zeros((nel, nqp, 4))
    sig_np = np.zeros((nel, nqp, 4))
    psi_plus_np = np.zeros((nel, nqp))
    psi_p_np = np.zeros((nel, nqp))
    wp_np = np.zeros((nel, nqp))
    sigh_np = np.zeros((nel, nqp))

    cdef double[:, :, ::1] Ke = Ke_np
    cdef double[:, ::1] fint = fint_np
    cdef double[:, :, ::1] eps_p = eps_p_np
    cdef double[:, ::1] acc = acc_np
    cdef double[:, :, ::1] eps_e = eps_e_np
    cdef double[:, :, ::1] sig = sig_np
    cdef double[:, ::1] psi_plus = psi_plus_np
    cdef double[:, ::1] psi_p = psi_p_np
    cdef double[:, ::1] wp = wp_np
    cdef double[:, ::1] sigh = sigh_np

    cdef double[:, ::1] phie
    cdef bint has_phi = phie_obj is not None
    if has_phi:
        phie = phie_obj
    active_np = np.ascontiguousarray(active_obj, dtype=np.uint8)
    cdef unsigned char[::1] active = active_np

    cdef Py_ssize_t e, q, a, b, i, j, r, s
    cdef double eps[4]
    cdef double ep[4]
    cdef double s_tr[4]
    cdef double nhat[4]
    cdef double st[4]
    cdef double Bq[3][8]
    cdef double D3[3][3]
    cdef double Dt[4][4]
    cdef double tmp[3]
    cdef double gx, gy, phi, g, gbar, nu, nh, beta, E, sy
    cdef double Kb, G, lam, tr, sh, svm, sf0, dp, w, x
    cdef double tr_e, dev0, dev1, dev2, dev3, trp, hard, c_dev, c_n, pjr
    cdef double sub_idx

    cdef int sub[3]
    sub[0] = 0
    sub[1] = 1
    sub[2] = 3

    for e in range(nel):
        if not active[e]:
            continue
        nu = nu_e[e]
        nh = n_e[e]
        beta = beta_e[e]
        for q in range(nqp):
            E = E_qp[e, q]
            sy = sy_qp[e, q]
            Kb = E / (3.0 * (1.0 - 2.0 * nu))
            G = E / (2.0 * (1.0 + nu))
            lam = Kb - 2.0 * G / 3.0
            w = detJw[e, q]

            eps[0] = eps_extra[e, q, 0]
            eps[1] = eps_extra[e, q, 1]
            eps[2] = eps_extra[e, q, 2]
            eps[3] = eps_extra[e, q, 3]
            phi = 0.0
            for a in range(nn):
                gx = grads[e, q, a, 0]
                gy = grads[e, q, a, 1]
                eps[0] += gx * ue[e, 2 * a]
                eps[1] += gy * ue[e, 2 * a + 1]
                eps[3] += gy * ue[e, 2 * a] + gx * ue[e, 2 * a + 1]
                if has_phi:
                    phi += N[q, a] * phie[e, a]
            g = (1.0 - phi) * (1.0 - phi) + kres
            gbar = beta * g + (1.0 - beta)

            # elastic trial on effective stress
            for i in range(4):
                ep[i] = eps_p_old[e, q, i]
            tr = (eps[0] - ep[0]) + (eps[1] - ep[1]) + (eps[2] - ep[2])
            s_tr[0] = lam * tr + 2.0 * G * (eps[0] - ep[0])
            s_tr[1] = lam * tr + 2.0 * G * (eps[1] - ep[1])
            s_tr[2] = lam * tr + 2.0 * G * (eps[2] - ep[2])
            s_tr[3] = G * (eps[3] - ep[3])
            sh = (s_tr[0] + s_tr[1] + s_tr[2]) / 3.0
            s_tr[0] -= sh
            s_tr[1] -= sh
            s_tr[2] -= sh
            svm = sqrt(1.5 * (s_tr[0] * s_tr[0] + s_tr[1] * s_tr[1]
                              + s_tr[2] * s_tr[2] + 2.0 * s_tr[3] * s_tr[3]))

            x = 1.0 + E * acc_old[e, q] / sy
            sf0 = sy * pow(x, nh)
            dp = 0.0
            if g * svm - gbar * sf0 > 1.0e-9 * sy:
                dp = _solve_dp(svm, acc_old[e, q], gbar / g, E, sy, nh, 3.0 * G)

            if svm > 0.0:
                for i in range(4):
                    nhat[i] = 1.5 * s_tr[i] / svm
            else:
                for i in range(4):
                    nhat[i] = 0.0
            eps_p[e, q, 0] = eps_p_old[e, q, 0] + dp * nhat[0]
            eps_p[e, q, 1] = eps_p_old[e, q, 1] + dp * nhat[1]
            eps_p[e, q, 2] = eps_p_old[e, q, 2] + dp * nhat[2]
            eps_p[e, q, 3] = eps_p_old[e, q, 3] + 2.0 * dp * nhat[3]
            acc[e, q] = acc_old[e, q] + dp

            tr_e = 0.0
            for i in range(4):
                eps_e[e, q, i] = eps[i] - eps_p[e, q, i]
            tr_e = eps_e[e, q, 0] + eps_e[e, q, 1] + eps_e[e, q, 2]
            st[0] = lam * tr_e + 2.0 * G * eps_e[e, q, 0]
            st[1] = lam * tr_e + 2.0 * G * eps_e[e, q, 1]
            st[2] = lam * tr_e + 2.0 * G * eps_e[e, q, 2]
            st[3] = G * eps_e[e, q, 3]
            for i in range(4):
                sig[e, q, i] = g * st[i]
            sigh[e, q] = (sig[e, q, 0] + sig[e, q, 1] + sig[e, q, 2]) / 3.0

            dev0 = eps_e[e, q, 0] - tr_e / 3.0
            dev1 = eps_e[e, q, 1] - tr_e / 3.0
            dev2 = eps_e[e, q, 2] - tr_e / 3.0
            dev3 = 0.5 * eps_e[e, q, 3]
            trp = tr_e if tr_e > 0.0 else 0.0
            psi_plus[e, q] = (0.5 * Kb * trp * trp
                              + G * (dev0 * dev0 + dev1 * dev1 + dev2 * dev2
                                     + 2.0 * dev3 * dev3))
            x = 1.0 + E * acc[e, q] / sy
            psi_p[e, q] = sy * sy / (E * (nh + 1.0)) * (pow(x, nh + 1.0) - 1.0)
            wp[e, q] = (st[0] * dp * nhat[0] + st[1] * dp * nhat[1]
                        + st[2] * dp * nhat[2] + st[3] * 2.0 * dp * nhat[3])

            # consistent tangent
            for i in range(4):
                for j in range(4):
                    Dt[i][j] = 0.0
            for i in range(3):
                for j in range(3):
                    Dt[i][j] = lam
                Dt[i][i] += 2.0 * G
            Dt[3][3] = G
            if dp > 0.0:
                hard = (gbar / g) * nh * E * pow(x, nh - 1.0)
                c_dev = 6.0 * G * G * dp / svm
                c_n = 4.0 * G * G * (1.0 / (3.0 * G + hard) - dp / svm)
                for i in range(3):
                    for j in range(3):
                        pjr = -1.0 / 3.0
                        if i == j:
                            pjr += 1.0
                        Dt[i][j] -= c_dev * pjr
                Dt[3][3] -= c_dev * 0.5
                for i in range(4):
                    for j in range(4):
                        Dt[i][j] -= c_n * nhat[i] * nhat[j]
            for i in range(4):
                for j in range(4):
                    Dt[i][j] *= g

            for i in range(3):
                for j in range(3):
                    D3[i][j] = Dt[sub[i]][sub[j]]

            for a in range(nn):
                gx = grads[e, q, a, 0]
                gy = grads[e, q, a, 1]
                Bq[0][2 * a] = gx
                Bq[0][2 * a + 1] = 0.0
                Bq[1][2 * a] = 0.0
                Bq[1][2 * a + 1] = gy
                Bq[2][2 * a] = gy
                Bq[2][2 * a + 1] = gx

            for j in range(ndofe):
                fint[e, j] += w * (Bq[0][j] * sig[e, q, 0]
                                   + Bq[1][j] * sig[e, q, 1]
                                   + Bq[2][j] * sig[e, q, 3])
                tmp[0] = D3[0][0] * Bq[0][j] + D3[0][1] * Bq[1][j] + D3[0][2] * Bq[2][j]
                tmp[1] = D3[1][0] * Bq[0][j] + D3[1][1] * Bq[1][j] + D3[1][2] * Bq[2][j]
                tmp[2] = D3[2][0] * Bq[0][j] + D3[2][1] * Bq[1][j] + D3[2][2] * Bq[2][j]
                for i in range(ndofe):
                    Ke[e, i, j] += w * (Bq[0][i] * tmp[0] + Bq[1][i] * tmp[1]
                                        + Bq[2][i] * tmp[2])

    return (Ke_np, fint_np, eps_p_np, acc_np, eps_e_np, sig_np,
            psi_plus_np, psi_p_np, wp_np, sigh_np)


@cython.boundscheck(False)
@cython.wraparound(False)
def phase_batch(double[:, :, :, ::1] grads, double[:, ::1] detJw,
                double[:, ::1] N, double[:, ::1] H_qp, double[:, ::1] Gc_qp,
                double[::1] ell_e, active_obj):
    cdef Py_ssize_t nel = grads.shape[0]
    cdef Py_ssize_t nqp = grads.shape[1]
    cdef Py_ssize_t nn = grads.shape[2]
    Ke_np = np.zeros((nel, nn, nn))
    Fe_np = np.zeros((nel, nn))
    cdef double[:, :, ::1] Ke = Ke_np
    cdef double[:, ::1] Fe = Fe_np
    active_np = np.ascontiguousarray(active_obj, dtype=np.uint8)
    cdef unsigned char[::1] active = active_np
    cdef Py_ssize_t e, q, a, b
    cdef double w, ell, ell2, src, mass

    for e in range(nel):
        if not active[e]:
            continue
        ell = ell_e[e]
        ell2 = ell * ell
        for q in range(nqp):
            w = detJw[e, q]
            src = 2.0 * H_qp[e, q] * ell / Gc_qp[e, q]
            mass = w * (1.0 + src)
            for a in range(nn):
                Fe[e, a] += N[q, a] * w * src
                for b in range(nn):
                    Ke[e, a, b] += (ell2 * w * (grads[e, q, a, 0] * grads[e, q, b, 0]
                                                + grads[e, q, a, 1] * grads[e, q, b, 1])
                                    + mass * N[q, a] * N[q, b])
    return Ke_np, Fe_np


@cython.boundscheck(False)
@cython.wraparound(False)
def transport_batch(double[:, :, :, ::1] grads, double[:, ::1] detJw,
                    double[:, ::1] N, double[:, ::1] ce_old,
                    double[:, ::1] D_qp, double[:, :, ::1] vel_qp,
                    double dt, active_obj):
    cdef Py_ssize_t nel = grads.shape[0]
    cdef Py_ssize_t nqp = grads.shape[1]
    cdef Py_ssize_t nn = grads.shape[2]
    Ke_np = np.zeros((nel, nn, nn))
    Fe_np = np.zeros((nel, nn))
    cdef double[:, :, ::1] Ke = Ke_np
    cdef double[:, ::1] Fe = Fe_np
    active_np = np.ascontiguousarray(active_obj, dtype=np.uint8)
    cdef unsigned char[::1] active = active_np
    cdef Py_ssize_t e, q, a, b
    cdef double w, D, c_old, adv_a

    for e in range(nel):
        if not active[e]:
            continue
        for q in range(nqp):
            w = detJw[e, q]
            D = D_qp[e, q]
            c_old = 0.0
            for a in range(nn):
                c_old += N[q, a] * ce_old[e, a]
            for a in range(nn):
                adv_a = (grads[e, q, a, 0] * vel_qp[e, q, 0]
                         + grads[e, q, a, 1] * vel_qp[e, q, 1])
                Fe[e, a] += N[q, a] * w / dt * c_old
                for b in range(nn):
                    Ke[e, a, b] += (N[q, a] * N[q, b] * w / dt
                                    + D * w * (grads[e, q, a, 0] * grads[e, q, b, 0]
                                               + grads[e, q, a, 1] * grads[e, q, b, 1])
                                    - D * w * adv_a * N[q, b])
    return Ke_np, Fe_np
