"""Numpy implementations of the element assembly kernels.

API mirror of the compiled extension `_kernels_cy`. Voigt order is
[xx, yy, zz, xy] with engineering shear for strains; the out-of-plane
normal component is carried explicitly so hydrostatic stress and the
von Mises norm are 3D-correct under plane strain.

All kernels are pure functions operating on one element block; inactive
elements contribute zeros and pass their state through unchanged.
"""
from __future__ import annotations

import numpy as np

_NEWTON_TOL = 1.0e-10
_NEWTON_MAX = 60
_BISECT_MAX = 80


def _build_B(grads):
    """Strain-displacement matrices, (nel, nqp, 3, 2*nn), rows xx/yy/xy."""
    nel, nqp, nn, _ = grads.shape
    B = np.zeros((nel, nqp, 3, 2 * nn))
    gx = grads[..., 0]
    gy = grads[..., 1]
    B[:, :, 0, 0::2] = gx
    B[:, :, 1, 1::2] = gy
    B[:, :, 2, 0::2] = gy
    B[:, :, 2, 1::2] = gx
    return B


def _elastic_moduli(E, nu):
    """(K_bulk, G_shear) per entry."""
    return E / (3.0 * (1.0 - 2.0 * nu)), E / (2.0 * (1.0 + nu))


def _solve_dp(svm_tr, acc, g_over, E, sy, n_hard, G3):
    """Plastic multiplier from svm_tr - 3G dp = (gbar/g) sf(acc + dp).

    The residual is convex and decreasing, so Newton from zero converges
    monotonically; a bisection sweep mops up any stragglers.
    """
    dp = np.zeros_like(svm_tr)
    tol = _NEWTON_TOL * np.maximum(svm_tr, sy)
    live = np.ones(svm_tr.shape, dtype=bool)
    for _ in range(_NEWTON_MAX):
        x = 1.0 + E * (acc + dp) / sy
        sf = sy * x ** n_hard
        dsf = n_hard * E * x ** (n_hard - 1.0)
        r = svm_tr - G3 * dp - g_over * sf
        live = np.abs(r) > tol
        if not np.any(live):
            break
        step = r / (G3 + g_over * dsf)
        dp = np.where(live, dp + step, dp)
    if np.any(live):
        lo = np.zeros_like(dp)
        hi = svm_tr / G3
        for _ in range(_BISECT_MAX):
            mid = 0.5 * (lo + hi)
            x = 1.0 + E * (acc + mid) / sy
            r = svm_tr - G3 * mid - g_over * sy * x ** n_hard
            lo = np.where(r > 0, mid, lo)
            hi = np.where(r > 0, hi, mid)
        dp = np.where(live, 0.5 * (lo + hi), dp)
    return dp


def mech_batch(grads, detJw, N, ue, eps_extra, eps_p_old, acc_old,
               phie, E_qp, sy_qp, nu_e, n_e, beta_e, kres, active):
    """Elastoplastic element residual/tangent with phase-field degradation.

    Parameters are per-block arrays; `phie` is the gathered nodal damage
    (nel, nn) or None for an undamaged stage. Returns
    (Ke, fint, eps_p, acc, eps_e, sig, psi_plus, psi_p, wp_inc, sig_h).
    """
    nel, nqp, nn, _ = grads.shape
    ndofe = 2 * nn
    u2 = ue.reshape(nel, nn, 2)

    # total strain at qps (engineering shear), plus prescribed offsets
    eps = np.empty((nel, nqp, 4))
    eps[..., 0] = np.einsum("eqn,en->eq", grads[..., 0], u2[..., 0])
    eps[..., 1] = np.einsum("eqn,en->eq", grads[..., 1], u2[..., 1])
    eps[..., 2] = 0.0
    eps[..., 3] = (np.einsum("eqn,en->eq", grads[..., 1], u2[..., 0])
                   + np.einsum("eqn,en->eq", grads[..., 0], u2[..., 1]))
    eps += eps_extra

    if phie is None:
        phi_qp = np.zeros((nel, nqp))
    else:
        phi_qp = np.einsum("qn,en->eq", N, phie)
    g = (1.0 - phi_qp) ** 2 + kres
    beta = beta_e[:, None]
    gbar = beta * g + (1.0 - beta)

    nu = nu_e[:, None]
    n_hard = n_e[:, None] * np.ones((1, nqp))
    Kb, G = _elastic_moduli(E_qp, nu)
    lam = Kb - 2.0 * G / 3.0

    # elastic trial (effective stress, undamaged moduli)
    ee = eps - eps_p_old
    tr_ee = ee[..., 0] + ee[..., 1] + ee[..., 2]
    sig_tr = np.empty_like(ee)
    sig_tr[..., :3] = lam[..., None] * tr_ee[..., None] + 2.0 * G[..., None] * ee[..., :3]
    sig_tr[..., 3] = G * ee[..., 3]
    sh_tr = (sig_tr[..., 0] + sig_tr[..., 1] + sig_tr[..., 2]) / 3.0
    s_tr = sig_tr.copy()
    s_tr[..., :3] -= sh_tr[..., None]
    svm_tr = np.sqrt(1.5 * (s_tr[..., 0] ** 2 + s_tr[..., 1] ** 2
                            + s_tr[..., 2] ** 2 + 2.0 * s_tr[..., 3] ** 2))

    x0 = 1.0 + E_qp * acc_old / sy_qp
    sf0 = sy_qp * x0 ** n_hard
    plastic = g * svm_tr - gbar * sf0 > 1.0e-9 * sy_qp
    plastic &= active[:, None]

    dp = np.zeros((nel, nqp))
    if np.any(plastic):
        m = plastic
        dp[m] = _solve_dp(svm_tr[m], acc_old[m], (gbar / g)[m],
                          E_qp[m], sy_qp[m], n_hard[m], 3.0 * G[m])

    safe_svm = np.where(svm_tr > 0, svm_tr, 1.0)
    nhat = 1.5 * s_tr / safe_svm[..., None]
    deps_p = dp[..., None] * nhat
    deps_p[..., 3] *= 2.0  # engineering shear component
    eps_p = eps_p_old + deps_p
    acc = acc_old + dp

    eps_e = eps - eps_p
    sig_eff = np.empty_like(eps_e)
    tr_e = eps_e[..., 0] + eps_e[..., 1] + eps_e[..., 2]
    sig_eff[..., :3] = lam[..., None] * tr_e[..., None] + 2.0 * G[..., None] * eps_e[..., :3]
    sig_eff[..., 3] = G * eps_e[..., 3]
    sig = g[..., None] * sig_eff
    sig_h = (sig[..., 0] + sig[..., 1] + sig[..., 2]) / 3.0

    # driving energies (undamaged)
    dev = eps_e.copy()
    dev[..., :3] -= (tr_e / 3.0)[..., None]
    dev_sq = (dev[..., 0] ** 2 + dev[..., 1] ** 2 + dev[..., 2] ** 2
              + 2.0 * (0.5 * eps_e[..., 3]) ** 2)
    psi_plus = 0.5 * Kb * np.maximum(tr_e, 0.0) ** 2 + G * dev_sq
    xa = 1.0 + E_qp * acc / sy_qp
    psi_p = sy_qp ** 2 / (E_qp * (n_hard + 1.0)) * (xa ** (n_hard + 1.0) - 1.0)
    wp_inc = np.einsum("eqi,eqi->eq", sig_eff, deps_p)

    # consistent tangent, 4x4 Voigt with engineering shear
    Dt = np.zeros((nel, nqp, 4, 4))
    Dt[..., :3, :3] = lam[..., None, None] * np.ones((1, 1, 3, 3))
    idx = np.arange(3)
    Dt[..., idx, idx] += 2.0 * G[..., None]
    Dt[..., 3, 3] = G
    if np.any(plastic):
        x = 1.0 + E_qp * acc / sy_qp
        dsf = n_e[:, None] * E_qp * x ** (n_hard - 1.0)
        hard = (gbar / g) * dsf
        c_dev = np.where(plastic, 6.0 * G ** 2 * dp / safe_svm, 0.0)
        c_n = np.where(plastic,
                       4.0 * G ** 2 * (1.0 / (3.0 * G + hard) - dp / safe_svm),
                       0.0)
        P = np.zeros((4, 4))
        P[:3, :3] = np.eye(3) - 1.0 / 3.0
        P[3, 3] = 0.5
        Dt -= c_dev[..., None, None] * P
        Dt -= c_n[..., None, None] * nhat[..., :, None] * nhat[..., None, :]
    Dt *= g[..., None, None]

    B = _build_B(grads)
    sub = np.array([0, 1, 3])
    D3 = Dt[:, :, sub[:, None], sub[None, :]]
    w = detJw * active[:, None]
    Ke = np.einsum("eqri,eqrs,eqsj,eq->eij", B, D3, B, w, optimize=True)
    fint = np.einsum("eqri,eqr,eq->ei", B, sig[..., sub], w, optimize=True)

    # inactive elements keep their committed state and report nothing
    keep = ~active
    if np.any(keep):
        eps_p[keep] = eps_p_old[keep]
        acc[keep] = acc_old[keep]
        for arr in (eps_e, sig):
            arr[keep] = 0.0
        for arr in (psi_plus, psi_p, wp_inc, sig_h, dp):
            arr[keep] = 0.0
    return Ke, fint, eps_p, acc, eps_e, sig, psi_plus, psi_p, wp_inc, sig_h


def phase_batch(grads, detJw, N, H_qp, Gc_qp, ell_e, active):
    """Linear AT2 system: (l^2 grad-grad + (1 + 2Hl/Gc) mass) phi = 2Hl/Gc."""
    nel, nqp, nn, _ = grads.shape
    w = detJw * active[:, None]
    src = 2.0 * H_qp * ell_e[:, None] / Gc_qp
    Ke = (np.einsum("eqnd,eqmd,eq->enm", grads, grads, w, optimize=True)
          * (ell_e ** 2)[:, None, None])
    Ke += np.einsum("qn,qm,eq->enm", N, N, w * (1.0 + src), optimize=True)
    Fe = np.einsum("qn,eq->en", N, w * src, optimize=True)
    return Ke, Fe


def transport_batch(grads, detJw, N, ce_old, D_qp, vel_qp, dt, active):
    """Implicit step of drift-diffusion: (M/dt + K_D + K_drift) C = M/dt C_old.

    `vel_qp` is the chemical drift velocity field V_H/(R T) grad(sigma_h)
    at quadrature points, (nel, nqp, 2).
    """
    nel, nqp, nn, _ = grads.shape
    w = detJw * active[:, None]
    Me = np.einsum("qn,qm,eq->enm", N, N, w / dt, optimize=True)
    Ke = Me + np.einsum("eqnd,eqmd,eq->enm", grads, grads, w * D_qp, optimize=True)
    adv = np.einsum("eqnd,eqd->eqn", grads, vel_qp)
    Ke -= np.einsum("eqn,qm,eq->enm", adv, N, w * D_qp, optimize=True)
    c_qp = np.einsum("qn,en->eq", N, ce_old)
    Fe = np.einsum("qn,eq->en", N, w / dt * c_qp, optimize=True)
    return Ke, Fe
