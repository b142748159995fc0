"""Hot numeric kernels with numba and pure-numpy implementations.

Each public name dispatches to ``*_nb`` (compiled loops) or ``*_np``
(vectorised numpy) depending on :data:`trustlds._jit.USE_NUMBA`. Both paths
consume identical inputs, including pre-drawn random numbers, so they agree
to rounding.

Packed parameter layouts used throughout:

``trust_ab``   ``[A_T, B_T1..B_T7]``
``eng_abc``    ``[A_G, B_G1..B_G8, C_G]``
``act``        ``(2, 3)`` rows ``[a_T, a_G, bias]`` for Low then High
``env``        ``[p_suc_low, p_suc_high]``
"""
import math

import numpy as np

from ._jit import USE_NUMBA, njit

LOG_FLOOR = math.log(1e-300)
MODE_HARD = 0
MODE_SMOOTH = 1


# ------------------------------------------------------------------ helpers

@njit
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _sig_np(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


@njit
def _log_sig(x):
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _log_sig_np(x):
    return np.where(x >= 0.0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))


@njit
def _ncdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _ncdf_np(z):
    from scipy.special import ndtr

    return ndtr(z)


# ------------------------------------------------------- certainty equivalent

@njit
def ce_objective_nb(Q, t0, g0, eps0, beta1, beta2, trust_ab, eng_abc, act, env, mode, track_sd, literal):
    """Summed expected reward of each row of ``Q`` under certainty-equivalent dynamics."""
    M, N = Q.shape
    out = np.zeros(M)
    aT = trust_ab[0]
    aG = eng_abc[0]
    cG = eng_abc[9]
    psL = env[0]
    psH = env[1]
    psH_theta = psL if literal else psH
    auto_L = psL * 3.0 + (1.0 - psL) * -4.0
    auto_H = psH * 3.0 + (1.0 - psH) * -4.0
    for m in range(M):
        T = t0
        G = g0
        eps = eps0
        total = 0.0
        for k in range(N):
            q = Q[m, k]
            b1 = beta1[k]
            b2 = beta2[k]
            PL = _sig(act[0, 0] * T + act[0, 1] * G + act[0, 2])
            PH = _sig(act[1, 0] * T + act[1, 1] * G + act[1, 2])
            j_auto = (1.0 - b1) * PL * auto_L + b1 * PH * auto_H
            total += q * j_auto + (1.0 - q)

            th1 = (1.0 - b1) * psL * PL
            th2 = (1.0 - b1) * (1.0 - psL) * PL
            th4 = b1 * psH_theta * PH
            th5 = b1 * (1.0 - psH_theta) * PH
            th7 = (1.0 - b1) * (1.0 - PL) + b1 * (1.0 - PH)
            bt_auto = (th1 * trust_ab[1] + th2 * trust_ab[2] + th4 * trust_ab[4]
                       + th5 * trust_ab[5] + th7 * trust_ab[7])
            bt_ask = (1.0 - b1) * trust_ab[3] + b1 * trust_ab[6]

            w1 = (1.0 - b2) * eps
            w2 = b2 * eps
            w3 = (1.0 - b2) * (1.0 - eps)
            w4 = b2 * (1.0 - eps)
            bg_ask = w1 * eng_abc[1] + w2 * eng_abc[2] + w3 * eng_abc[3] + w4 * eng_abc[4]
            bg_auto = w1 * eng_abc[5] + w2 * eng_abc[6] + w3 * eng_abc[7] + w4 * eng_abc[8]
            g_auto = aG * G + bg_auto
            g_ask = aG * G + bg_ask
            scale = (1.0 - b2) * 0.25 + b2 * 0.5
            p_auto = cG * g_auto
            p_ask = cG * g_ask
            if mode == MODE_SMOOTH:
                i_auto = _ncdf((p_auto - 75.0) / track_sd)
                i_ask = _ncdf((p_ask - 75.0) / track_sd)
            else:
                i_auto = 1.0 if p_auto >= 75.0 else 0.0
                i_ask = 1.0 if p_ask >= 75.0 else 0.0
            total += scale * (q * i_auto + (1.0 - q) * i_ask)

            eps = q * ((1.0 - b1) * psL * PL + b1 * psH * PH) + (1.0 - q)
            T = aT * T + q * bt_auto + (1.0 - q) * bt_ask
            G = aG * G + q * bg_auto + (1.0 - q) * bg_ask
        out[m] = total
    return out


def ce_objective_np(Q, t0, g0, eps0, beta1, beta2, trust_ab, eng_abc, act, env, mode, track_sd, literal):
    Q = np.asarray(Q, dtype=float)
    M, N = Q.shape
    aT, aG, cG = trust_ab[0], eng_abc[0], eng_abc[9]
    psL, psH = env[0], env[1]
    psH_theta = psL if literal else psH
    auto_L = psL * 3.0 + (1.0 - psL) * -4.0
    auto_H = psH * 3.0 + (1.0 - psH) * -4.0
    T = np.full(M, float(t0))
    G = np.full(M, float(g0))
    eps = np.full(M, float(eps0))
    total = np.zeros(M)
    for k in range(N):
        q = Q[:, k]
        b1, b2 = beta1[k], beta2[k]
        PL = _sig_np(act[0, 0] * T + act[0, 1] * G + act[0, 2])
        PH = _sig_np(act[1, 0] * T + act[1, 1] * G + act[1, 2])
        j_auto = (1.0 - b1) * PL * auto_L + b1 * PH * auto_H
        total = total + (q * j_auto + (1.0 - q))

        th1 = (1.0 - b1) * psL * PL
        th2 = (1.0 - b1) * (1.0 - psL) * PL
        th4 = b1 * psH_theta * PH
        th5 = b1 * (1.0 - psH_theta) * PH
        th7 = (1.0 - b1) * (1.0 - PL) + b1 * (1.0 - PH)
        bt_auto = th1 * trust_ab[1] + th2 * trust_ab[2] + th4 * trust_ab[4] + th5 * trust_ab[5] + th7 * trust_ab[7]
        bt_ask = (1.0 - b1) * trust_ab[3] + b1 * trust_ab[6]

        w1, w2 = (1.0 - b2) * eps, b2 * eps
        w3, w4 = (1.0 - b2) * (1.0 - eps), b2 * (1.0 - eps)
        bg_ask = w1 * eng_abc[1] + w2 * eng_abc[2] + w3 * eng_abc[3] + w4 * eng_abc[4]
        bg_auto = w1 * eng_abc[5] + w2 * eng_abc[6] + w3 * eng_abc[7] + w4 * eng_abc[8]
        p_auto = cG * (aG * G + bg_auto)
        p_ask = cG * (aG * G + bg_ask)
        scale = (1.0 - b2) * 0.25 + b2 * 0.5
        if mode == MODE_SMOOTH:
            i_auto = _ncdf_np((p_auto - 75.0) / track_sd)
            i_ask = _ncdf_np((p_ask - 75.0) / track_sd)
        else:
            i_auto = (p_auto >= 75.0).astype(float)
            i_ask = (p_ask >= 75.0).astype(float)
        total = total + scale * (q * i_auto + (1.0 - q) * i_ask)

        eps = q * ((1.0 - b1) * psL * PL + b1 * psH * PH) + (1.0 - q)
        T = aT * T + q * bt_auto + (1.0 - q) * bt_ask
        G = aG * G + q * bg_auto + (1.0 - q) * bg_ask
    return total


# ------------------------------------------------------------------- Kalman

def _kalman_filter_loop(a, drive, c, q, r, m0, p0, y, observed):
    """Scalar filter for x_k = a x_{k-1} + drive_k + v_k, y_k = c x_k + w_k, k = 1..n.

    Returns predicted and filtered moments for k = 1..n and the marginal
    log-likelihood of the observed entries. A non-positive innovation
    variance on an observed step flags failure through a NaN log-likelihood.
    """
    n = drive.shape[0]
    m_pred = np.empty(n)
    p_pred = np.empty(n)
    m_filt = np.empty(n)
    p_filt = np.empty(n)
    m = m0
    p = p0
    ll = 0.0
    for k in range(n):
        mp = a * m + drive[k]
        pp = a * a * p + q
        m_pred[k] = mp
        p_pred[k] = pp
        if observed[k]:
            s = c * c * pp + r
            if s < 0.0:
                ll = np.nan
                m = mp
                p = pp
            elif s == 0.0:
                # noise-free step: the observation carries no new information
                m = mp
                p = pp
            else:
                gain = pp * c / s
                resid = y[k] - c * mp
                m = mp + gain * resid
                p = (1.0 - gain * c) * pp
                if p < 0.0:
                    p = 0.0
                ll += -0.5 * (math.log(2.0 * math.pi * s) + resid * resid / s)
        else:
            m = mp
            p = pp
        m_filt[k] = m
        p_filt[k] = p
    return m_pred, p_pred, m_filt, p_filt, ll


kalman_filter_nb = njit(_kalman_filter_loop)
# the recursion is inherently sequential; the numpy path is the uncompiled loop
kalman_filter_np = _kalman_filter_loop


@njit
def rts_smoother_nb(a, m0, p0, m_pred, p_pred, m_filt, p_filt):
    """Backward pass. Outputs have length n+1; index 0 is the initial state.

    ``lag1[k]`` is Cov(x_{k+1}, x_k | all data) for k = 0..n-1.
    """
    n = m_pred.shape[0]
    ms = np.empty(n + 1)
    ps = np.empty(n + 1)
    lag1 = np.empty(n)
    ms[n] = m_filt[n - 1]
    ps[n] = p_filt[n - 1]
    for k in range(n - 1, -1, -1):
        if k == 0:
            mf = m0
            pf = p0
        else:
            mf = m_filt[k - 1]
            pf = p_filt[k - 1]
        pp = p_pred[k]
        J = pf * a / pp if pp > 0.0 else 0.0
        ms[k] = mf + J * (ms[k + 1] - m_pred[k])
        pk = pf + J * J * (ps[k + 1] - pp)
        ps[k] = pk if pk > 0.0 else 0.0
        lag1[k] = J * ps[k + 1]
    return ms, ps, lag1


def rts_smoother_np(a, m0, p0, m_pred, p_pred, m_filt, p_filt):
    # vectorised given the gains: reverse linear recurrence, unrolled in python
    m_pred = np.asarray(m_pred)
    n = m_pred.shape[0]
    mf = np.r_[m0, m_filt[:-1]]
    pf = np.r_[p0, p_filt[:-1]]
    with np.errstate(divide="ignore", invalid="ignore"):
        J = np.where(p_pred > 0.0, pf * a / np.where(p_pred > 0.0, p_pred, 1.0), 0.0)
    ms = np.empty(n + 1)
    ps = np.empty(n + 1)
    ms[n] = m_filt[n - 1]
    ps[n] = p_filt[n - 1]
    for k in range(n - 1, -1, -1):
        ms[k] = mf[k] + J[k] * (ms[k + 1] - m_pred[k])
        ps[k] = max(pf[k] + J[k] * J[k] * (ps[k + 1] - p_pred[k]), 0.0)
    return ms, ps, J * ps[1:]


# -------------------------------------------------------- particle filter

@njit
def pf_update_nb(particles, logw, act_code, act_row, bt, bg, aT, aG, noise_t, noise_g,
                 p_obs, cG, rG, y_obs, cT, rT):
    """Reweight by the action likelihood, propagate, reweight by p and y.

    ``act_code`` is -1 (no action observed), 0 (interrupt) or 1 (rely).
    ``p_obs``/``y_obs`` are NaN when absent. Returns new particles and
    unnormalised log weights.
    """
    N = particles.shape[0]
    out = np.empty_like(particles)
    lw = np.empty(N)
    for i in range(N):
        T = particles[i, 0]
        G = particles[i, 1]
        w = logw[i]
        if act_code >= 0:
            z = act_row[0] * T + act_row[1] * G + act_row[2]
            l = _log_sig(z) if act_code == 1 else _log_sig(-z)
            w += l if l > LOG_FLOOR else LOG_FLOOR
        T2 = aT * T + bt + noise_t[i]
        G2 = aG * G + bg + noise_g[i]
        if not math.isnan(p_obs):
            w += _gauss_ll(p_obs - cG * G2, rG)
        if not math.isnan(y_obs):
            w += _gauss_ll(y_obs - cT * T2, rT)
        out[i, 0] = T2
        out[i, 1] = G2
        lw[i] = w
    return out, lw


@njit
def _gauss_ll(resid, var):
    if var <= 0.0:
        return 0.0 if abs(resid) <= 1e-9 else LOG_FLOOR
    l = -0.5 * (math.log(2.0 * math.pi * var) + resid * resid / var)
    return l if l > LOG_FLOOR else LOG_FLOOR


def _gauss_ll_np(resid, var):
    if var <= 0.0:
        return np.where(np.abs(resid) <= 1e-9, 0.0, LOG_FLOOR)
    return np.maximum(-0.5 * (math.log(2.0 * math.pi * var) + resid * resid / var), LOG_FLOOR)


def pf_update_np(particles, logw, act_code, act_row, bt, bg, aT, aG, noise_t, noise_g,
                 p_obs, cG, rG, y_obs, cT, rT):
    T = particles[:, 0]
    G = particles[:, 1]
    w = np.array(logw, dtype=float)
    if act_code >= 0:
        z = act_row[0] * T + act_row[1] * G + act_row[2]
        w = w + np.maximum(_log_sig_np(z if act_code == 1 else -z), LOG_FLOOR)
    T2 = aT * T + bt + noise_t
    G2 = aG * G + bg + noise_g
    if not math.isnan(p_obs):
        w = w + _gauss_ll_np(p_obs - cG * G2, rG)
    if not math.isnan(y_obs):
        w = w + _gauss_ll_np(y_obs - cT * T2, rT)
    return np.column_stack((T2, G2)), w


@njit
def systematic_resample_nb(weights, u0):
    """Indices drawn by systematic resampling with offset ``u0`` in [0, 1)."""
    N = weights.shape[0]
    idx = np.empty(N, dtype=np.int64)
    cum = np.cumsum(weights)
    j = 0
    for i in range(N):
        pos = (u0 + i) / N
        while j < N - 1 and cum[j] <= pos:
            j += 1
        idx[i] = j
    return idx


def systematic_resample_np(weights, u0):
    N = weights.shape[0]
    cum = np.cumsum(weights)
    pos = (u0 + np.arange(N)) / N
    return np.minimum(np.searchsorted(cum, pos, side="right"), N - 1).astype(np.int64)


# -------------------------------------------------------------- dispatch

if USE_NUMBA:
    ce_objective = ce_objective_nb
    kalman_filter_kernel = kalman_filter_nb
    rts_smoother_kernel = rts_smoother_nb
    pf_update = pf_update_nb
    systematic_resample = systematic_resample_nb
else:
    ce_objective = ce_objective_np
    kalman_filter_kernel = kalman_filter_np
    rts_smoother_kernel = rts_smoother_np
    pf_update = pf_update_np
    systematic_resample = systematic_resample_np

BACKEND = "numba" if USE_NUMBA else "numpy"
