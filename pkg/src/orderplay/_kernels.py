"""Compiled inner loops of the single-agent optimizer.

Pure-array versions of the rollout, forward pass, and Riccati backward pass,
jitted with numba when it is installed and run as plain Python otherwise.
Semantics match the reference implementations in :mod:`dynamics` and
:mod:`costs` exactly; only speed differs.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit as _njit

    def _jit(f):
        return _njit(cache=True)(f)

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    def _jit(f):
        return f

    HAVE_NUMBA = False


@_jit
def rollout_kernel(x0, us, dt, a_lo, a_hi, w_lo, w_hi):
    """Clamp controls and integrate the unicycle forward; returns (xs, us)."""
    T = us.shape[0]
    us_c = np.empty((T, 2))
    xs = np.empty((T + 1, 4))
    for k in range(4):
        xs[0, k] = x0[k]
    for t in range(T):
        a = us[t, 0]
        w = us[t, 1]
        a = a_lo if a < a_lo else (a_hi if a > a_hi else a)
        w = w_lo if w < w_lo else (w_hi if w > w_hi else w)
        us_c[t, 0] = a
        us_c[t, 1] = w
        v = xs[t, 2]
        th = xs[t, 3]
        xs[t + 1, 0] = xs[t, 0] + dt * v * math.cos(th)
        xs[t + 1, 1] = xs[t, 1] + dt * v * math.sin(th)
        xs[t + 1, 2] = v + dt * a
        xs[t + 1, 3] = th + dt * w
    return xs, us_c


@_jit
def forward_kernel(xs, us, k_ff, K, alpha, dt, a_lo, a_hi, w_lo, w_hi):
    """Feedback rollout u = us + alpha*k_ff + K (x - xs), clamped each step."""
    T = us.shape[0]
    xs_new = np.empty_like(xs)
    us_new = np.empty_like(us)
    for k in range(4):
        xs_new[0, k] = xs[0, k]
    for t in range(T):
        d0 = xs_new[t, 0] - xs[t, 0]
        d1 = xs_new[t, 1] - xs[t, 1]
        d2 = xs_new[t, 2] - xs[t, 2]
        d3 = xs_new[t, 3] - xs[t, 3]
        a = us[t, 0] + alpha * k_ff[t, 0] + K[t, 0, 0] * d0 + K[t, 0, 1] * d1 + K[t, 0, 2] * d2 + K[t, 0, 3] * d3
        w = us[t, 1] + alpha * k_ff[t, 1] + K[t, 1, 0] * d0 + K[t, 1, 1] * d1 + K[t, 1, 2] * d2 + K[t, 1, 3] * d3
        a = a_lo if a < a_lo else (a_hi if a > a_hi else a)
        w = w_lo if w < w_lo else (w_hi if w > w_hi else w)
        us_new[t, 0] = a
        us_new[t, 1] = w
        v = xs_new[t, 2]
        th = xs_new[t, 3]
        xs_new[t + 1, 0] = xs_new[t, 0] + dt * v * math.cos(th)
        xs_new[t + 1, 1] = xs_new[t, 1] + dt * v * math.sin(th)
        xs_new[t + 1, 2] = v + dt * a
        xs_new[t + 1, 3] = th + dt * w
    return xs_new, us_new


@_jit
def _wrap(a):
    # Python's float % is fmod plus a sign fix-up, so this matches the
    # reference wrap_angle bit for bit, boundary included.
    w = (a + math.pi) % (2.0 * math.pi)
    if w == 0.0:
        w = 2.0 * math.pi
    return w - math.pi


@_jit
def _stage_grads(x, target, pred_pos, w_pos, w_v, w_theta, mu, d, l_x):
    """State gradient of one stage (tracking + hinge); writes into l_x."""
    l_x[0] = 2.0 * w_pos * (x[0] - target[0])
    l_x[1] = 2.0 * w_pos * (x[1] - target[1])
    l_x[2] = 2.0 * w_v * (x[2] - target[2])
    l_x[3] = 2.0 * w_theta * _wrap(x[3] - target[3])
    for p in range(pred_pos.shape[0]):
        dx = x[0] - pred_pos[p, 0]
        dy = x[1] - pred_pos[p, 1]
        r = math.hypot(dx, dy)
        if r < d and r > 1e-12:
            l_x[0] += -mu * dx / r
            l_x[1] += -mu * dy / r


@_jit
def backward_kernel(xs, us, target, pred_xs, w_pos, w_v, w_theta, w_a, w_omega, mu, d, dt, reg):
    """Riccati sweep with Levenberg-regularized 2x2 control Hessian.

    ``pred_xs`` stacks predecessor positions with shape (P, T+1, 2).
    Returns (ok, k_ff, K, dV1, dV2); ok=False when the regularized Quu is
    not positive definite at some stage.
    """
    T = us.shape[0]
    k_ff = np.zeros((T, 2))
    K = np.zeros((T, 2, 4))
    l_x = np.zeros(4)
    l_xx = np.zeros((4, 4))
    l_xx[0, 0] = 2.0 * w_pos
    l_xx[1, 1] = 2.0 * w_pos
    l_xx[2, 2] = 2.0 * w_v
    l_xx[3, 3] = 2.0 * w_theta

    _stage_grads(xs[T], target, pred_xs[:, T, :], w_pos, w_v, w_theta, mu, d, l_x)
    Vx = l_x.copy()
    Vxx = l_xx.copy()
    dV1 = 0.0
    dV2 = 0.0
    A = np.eye(4)
    for t in range(T - 1, -1, -1):
        v = xs[t, 2]
        th = xs[t, 3]
        c = math.cos(th)
        s = math.sin(th)
        A[0, 2] = dt * c
        A[0, 3] = -dt * v * s
        A[1, 2] = dt * s
        A[1, 3] = dt * v * c

        _stage_grads(xs[t], target, pred_xs[:, t, :], w_pos, w_v, w_theta, mu, d, l_x)
        # Qx = l_x + A^T Vx ; Qu = l_u + B^T Vx with B nonzero only at (2,0),(3,1).
        Qx = l_x + A.T @ Vx
        Qu0 = 2.0 * w_a * us[t, 0] + dt * Vx[2]
        Qu1 = 2.0 * w_omega * us[t, 1] + dt * Vx[3]
        VA = Vxx @ A
        Qxx = l_xx + A.T @ VA
        # Quu = l_uu + B^T Vxx B ; Qux = B^T Vxx A.
        qa = 2.0 * w_a + dt * dt * Vxx[2, 2] + reg
        qb = dt * dt * Vxx[3, 2]
        qc = 2.0 * w_omega + dt * dt * Vxx[3, 3] + reg
        Qux = np.empty((2, 4))
        for j in range(4):
            Qux[0, j] = dt * VA[2, j]
            Qux[1, j] = dt * VA[3, j]

        if qa <= 0.0:
            return False, k_ff, K, 0.0, 0.0
        l11 = math.sqrt(qa)
        l21 = qb / l11
        d2 = qc - l21 * l21
        if d2 <= 0.0:
            return False, k_ff, K, 0.0, 0.0
        l22 = math.sqrt(d2)
        # Solve the 2x2 system against [Qu | Qux] by forward/back substitution.
        z1 = np.empty(5)
        z2 = np.empty(5)
        z1[0] = Qu0
        z1[1:] = Qux[0]
        z2[0] = Qu1
        z2[1:] = Qux[1]
        z1 /= l11
        z2 = (z2 - l21 * z1) / l22
        y2 = z2 / l22
        y1 = (z1 - l21 * y2) / l11
        k_ff[t, 0] = -y1[0]
        k_ff[t, 1] = -y2[0]
        for j in range(4):
            K[t, 0, j] = -y1[1 + j]
            K[t, 1, j] = -y2[1 + j]

        Quu = np.empty((2, 2))
        Quu[0, 0] = qa - reg
        Quu[0, 1] = qb
        Quu[1, 0] = qb
        Quu[1, 1] = qc - reg
        Qu = np.empty(2)
        Qu[0] = Qu0
        Qu[1] = Qu1
        Kt = K[t]
        kt = k_ff[t]
        Vx = Qx + Kt.T @ (Quu @ kt) + Kt.T @ Qu + Qux.T @ kt
        Vxx = Qxx + Kt.T @ Quu @ Kt + Kt.T @ Qux + Qux.T @ Kt
        Vxx = 0.5 * (Vxx + Vxx.T)
        dV1 += kt[0] * Qu[0] + kt[1] * Qu[1]
        dV2 += 0.5 * (kt @ (Quu @ kt))
    return True, k_ff, K, dV1, dV2


@_jit
def surrogate_cost_kernel(xs, us, target, pred_xs, w_pos, w_v, w_theta, w_a, w_omega, mu, d):
    """Tracking + control + hinge totals; matches the reference sums."""
    T1 = xs.shape[0]
    total = 0.0
    for t in range(T1):
        dth = _wrap(xs[t, 3] - target[3])
        total += (
            w_pos * ((xs[t, 0] - target[0]) ** 2 + (xs[t, 1] - target[1]) ** 2)
            + w_v * (xs[t, 2] - target[2]) ** 2
            + w_theta * dth * dth
        )
        for p in range(pred_xs.shape[0]):
            dist = math.hypot(xs[t, 0] - pred_xs[p, t, 0], xs[t, 1] - pred_xs[p, t, 1])
            if dist < d:
                total += mu * (d - dist)
    for t in range(T1 - 1):
        total += w_a * us[t, 0] ** 2 + w_omega * us[t, 1] ** 2
    return total
