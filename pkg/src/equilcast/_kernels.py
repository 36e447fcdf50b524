"""Hot inner loops.

Each kernel exists twice: a numba ``@njit`` version with fused scalar loops and
a pure-numpy version vectorized per time step. ``_backend.USE_NUMBA`` picks the
exported name; both variants stay importable (``*_numba`` / ``*_numpy``) so the
benchmark and the equivalence tests can call them side by side.
"""
import numpy as np
from scipy.linalg import solve_banded

from ._backend import USE_NUMBA

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            def stub(*a, **k):
                raise RuntimeError("numba is not installed")
            return stub
        if len(args) == 1 and callable(args[0]):
            return wrap(args[0])
        return wrap


# ---------------------------------------------------------------------------
# LSTM layer recurrence
#
# Gate layout along the last axis of the pre-activations: [i, f, g, o], each of
# width H. ``zx`` holds the input projection x @ W + b for every step, so the
# kernels only carry the recurrent product h_{t-1} @ U.
# ---------------------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward_numpy(zx, U):
    """Run the recurrence. Returns (h, c, tanh(c), activated gates)."""
    T, B, G = zx.shape
    H = G // 4
    h = np.zeros((T, B, H))
    c = np.zeros((T, B, H))
    tc = np.zeros((T, B, H))
    acts = np.empty((T, B, G))
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    for t in range(T):
        z = zx[t] + h_prev @ U
        a = acts[t]
        a[:, :2 * H] = _sigmoid(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        c_prev = a[:, H:2 * H] * c_prev + a[:, :H] * a[:, 2 * H:3 * H]
        tc[t] = np.tanh(c_prev)
        h_prev = a[:, 3 * H:] * tc[t]
        c[t] = c_prev
        h[t] = h_prev
    return h, c, tc, acts


def lstm_backward_numpy(dh_in, c, tc, acts, UT):
    """Backpropagate through time; returns dL/dz for every step and gate."""
    T, B, H = dh_in.shape
    dz = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        a = acts[t]
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        dh = dh_in[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc[t] * tc[t])
        c_prev = c[t - 1] if t > 0 else np.zeros((B, H))
        d = dz[t]
        d[:, :H] = dc * g * i * (1.0 - i)
        d[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        d[:, 3 * H:] = dh * tc[t] * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ UT
    return dz


# Without Intel SVML, LLVM emits one libm call per exp, which dominates the
# recurrence. _vexp is a branch-free exp (Cody-Waite reduction, degree-12
# polynomial, exponent bits assembled by integer shift) that vectorizes;
# relative error stays below 1e-15 on [-700, 700]. Reassociation is left off
# so the round-to-integer shifter trick survives.
_FASTMATH = {"nnan", "ninf", "nsz", "arcp", "contract", "afn"}
_LOG2E = 1.4426950408889634
_LN2_HI = 0.693147180369123816490
_LN2_LO = 1.90821492927058770002e-10
_SHIFTER = 6755399441055744.0  # 1.5 * 2**52


@njit(cache=True, fastmath=_FASTMATH)
def _vexp(x, out):
    n = x.size
    bits = out.view(np.int64)
    for i in range(n):
        out[i] = min(max(x[i], -700.0), 700.0) * _LOG2E + _SHIFTER
    for i in range(n):
        bits[i] = (bits[i] + 1023) << 52
    for i in range(n):
        xi = min(max(x[i], -700.0), 700.0)
        k = (xi * _LOG2E + _SHIFTER) - _SHIFTER
        r = xi - k * _LN2_HI - k * _LN2_LO
        p = 2.08767569878681e-09
        p = p * r + 2.505210838544172e-08
        p = p * r + 2.755731922398589e-07
        p = p * r + 2.7557319223985893e-06
        p = p * r + 2.48015873015873e-05
        p = p * r + 0.0001984126984126984
        p = p * r + 0.001388888888888889
        p = p * r + 0.008333333333333333
        p = p * r + 0.041666666666666664
        p = p * r + 0.16666666666666666
        p = p * r + 0.5
        p = p * r + 1.0
        p = p * r + 1.0
        out[i] = p * out[i]
    return out


# tanh(x) = 2 sigmoid(2x) - 1, so every gate goes through the same exp.

@njit(cache=True, fastmath=_FASTMATH)
def lstm_forward_numba(zx, U):
    T, B, G = zx.shape
    H = G // 4
    h = np.zeros((T, B, H))
    c = np.zeros((T, B, H))
    tc = np.zeros((T, B, H))
    acts = np.empty((T, B, G))
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    neg_scale = -np.ones(G)
    neg_scale[2 * H:3 * H] = -2.0
    arg = np.empty(B * G)
    ex = np.empty(B * G)
    carg = np.empty(B * H)
    cex = np.empty(B * H)
    for t in range(T):
        z = zx[t] + np.dot(h_prev, U)
        for bi in range(B):
            for k in range(G):
                arg[bi * G + k] = neg_scale[k] * z[bi, k]
        _vexp(arg, ex)
        a = acts[t]
        for bi in range(B):
            for k in range(G):
                a[bi, k] = 1.0 / (1.0 + ex[bi * G + k])
            for k in range(2 * H, 3 * H):
                a[bi, k] = 2.0 * a[bi, k] - 1.0
            for k in range(H):
                cc = a[bi, H + k] * c_prev[bi, k] + a[bi, k] * a[bi, 2 * H + k]
                c_prev[bi, k] = cc
                carg[bi * H + k] = -2.0 * cc
        _vexp(carg, cex)
        for bi in range(B):
            for k in range(H):
                th = 2.0 / (1.0 + cex[bi * H + k]) - 1.0
                tc[t, bi, k] = th
                h_prev[bi, k] = a[bi, 3 * H + k] * th
        c[t] = c_prev
        h[t] = h_prev
    return h, c, tc, acts


@njit(cache=True, fastmath=True)
def lstm_backward_numba(dh_in, c, tc, acts, UT):
    T, B, H = dh_in.shape
    dz = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        d = dz[t]
        for bi in range(B):
            for k in range(H):
                ig = acts[t, bi, k]
                fg = acts[t, bi, H + k]
                gg = acts[t, bi, 2 * H + k]
                og = acts[t, bi, 3 * H + k]
                th = tc[t, bi, k]
                dh = dh_in[t, bi, k] + dh_next[bi, k]
                dc = dc_next[bi, k] + dh * og * (1.0 - th * th)
                cp = c[t - 1, bi, k] if t > 0 else 0.0
                d[bi, k] = dc * gg * ig * (1.0 - ig)
                d[bi, H + k] = dc * cp * fg * (1.0 - fg)
                d[bi, 2 * H + k] = dc * ig * (1.0 - gg * gg)
                d[bi, 3 * H + k] = dh * th * og * (1.0 - og)
                dc_next[bi, k] = dc * fg
        dh_next = np.dot(d, UT)
    return dz


# ---------------------------------------------------------------------------
# Pore transport-reaction integrator
#
# Finite-volume grid of n cells over the pore depth; Dirichlet reservoir at the
# pore mouth (half-cell distance), zero flux at the bottom. Backward Euler in
# both species: the bound density is eliminated cell-wise,
#     b(c) = (b0 + dt ka bmax c) / (1 + dt (ka c + kd)),
# and the remaining tridiagonal system in c is solved by Newton iteration.
# Stored moles then match the admitted boundary flux up to the Newton tolerance.
# ---------------------------------------------------------------------------

NEWTON_MAX_ITER = 30
NEWTON_RTOL = 1e-12


def pore_integrate_numpy(ka, kd, bmax, q, D, cbulk, depth, n, dt_out, n_steps, n_sub):
    h = depth / n
    dt = dt_out / n_sub
    r = D * dt / (h * h)
    base = np.full(n, 1.0 + 2.0 * r)
    base[0] = 1.0 + 3.0 * r
    base[-1] = 1.0 + r
    ab = np.zeros((3, n))
    ab[0, 1:] = -r
    ab[2, :-1] = -r
    c = np.zeros(n)
    b = np.zeros(n)
    bmean = np.zeros(n_steps)
    total = np.zeros(n_steps)
    influx = np.zeros(n_steps)
    cum_in = 0.0
    tol = NEWTON_RTOL * (cbulk + q * bmax) + 1e-300
    for k in range(1, n_steps):
        for _ in range(n_sub):
            c_old = c
            b_old = b
            rhs = c_old + q * b_old
            rhs[0] += 2.0 * r * cbulk
            c = c_old.copy()
            for _it in range(NEWTON_MAX_ITER):
                den = 1.0 + dt * (ka * c + kd)
                bc = (b_old + dt * ka * bmax * c) / den
                res = base * c + q * bc - rhs
                res[1:] -= r * c[:-1]
                res[:-1] -= r * c[1:]
                ab[1] = base + q * dt * ka * (bmax - bc) / den
                step = solve_banded((1, 1), ab, res, check_finite=False)
                c = np.maximum(c - step, 0.0)
                if np.max(np.abs(step)) <= tol:
                    break
            b = (b_old + dt * ka * bmax * c) / (1.0 + dt * (ka * c + kd))
            cum_in += 2.0 * r * h * (cbulk - c[0])
        bmean[k] = b.mean()
        total[k] = h * (c.sum() + q * b.sum())
        influx[k] = cum_in
    return bmean, total, influx, c, b


@njit(cache=True)
def pore_integrate_numba(ka, kd, bmax, q, D, cbulk, depth, n, dt_out, n_steps, n_sub):
    h = depth / n
    dt = dt_out / n_sub
    r = D * dt / (h * h)
    base = np.empty(n)
    for i in range(n):
        base[i] = 1.0 + 2.0 * r
    base[0] = 1.0 + 3.0 * r
    base[n - 1] = 1.0 + r
    c = np.zeros(n)
    b = np.zeros(n)
    b_old = np.zeros(n)
    rhs = np.empty(n)
    res = np.empty(n)
    diag = np.empty(n)
    cp = np.empty(n)
    y = np.empty(n)
    bmean = np.zeros(n_steps)
    total = np.zeros(n_steps)
    influx = np.zeros(n_steps)
    cum_in = 0.0
    tol = NEWTON_RTOL * (cbulk + q * bmax) + 1e-300
    for k in range(1, n_steps):
        for _ in range(n_sub):
            for i in range(n):
                b_old[i] = b[i]
                rhs[i] = c[i] + q * b[i]
            rhs[0] += 2.0 * r * cbulk
            for _it in range(NEWTON_MAX_ITER):
                for i in range(n):
                    den = 1.0 + dt * (ka * c[i] + kd)
                    bc = (b_old[i] + dt * ka * bmax * c[i]) / den
                    res[i] = base[i] * c[i] + q * bc - rhs[i]
                    if i > 0:
                        res[i] -= r * c[i - 1]
                    if i < n - 1:
                        res[i] -= r * c[i + 1]
                    diag[i] = base[i] + q * dt * ka * (bmax - bc) / den
                # Thomas solve, off-diagonals all -r
                inv = 1.0 / diag[0]
                cp[0] = -r * inv
                y[0] = res[0] * inv
                for i in range(1, n):
                    inv = 1.0 / (diag[i] + r * cp[i - 1])
                    cp[i] = -r * inv
                    y[i] = (res[i] + r * y[i - 1]) * inv
                for i in range(n - 2, -1, -1):
                    y[i] = y[i] - cp[i] * y[i + 1]
                big = 0.0
                for i in range(n):
                    ci = c[i] - y[i]
                    c[i] = ci if ci > 0.0 else 0.0
                    a = abs(y[i])
                    if a > big:
                        big = a
                if big <= tol:
                    break
            for i in range(n):
                b[i] = (b_old[i] + dt * ka * bmax * c[i]) / (1.0 + dt * (ka * c[i] + kd))
            cum_in += 2.0 * r * h * (cbulk - c[0])
        sb = 0.0
        sc = 0.0
        for i in range(n):
            sb += b[i]
            sc += c[i]
        bmean[k] = sb / n
        total[k] = h * (sc + q * sb)
        influx[k] = cum_in
    return bmean, total, influx, c, b


if USE_NUMBA and HAS_NUMBA:
    lstm_forward = lstm_forward_numba
    lstm_backward = lstm_backward_numba
    pore_integrate = pore_integrate_numba
else:
    lstm_forward = lstm_forward_numpy
    lstm_backward = lstm_backward_numpy
    pore_integrate = pore_integrate_numpy
