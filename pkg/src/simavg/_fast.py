"""Compiled Nadaraya-Watson loops (Gaussian kernel) used by the optimizers.

Kernel normalising constants cancel in the weights, so only exp(-u^2/2) is
evaluated. Rows whose raw weights would underflow are recomputed with the
row's smallest squared distance factored out, which leaves the normalised
weights unchanged.
"""
import numpy as np
from numba import njit

_TINY = 1e-290


@njit(cache=True)
def _loo_symmetric(z, y, h, want_grad):
    n = z.shape[0]
    c = -0.5 / (h * h)
    kk = np.empty(n * (n - 1) // 2)
    s = np.zeros(n)
    num = np.zeros(n)
    idx = 0
    for i in range(n):
        zi = z[i]
        yi = y[i]
        for j in range(i + 1, n):
            d = zi - z[j]
            k = np.exp(c * d * d)
            kk[idx] = k
            idx += 1
            s[i] += k
            s[j] += k
            num[i] += k * y[j]
            num[j] += k * yi
    for i in range(n):
        if s[i] < _TINY:
            return False, 0.0, np.zeros(n), np.zeros(n)
    yh = num / s
    r = y - yh
    obj = 0.0
    for i in range(n):
        obj += r[i] * r[i]
    obj /= n
    v = np.zeros(n)
    if want_grad:
        a = np.zeros(n)
        b = np.zeros(n)
        c2 = 2.0 * c
        idx = 0
        for i in range(n):
            for j in range(i + 1, n):
                k = kk[idx]
                idx += 1
                d = z[i] - z[j]
                gij = k / s[i] * c2 * d * (y[j] - yh[i])
                gji = -k / s[j] * c2 * d * (y[i] - yh[j])
                a[i] += gij
                a[j] += gji
                b[j] += r[i] * gij
                b[i] += r[j] * gji
        v = r * a - b
    return True, obj, v, yh


@njit(cache=True)
def _loo_shifted(z, y, h, want_grad):
    n = z.shape[0]
    c = -0.5 / (h * h)
    shift = np.empty(n)
    for i in range(n):
        dmin = np.inf
        for j in range(n):
            if j != i:
                d = z[i] - z[j]
                if d * d < dmin:
                    dmin = d * d
        shift[i] = c * dmin
    s = np.zeros(n)
    num = np.zeros(n)
    for i in range(n):
        for j in range(n):
            if j != i:
                d = z[i] - z[j]
                k = np.exp(c * d * d - shift[i])
                s[i] += k
                num[i] += k * y[j]
    yh = num / s
    r = y - yh
    obj = 0.0
    for i in range(n):
        obj += r[i] * r[i]
    obj /= n
    v = np.zeros(n)
    if want_grad:
        a = np.zeros(n)
        b = np.zeros(n)
        for i in range(n):
            for j in range(n):
                if j != i:
                    d = z[i] - z[j]
                    k = np.exp(c * d * d - shift[i])
                    g = k / s[i] * 2.0 * c * d * (y[j] - yh[i])
                    a[i] += g
                    b[j] += r[i] * g
        v = r * a - b
    return obj, v, yh


@njit(cache=True)
def _loo_value(z, y, h):
    n = z.shape[0]
    c = -0.5 / (h * h)
    s = np.zeros(n)
    num = np.zeros(n)
    for i in range(n):
        zi = z[i]
        yi = y[i]
        for j in range(i + 1, n):
            d = zi - z[j]
            k = np.exp(c * d * d)
            s[i] += k
            s[j] += k
            num[i] += k * y[j]
            num[j] += k * yi
    obj = 0.0
    for i in range(n):
        if s[i] < _TINY:
            return _loo_shifted(z, y, h, False)[0]
        r = y[i] - num[i] / s[i]
        obj += r * r
    return obj / n


@njit(cache=True)
def _shifted_value(z, x, delta, y, h):
    return _loo_value(z + delta * x, y, h)


@njit(cache=True)
def side_search(z, x, y, h, lam, b, sign, upper, xatol, maxfun=200):
    """Bounded Brent minimisation of H(z + (sign*u - b) x) + lam*u over u in (0, upper).

    Port of the classic fminbound iteration (endpoints are never evaluated).
    Returns ``(u, H at u)``.
    """
    sqrt_eps = 1.4901161193847656e-08
    golden_mean = 0.5 * (3.0 - np.sqrt(5.0))
    a = 0.0
    bb = upper
    fulc = a + golden_mean * (bb - a)
    nfc = fulc
    xf = fulc
    rat = 0.0
    e = 0.0
    hx = _shifted_value(z, x, sign * xf - b, y, h)
    fx = hx + lam * xf
    num = 1
    ffulc = fx
    fnfc = fx
    xm = 0.5 * (a + bb)
    tol1 = sqrt_eps * abs(xf) + xatol / 3.0
    tol2 = 2.0 * tol1
    while abs(xf - xm) > (tol2 - 0.5 * (bb - a)):
        golden = True
        if abs(e) > tol1:
            golden = False
            r = (xf - nfc) * (fx - ffulc)
            q = (xf - fulc) * (fx - fnfc)
            p = (xf - fulc) * q - (xf - nfc) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r = e
            e = rat
            if abs(p) < abs(0.5 * q * r) and p > q * (a - xf) and p < q * (bb - xf):
                rat = p / q
                xt = xf + rat
                if (xt - a) < tol2 or (bb - xt) < tol2:
                    rat = tol1 if xm >= xf else -tol1
            else:
                golden = True
        if golden:
            e = (a - xf) if xf >= xm else (bb - xf)
            rat = golden_mean * e
        step = max(abs(rat), tol1)
        xu = xf + step if rat >= 0.0 else xf - step
        hu = _shifted_value(z, x, sign * xu - b, y, h)
        fu = hu + lam * xu
        num += 1
        if fu <= fx:
            if xu >= xf:
                a = xf
            else:
                bb = xf
            fulc, ffulc = nfc, fnfc
            nfc, fnfc = xf, fx
            xf, fx, hx = xu, fu, hu
        else:
            if xu < xf:
                a = xu
            else:
                bb = xu
            if fu <= fnfc or nfc == xf:
                fulc, ffulc = nfc, fnfc
                nfc, fnfc = xu, fu
            elif fu <= ffulc or fulc == xf or fulc == nfc:
                fulc, ffulc = xu, fu
        xm = 0.5 * (a + bb)
        tol1 = sqrt_eps * abs(xf) + xatol / 3.0
        tol2 = 2.0 * tol1
        if num >= maxfun:
            break
    return xf, hx


def loo_value(z, y, h):
    """Leave-one-out NW criterion only (no gradient work)."""
    return _loo_value(np.ascontiguousarray(z, dtype=np.float64),
                      np.ascontiguousarray(y, dtype=np.float64), float(h))


def loo_objective(z, y, h, want_grad=True):
    """Leave-one-out NW criterion mean((y - yhat)^2) at index values ``z``.

    Returns ``(objective, v, yhat)``. With ``want_grad`` the gradient with
    respect to coefficients ``beta`` (for ``z = X @ beta``) is
    ``-2/n * X.T @ v``.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    ok, obj, v, yh = _loo_symmetric(z, y, float(h), want_grad)
    if not ok:
        obj, v, yh = _loo_shifted(z, y, float(h), want_grad)
    return obj, v, yh


@njit(cache=True)
def _nw_cross(zq, zt, yt, h):
    m = zq.shape[0]
    n = zt.shape[0]
    c = -0.5 / (h * h)
    out = np.empty(m)
    raw_zero = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        dmin = np.inf
        for j in range(n):
            d = zq[i] - zt[j]
            if d * d < dmin:
                dmin = d * d
        sh = c * dmin
        raw_zero[i] = np.exp(sh) == 0.0
        s = 0.0
        num = 0.0
        for j in range(n):
            d = zq[i] - zt[j]
            k = np.exp(c * d * d - sh)
            s += k
            num += k * yt[j]
        out[i] = num / s
    return out, raw_zero


def nw_cross(zq, zt, yt, h):
    """NW estimate at query indices ``zq`` from training pairs ``(zt, yt)``.

    Also returns a mask of queries whose raw kernel weights all underflow.
    """
    return _nw_cross(
        np.ascontiguousarray(zq, dtype=np.float64),
        np.ascontiguousarray(zt, dtype=np.float64),
        np.ascontiguousarray(yt, dtype=np.float64),
        float(h),
    )
