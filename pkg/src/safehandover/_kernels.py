"""Compiled inner loops for forward kinematics and capsule clearances."""

import numpy as np
from numba import njit

EPS = 1e-15


@njit(cache=True)
def _mul4(X, Y, out):
    for i in range(4):
        for j in range(4):
            out[i, j] = X[i, 0] * Y[0, j] + X[i, 1] * Y[1, j] + X[i, 2] * Y[2, j] + X[i, 3] * Y[3, j]


@njit(cache=True)
def fk_frames(params, tool, Q):
    B, n = Q.shape
    out = np.zeros((B, n + 2, 4, 4))
    T = np.empty((4, 4))
    for b in range(B):
        for k in range(4):
            out[b, 0, k, k] = 1.0
        for i in range(n):
            alpha, a, d, off = params[i, 0], params[i, 1], params[i, 2], params[i, 3]
            th = Q[b, i] + off
            ct, st = np.cos(th), np.sin(th)
            ca, sa = np.cos(alpha), np.sin(alpha)
            T[0, 0] = ct
            T[0, 1] = -st
            T[0, 2] = 0.0
            T[0, 3] = a
            T[1, 0] = st * ca
            T[1, 1] = ct * ca
            T[1, 2] = -sa
            T[1, 3] = -sa * d
            T[2, 0] = st * sa
            T[2, 1] = ct * sa
            T[2, 2] = ca
            T[2, 3] = ca * d
            T[3, 0] = 0.0
            T[3, 1] = 0.0
            T[3, 2] = 0.0
            T[3, 3] = 1.0
            _mul4(out[b, i], T, out[b, i + 1])
        _mul4(out[b, n], tool, out[b, n + 1])
    return out


@njit(cache=True)
def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@njit(cache=True)
def seg_dist(p1, q1, p2, q2):
    d1x, d1y, d1z = q1[0] - p1[0], q1[1] - p1[1], q1[2] - p1[2]
    d2x, d2y, d2z = q2[0] - p2[0], q2[1] - p2[1], q2[2] - p2[2]
    rx, ry, rz = p1[0] - p2[0], p1[1] - p2[1], p1[2] - p2[2]
    a = d1x * d1x + d1y * d1y + d1z * d1z
    e = d2x * d2x + d2y * d2y + d2z * d2z
    f = d2x * rx + d2y * ry + d2z * rz
    if a <= EPS and e <= EPS:
        s = 0.0
        t = 0.0
    elif a <= EPS:
        s = 0.0
        t = _clamp01(f / e)
    else:
        c = d1x * rx + d1y * ry + d1z * rz
        if e <= EPS:
            t = 0.0
            s = _clamp01(-c / a)
        else:
            b = d1x * d2x + d1y * d2y + d1z * d2z
            denom = a * e - b * b
            if denom > EPS * a * e:
                s = _clamp01((b * f - c * e) / denom)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = _clamp01(-c / a)
            elif t > 1.0:
                t = 1.0
                s = _clamp01((b - c) / a)
    x = rx + s * d1x - t * d2x
    y = ry + s * d1y - t * d2y
    z = rz + s * d1z - t * d2z
    return np.sqrt(x * x + y * y + z * z)


@njit(cache=True)
def seg_dist_many(P1, Q1, P2, Q2):
    n = P1.shape[0]
    out = np.empty(n)
    for k in range(n):
        out[k] = seg_dist(P1[k], Q1[k], P2[k], Q2[k])
    return out


@njit(cache=True)
def place_capsules(frames, links, A, Bc):
    """World endpoints of link capsules: ``(B, nc, 3)`` each."""
    nb = frames.shape[0]
    nc = links.shape[0]
    Aw = np.empty((nb, nc, 3))
    Bw = np.empty((nb, nc, 3))
    for b in range(nb):
        for c in range(nc):
            F = frames[b, links[c]]
            for i in range(3):
                Aw[b, c, i] = F[i, 0] * A[c, 0] + F[i, 1] * A[c, 1] + F[i, 2] * A[c, 2] + F[i, 3]
                Bw[b, c, i] = F[i, 0] * Bc[c, 0] + F[i, 1] * Bc[c, 1] + F[i, 2] * Bc[c, 2] + F[i, 3]
    return Aw, Bw


@njit(cache=True)
def clearances(Aw, Bw, R, EA, EB, ER):
    nb, nc = Aw.shape[0], Aw.shape[1]
    ne = EA.shape[0]
    out = np.empty((nb, nc, ne))
    for b in range(nb):
        for c in range(nc):
            for e in range(ne):
                out[b, c, e] = seg_dist(Aw[b, c], Bw[b, c], EA[e], EB[e]) - R[c] - ER[e]
    return out


@njit(cache=True)
def pair_clearance(Aw, Bw, R, EA, EB, ER, i, j):
    nb = Aw.shape[0]
    out = np.empty(nb)
    for b in range(nb):
        out[b] = seg_dist(Aw[b, i], Bw[b, i], EA[j], EB[j]) - R[i] - ER[j]
    return out


@njit(cache=True)
def jacobian(frames):
    """Geometric Jacobian from one set of frames ``(n + 2, 4, 4)``."""
    n = frames.shape[0] - 2
    J = np.empty((6, n))
    px, py, pz = frames[n + 1, 0, 3], frames[n + 1, 1, 3], frames[n + 1, 2, 3]
    for i in range(n):
        f = frames[i + 1]
        zx, zy, zz = f[0, 2], f[1, 2], f[2, 2]
        rx, ry, rz = px - f[0, 3], py - f[1, 3], pz - f[2, 3]
        J[0, i] = zy * rz - zz * ry
        J[1, i] = zz * rx - zx * rz
        J[2, i] = zx * ry - zy * rx
        J[3, i] = zx
        J[4, i] = zy
        J[5, i] = zz
    return J
