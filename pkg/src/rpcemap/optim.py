"""Maximizers used by the trainer and the active-learning loop.

Both work on real vectors. Objective values that are NaN or -inf mark
invalid points: PSO ranks them last, the L-BFGS line search backs off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PsoSettings:
    n_particles: int = 500
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    max_iterations: int = 200
    stall_limit: int = 20
    stall_tol: float = 1e-9
    lower: object = -6.0
    upper: object = 6.0

    def bounds(self, d):
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (d,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (d,)).copy()
        if np.any(hi <= lo) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("PSO bounds must be finite with lower < upper")
        return lo, hi


@dataclass
class PsoResult:
    x: np.ndarray
    f: float
    iterations: int
    initial_best: float


def _clean(values):
    v = np.asarray(values, dtype=float)
    return np.where(np.isnan(v), -np.inf, v)


def pso_maximize(f, d, settings, rng, init=None):
    """Global-best particle swarm maximization of a vectorized objective.

    ``f`` maps an (n, d) array to n values. ``init`` optionally seeds the
    first rows of the swarm (e.g. known good points).
    """
    lo, hi = settings.bounds(d)
    width = hi - lo
    n = settings.n_particles
    x = lo + rng.random((n, d)) * width
    if init is not None:
        init = np.clip(np.atleast_2d(np.asarray(init, dtype=float)), lo, hi)[:n]
        x[: init.shape[0]] = init
    v = (rng.random((n, d)) - 0.5) * width
    fx = _clean(f(x))
    pbest, pval = x.copy(), fx.copy()
    g = int(np.argmax(pval))
    gbest, gval = pbest[g].copy(), pval[g]
    initial_best = gval
    stall = 0
    it = 0
    for it in range(1, settings.max_iterations + 1):
        r1 = rng.random((n, d))
        r2 = rng.random((n, d))
        v = (settings.inertia * v + settings.cognitive * r1 * (pbest - x)
             + settings.social * r2 * (gbest - x))
        np.clip(v, -width, width, out=v)
        x = x + v
        # reflect at the walls and damp the offending velocity component
        below, above = x < lo, x > hi
        x = np.where(below, 2 * lo - x, x)
        x = np.where(above, 2 * hi - x, x)
        x = np.clip(x, lo, hi)
        v = np.where(below | above, -0.5 * v, v)
        fx = _clean(f(x))
        better = fx > pval
        pbest[better] = x[better]
        pval[better] = fx[better]
        g = int(np.argmax(pval))
        if pval[g] > gval + settings.stall_tol * max(1.0, abs(gval) if np.isfinite(gval) else 1.0):
            stall = 0
        else:
            stall += 1
        if pval[g] > gval:
            gbest, gval = pbest[g].copy(), pval[g]
        if stall >= settings.stall_limit:
            break
    return PsoResult(gbest, float(gval), it, float(initial_best))


@dataclass
class QuasiNewtonSettings:
    memory: int = 10
    gtol: float = 1e-8
    max_iterations: int = 500
    c1: float = 1e-4
    c2: float = 0.9
    max_linesearch: int = 40

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line search constants need 0 < c1 < c2 < 1")


@dataclass
class QuasiNewtonResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    converged: bool
    iterations: int
    message: str


def _bad(v):
    return not np.isfinite(v)


def _zoom(phi, a_lo, a_hi, f_lo, d_lo, f0, d0, c1, c2, max_iter):
    # minimization form (phi = -f along the ray)
    for _ in range(max_iter):
        a = 0.5 * (a_lo + a_hi)
        fa, da, payload = phi(a)
        if _bad(fa) or fa > f0 + c1 * a * d0 or fa >= f_lo:
            a_hi = a
        else:
            if abs(da) <= -c2 * d0:
                return a, fa, payload
            if da * (a_hi - a_lo) >= 0:
                a_hi = a_lo
            a_lo, f_lo = a, fa
    return None


def _strong_wolfe(phi, f0, d0, c1, c2, max_iter, a1=1.0):
    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = a1
    for i in range(max_iter):
        fa, da, payload = phi(a)
        if _bad(fa):
            # invalid region: shrink towards the last good step
            a = a_prev + 0.25 * (a - a_prev)
            continue
        if fa > f0 + c1 * a * d0 or (i > 0 and fa >= f_prev):
            return _zoom(phi, a_prev, a, f_prev, d_prev, f0, d0, c1, c2, max_iter)
        if abs(da) <= -c2 * d0:
            return a, fa, payload
        if da >= 0:
            return _zoom(phi, a, a_prev, fa, da, f0, d0, c1, c2, max_iter)
        a_prev, f_prev, d_prev = a, fa, da
        a = 2.0 * a
    return None


def lbfgs_maximize(f, grad, x0, settings=None):
    """Limited-memory BFGS ascent with a strong-Wolfe line search.

    Returns the best iterate; ``converged`` is True when the gradient norm
    fell below ``settings.gtol``.
    """
    s = settings or QuasiNewtonSettings()
    x = np.asarray(x0, dtype=float).copy()
    fx = float(f(x))
    if _bad(fx):
        raise ValueError("L-BFGS start point has an invalid objective value")
    g = -np.asarray(grad(x), dtype=float)  # gradient of the minimized -f
    S, Y = [], []
    for it in range(s.max_iterations + 1):
        gnorm = np.linalg.norm(g)
        if gnorm <= s.gtol:
            return QuasiNewtonResult(x, fx, -g, True, it, "gradient tolerance reached")
        if it == s.max_iterations:
            break
        # two-loop recursion
        qv = g.copy()
        rho = [1.0 / np.dot(y, sv) for sv, y in zip(S, Y)]
        a = []
        for sv, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
            ai = r * np.dot(sv, qv)
            qv -= ai * y
            a.append(ai)
        if S:
            qv *= np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
        else:
            qv /= max(gnorm, 1.0)
        for (sv, y, r), ai in zip(zip(S, Y, rho), reversed(a)):
            b = r * np.dot(y, qv)
            qv += sv * (ai - b)
        p = -qv
        d0 = float(np.dot(g, p))
        if d0 >= 0:
            S.clear(); Y.clear()
            p = -g / max(gnorm, 1.0)
            d0 = float(np.dot(g, p))

        def phi(alpha, p=p):
            xn = x + alpha * p
            fn = float(f(xn))
            if _bad(fn):
                return np.inf, np.nan, None
            gn = -np.asarray(grad(xn), dtype=float)
            return -fn, float(np.dot(gn, p)), (xn, fn, gn)

        found = _strong_wolfe(phi, -fx, d0, s.c1, s.c2, s.max_linesearch)
        if found is None:
            return QuasiNewtonResult(x, fx, -g, False, it, "line search failed")
        _, _, (xn, fn, gn) = found
        sv, y = xn - x, gn - g
        if np.dot(sv, y) > 1e-12 * np.dot(y, y):
            S.append(sv); Y.append(y)
            if len(S) > s.memory:
                S.pop(0); Y.pop(0)
        x, fx, g = xn, fn, gn
    return QuasiNewtonResult(x, fx, -g, False, s.max_iterations, "iteration budget exhausted")
