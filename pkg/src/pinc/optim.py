"""Full-batch optimizers on flat parameter vectors: ADAM, L-BFGS, projected L-BFGS.

Objectives are callables ``fg(x) -> (f, g)`` returning the value and gradient
together, since one tape sweep produces both.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 25

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ConfigError("L-BFGS line search needs 0 < c1 < c2 < 1")
        if self.memory < 1 or self.max_ls < 1:
            raise ConfigError("L-BFGS memory and max_ls must be positive")


class Adam:
    def __init__(self, n: int, config: AdamConfig = AdamConfig()):
        self.config = config
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        c = self.config
        self.t += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * (g * g)
        m_hat = self.m / (1.0 - c.beta1**self.t)
        v_hat = self.v / (1.0 - c.beta2**self.t)
        return x - c.lr * m_hat / (np.sqrt(v_hat) + c.eps)


# -- strong Wolfe line search ---------------------------------------------------

@dataclass
class LineSearchResult:
    alpha: float
    f: float
    g: np.ndarray | None
    evals: int
    success: bool


def _cubic_min(a1, f1, d1, a2, f2, d2, lo, hi):
    """Minimizer of the cubic through two (value, slope) points, clipped to ``[lo, hi]``."""
    if a1 == a2:
        return 0.5 * (lo + hi)
    t1 = d1 + d2 - 3.0 * (f1 - f2) / (a1 - a2)
    disc = t1 * t1 - d1 * d2
    if disc >= 0.0 and math.isfinite(disc):
        t2 = math.sqrt(disc)
        if a1 <= a2:
            den = d2 - d1 + 2.0 * t2
            pos = a2 - (a2 - a1) * ((d2 + t2 - t1) / den) if den != 0 else 0.5 * (lo + hi)
        else:
            den = d1 - d2 + 2.0 * t2
            pos = a1 - (a1 - a2) * ((d1 + t2 - t1) / den) if den != 0 else 0.5 * (lo + hi)
        if math.isfinite(pos):
            return min(max(pos, lo), hi)
    return 0.5 * (lo + hi)


def strong_wolfe(fg: Objective, x, d, f0, g0, alpha=1.0, c1=1e-4, c2=0.9, max_evals=25):
    """Step length satisfying the strong Wolfe conditions (bracket, then zoom).

    If the budget runs out, the best sufficient-decrease point seen is returned
    with ``success=False``; if none exists ``alpha`` is 0.
    """
    dphi0 = float(g0 @ d)
    evals = 0

    def phi(a):
        f, g = fg(x + a * d)
        f = float(f)
        return f, g, (float(g @ d) if math.isfinite(f) else math.nan)

    best = LineSearchResult(0.0, f0, g0, 0, False)
    prev = (0.0, f0, dphi0, g0)
    bracket = None
    while evals < max_evals:
        f, g, dphi = phi(alpha)
        evals += 1
        cur = (alpha, f, dphi, g)
        if not math.isfinite(f) or f > f0 + c1 * alpha * dphi0 or (evals > 1 and f >= prev[1]):
            bracket = [prev, cur]
            break
        if f < best.f:
            best = LineSearchResult(alpha, f, g, evals, False)
        if abs(dphi) <= -c2 * dphi0:
            return LineSearchResult(alpha, f, g, evals, True)
        if dphi >= 0.0:
            bracket = [cur, prev]
            break
        lo, hi = alpha + 0.01 * (alpha - prev[0]), 10.0 * alpha
        nxt = _cubic_min(prev[0], prev[1], prev[2], alpha, f, dphi, lo, hi)
        prev, alpha = cur, nxt
    if bracket is None:
        best.evals = evals
        return best

    # zoom: bracket[0] always satisfies sufficient decrease with the lower value
    while evals < max_evals:
        (a_lo, f_lo, d_lo, g_lo), (a_hi, f_hi, d_hi, _) = bracket
        width = abs(a_hi - a_lo)
        if width * float(np.max(np.abs(d))) < 1e-14:
            break
        left, right = min(a_lo, a_hi), max(a_lo, a_hi)
        if math.isfinite(f_hi) and math.isfinite(d_hi):
            alpha = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi, left, right)
        else:
            alpha = 0.5 * (left + right)
        # keep the trial away from the bracket ends
        margin = 0.1 * width
        if alpha - left < margin or right - alpha < margin:
            alpha = 0.5 * (left + right)
        f, g, dphi = phi(alpha)
        evals += 1
        cur = (alpha, f, dphi, g)
        if not math.isfinite(f) or f > f0 + c1 * alpha * dphi0 or f >= f_lo:
            bracket[1] = cur
        else:
            if f < best.f:
                best = LineSearchResult(alpha, f, g, evals, False)
            if abs(dphi) <= -c2 * dphi0:
                return LineSearchResult(alpha, f, g, evals, True)
            if dphi * (a_hi - a_lo) >= 0.0:
                bracket[1] = bracket[0]
            bracket[0] = cur
    best.evals = evals
    return best


# -- L-BFGS ---------------------------------------------------------------------

class _Memory:
    def __init__(self, size):
        self.pairs: deque = deque(maxlen=size)

    def clear(self):
        self.pairs.clear()

    def update(self, s, y):
        sy = float(s @ y)
        if sy > 1e-10 * float(y @ y) and sy > 0.0:
            self.pairs.append((s, y, 1.0 / sy))

    def direction(self, g):
        """Two-loop recursion: ``-H g``."""
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * float(s @ q)
            q -= a * y
            alphas.append(a)
        if self.pairs:
            s, y, _ = self.pairs[-1]
            q *= float(s @ y) / float(y @ y)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return -q


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    evals: int
    converged: bool
    message: str


def lbfgs(
    fg: Objective,
    x0: np.ndarray,
    max_iter: int,
    config: LbfgsConfig = LbfgsConfig(),
    *,
    gtol: float = 0.0,
    line_search: Callable | None = None,
    callback: Callable | None = None,
) -> LbfgsResult:
    """Minimize ``fg`` from ``x0`` for at most ``max_iter`` accepted steps.

    ``line_search(fg, x, d, f, g) -> LineSearchResult`` overrides the strong
    Wolfe search (tests plug in an exact search). ``callback(it, f, x, g)`` is
    called after each accepted step; a truthy return stops the run.
    On a failed line search the memory is reset once and steepest descent
    tried; a second failure ends the run without raising.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fg(x)
    f = float(f)
    evals = 1
    mem = _Memory(config.memory)
    if max_iter <= 0:
        return LbfgsResult(x, f, g, 0, evals, False, "no iterations requested")
    it = 0
    while it < max_iter:
        if float(np.max(np.abs(g))) <= gtol:
            return LbfgsResult(x, f, g, it, evals, True, "gradient tolerance reached")
        d = mem.direction(g)
        if float(g @ d) >= 0.0:
            mem.clear()
            d = -g
        fresh = not mem.pairs
        alpha0 = min(1.0, 1.0 / max(float(np.sum(np.abs(g))), 1e-300)) if fresh else 1.0
        if line_search is None:
            ls = strong_wolfe(fg, x, d, f, g, alpha0, config.c1, config.c2, config.max_ls)
        else:
            ls = line_search(fg, x, d, f, g)
        evals += ls.evals
        if ls.alpha <= 0.0 or not ls.f <= f:
            if fresh:
                return LbfgsResult(x, f, g, it, evals, False, "line search failed")
            mem.clear()
            continue
        x_new = x + ls.alpha * d
        g_new = ls.g
        if g_new is None:
            _, g_new = fg(x_new)
            evals += 1
        mem.update(x_new - x, g_new - g)
        x, f, g = x_new, ls.f, g_new
        it += 1
        if callback is not None and callback(it, f, x, g):
            return LbfgsResult(x, f, g, it, evals, False, "stopped by callback")
    return LbfgsResult(x, f, g, it, evals, False, "iteration budget exhausted")


def exact_quadratic_search(A: np.ndarray):
    """Exact line search for ``f = 0.5 x'Ax - b'x`` (test utility)."""

    def search(fg, x, d, f, g):
        alpha = -float(g @ d) / float(d @ A @ d)
        f_new, g_new = fg(x + alpha * d)
        return LineSearchResult(alpha, float(f_new), g_new, 1, True)

    return search


def projected_lbfgs(
    fg: Objective,
    x0: np.ndarray,
    project: Callable[[np.ndarray], np.ndarray],
    max_iter: int = 100,
    *,
    memory: int = 10,
    gtol: float = 1e-6,
    ftol: float = 1e-12,
    c1: float = 1e-4,
    max_ls: int = 30,
) -> LbfgsResult:
    """L-BFGS with projection onto a feasible set after each trial step.

    Coordinates within a short step of their bound, with the gradient pointing
    out, take a projected gradient step; the rest follow the quasi-Newton
    direction. Trial points are ``project(x + alpha d)`` with Armijo
    backtracking along the projected path, so every accepted iterate is
    feasible and lowers ``f``.
    Stationarity is measured by the projected gradient ``project(x - g) - x``.
    """
    x = project(np.array(x0, dtype=np.float64))
    f, g = fg(x)
    f = float(f)
    evals = 1
    mem = _Memory(memory)
    it = 0
    while True:
        pg = project(x - g) - x
        if float(np.max(np.abs(pg), initial=0.0)) <= gtol:
            return LbfgsResult(x, f, g, it, evals, True, "projected gradient tolerance reached")
        if it >= max_iter:
            return LbfgsResult(x, f, g, it, evals, False, "iteration budget exhausted")
        accepted = None
        # two-metric split: quasi-Newton on free coordinates, projected gradient on the
        # epsilon-active ones, i.e. those clipped by a short probe step along -g
        eps = min(1e-3, float(np.max(np.abs(pg)))) / float(np.max(np.abs(g)))
        probe = project(x - eps * g) - x
        active = np.abs(probe + eps * g) > 1e-9 * eps * np.abs(g)
        for attempt in range(2):
            if mem.pairs:
                d = mem.direction(np.where(active, 0.0, g))
                d[active] = pg[active]
                if float(g @ d) >= 0.0:
                    d = -g
            else:
                d = -g
            alpha = 1.0 if mem.pairs else min(1.0, 1.0 / max(float(np.max(np.abs(g))), 1e-300))
            for _ in range(max_ls):
                x_try = project(x + alpha * d)
                s = x_try - x
                slope = float(g @ s)
                if slope >= 0.0:
                    alpha *= 0.5
                    continue
                f_try, g_try = fg(x_try)
                evals += 1
                if math.isfinite(f_try) and f_try <= f + c1 * slope:
                    accepted = (x_try, float(f_try), g_try)
                    break
                alpha *= 0.5
            if accepted is not None or not mem.pairs:
                break
            mem.clear()
        if accepted is None:
            return LbfgsResult(x, f, g, it, evals, False, "line search failed")
        x_new, f_new, g_new = accepted
        mem.update(x_new - x, g_new - g)
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        it += 1
        if decrease <= ftol * max(1.0, abs(f)):
            return LbfgsResult(x, f, g, it, evals, True, "relative decrease below ftol")
