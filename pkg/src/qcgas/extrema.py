"""Suprema and infima by nested uniform grids, and lattice-shell tail bounds.

Grids at level ``L`` carry ``2**L + 1`` points per axis including both
endpoints, so every grid contains the previous one and a grid supremum can
only grow under refinement.  Refinement doubles the resolution and stops once
consecutive levels agree to ``rel_tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

REL_TOL = 1e-4
START_LEVEL = 4


@dataclass(frozen=True)
class Extremum:
    value: float
    level: int
    points_per_axis: int
    converged: bool

    @property
    def resolution(self) -> int:
        return self.points_per_axis


def _reduce(vals: np.ndarray, mode: str, axis=None):
    with np.errstate(invalid="ignore"):
        if mode == "sup":
            vals = np.where(np.isnan(vals), -np.inf, vals)
            return np.max(vals, axis=axis)
        vals = np.where(np.isnan(vals), np.inf, vals)
        return np.min(vals, axis=axis)


def _close(new, old, rel_tol):
    new = np.asarray(new, dtype=float)
    old = np.asarray(old, dtype=float)
    both_inf = np.isinf(new) & np.isinf(old) & (np.sign(new) == np.sign(old))
    with np.errstate(invalid="ignore"):
        diff = np.abs(new - old)
        ok = diff <= rel_tol * np.maximum(np.abs(new), 1e-300)
    return both_inf | (diff == 0) | np.nan_to_num(ok, nan=False).astype(bool)


def grid_extremum(f, lows, highs, mode: str = "sup", *, rel_tol: float = REL_TOL,
                  start_level: int = START_LEVEL, max_points: int = 2_000_000,
                  chunk: int = 262_144) -> Extremum:
    """Extremum of ``f`` over the closed box ``[lows, highs]`` in R^k.

    ``f`` maps an ``(M, k)`` array of points to ``M`` values.  NaN values are
    ignored.  Refinement stops at ``rel_tol`` or when the next grid would
    exceed ``max_points`` evaluations (then ``converged`` is False).
    """
    if mode not in ("sup", "inf"):
        raise ValueError("mode must be 'sup' or 'inf'")
    lows = np.atleast_1d(np.asarray(lows, dtype=float))
    highs = np.atleast_1d(np.asarray(highs, dtype=float))
    k = lows.size

    def evaluate(level):
        m = 2 ** level + 1
        axes = [np.linspace(lo, hi, m) for lo, hi in zip(lows, highs)]
        total = m ** k
        best = -np.inf if mode == "sup" else np.inf
        for start in range(0, total, chunk):
            flat = np.arange(start, min(total, start + chunk))
            idx = np.unravel_index(flat, (m,) * k)
            pts = np.stack([axes[j][idx[j]] for j in range(k)], axis=1)
            with np.errstate(all="ignore"):
                vals = np.asarray(f(pts), dtype=float)
            v = _reduce(vals, mode)
            best = max(best, v) if mode == "sup" else min(best, v)
        return float(best)

    level = start_level
    while (2 ** level + 1) ** k > max_points and level > 1:
        level -= 1
    prev = evaluate(level)
    while True:
        nxt_pts = (2 ** (level + 1) + 1) ** k
        if nxt_pts > max_points:
            return Extremum(prev, level, 2 ** level + 1, False)
        cur = evaluate(level + 1)
        level += 1
        if _close(cur, prev, rel_tol):
            return Extremum(cur, level, 2 ** level + 1, True)
        prev = cur


def interval_extrema(f, lo, hi, mode: str = "sup", *, open_at_zero: bool = True,
                     rel_tol: float = REL_TOL, start_level: int = START_LEVEL,
                     max_level: int = 16):
    """Vectorized 1-D extrema of ``f`` over many closed intervals ``[lo_i, hi_i]``.

    With ``open_at_zero`` a left endpoint equal to 0 is excluded, which is how
    radial functions singular at the origin are handled.  Returns
    ``(values, levels, converged)`` arrays.
    """
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    n = lo.size
    values = np.empty(n)
    levels = np.full(n, start_level)
    conv = np.zeros(n, dtype=bool)

    def evaluate(sel, level):
        m = 2 ** level + 1
        t = np.linspace(0.0, 1.0, m)
        r = lo[sel, None] + (hi[sel] - lo[sel])[:, None] * t[None, :]
        if open_at_zero:
            r = np.where(r <= 0.0, np.nan, r)
        with np.errstate(all="ignore"):
            vals = np.asarray(f(np.where(np.isnan(r), 1.0, r)), dtype=float)
        vals = np.where(np.isnan(r), np.nan, vals)
        return _reduce(vals, mode, axis=1)

    if n == 0:
        return values, levels, conv
    active = np.arange(n)
    prev = evaluate(active, start_level)
    level = start_level
    while active.size and level < max_level:
        cur = evaluate(active, level + 1)
        level += 1
        done = _close(cur, prev, rel_tol)
        values[active] = cur
        levels[active] = level
        conv[active[done]] = True
        active = active[~done]
        prev = cur[~done]
    return values, levels, conv


@dataclass(frozen=True)
class Decay:
    """Declared decay of an attractive part beyond a radius.

    ``kind="power"``: bound ``amplitude * r**(-rate)`` for ``r >= r_min``.
    ``kind="exp"``: bound ``amplitude * exp(-rate * r)`` for ``r >= r_min``.
    For many-body terms ``r`` is the largest distance from the first particle.
    """

    kind: str
    amplitude: float
    rate: float
    r_min: float = 0.0

    def __post_init__(self):
        if self.kind not in ("power", "exp"):
            raise ValueError(f"unknown decay kind {self.kind!r}")
        if self.amplitude < 0 or self.rate <= 0:
            raise ValueError("decay needs amplitude >= 0 and rate > 0")

    def bound(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "power":
            return self.amplitude * r ** (-self.rate)
        return self.amplitude * np.exp(-self.rate * r)


def _shell_count(D: int, m: int) -> float:
    return float((2 * m + 1) ** D - (2 * m - 1) ** D)


def shell_tail(D: int, a: float, cutoff: int, decay: Decay) -> float:
    """Upper bound on the lattice sum over all index tuples beyond ``cutoff``.

    Tuples in ``Z^D`` with Chebyshev norm ``m`` number ``(2m+1)^D - (2m-1)^D``
    and sit at distance at least ``(m-1) a`` from the reference cube.  Returns
    ``inf`` when the declared decay does not cover that distance or does not
    make the sum converge.
    """
    if decay.amplitude == 0:
        return 0.0
    if cutoff * a < decay.r_min or cutoff < 1:
        return math.inf
    if decay.kind == "power":
        if decay.rate <= D:
            return math.inf
        # explicit terms up to M, then (2m+1)^D - (2m-1)^D <= 2D 3^(D-1) (m-1)^(D-1)
        # for m >= 4 and an integral comparison
        M = max(cutoff + 1, 4) + 2000
        total = 0.0
        for m in range(cutoff + 1, M + 1):
            total += _shell_count(D, m) * decay.amplitude * ((m - 1) * a) ** (-decay.rate)
        c = 2 * D * 3 ** (D - 1) * decay.amplitude * a ** (-decay.rate)
        expo = D - 1 - decay.rate
        total += c * (M ** expo + M ** (expo + 1) / (decay.rate - D))
        return float(total)
    total = 0.0
    m = cutoff + 1
    while True:
        term = _shell_count(D, m) * decay.amplitude * math.exp(-decay.rate * (m - 1) * a)
        total += term
        # successive term ratio ((2m+3)/(2m-1))^(D-1)-ish times exp(-rate a) is decreasing
        ratio = ((m + 1) / max(m - 1, 1)) ** (D - 1) * math.exp(-decay.rate * a)
        if m > cutoff + 2 and ratio < 1 and term * ratio / (1 - ratio) < 1e-18 * max(total, 1e-300):
            return float(total + term * ratio / (1 - ratio))
        if m - cutoff > 10_000_000:
            return math.inf
        m += 1
