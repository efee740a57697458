"""Two-body potentials satisfying the repulsive-core / integrable-tail assumption.

A :class:`PairPotential` wraps a vectorized radial function ``phi(r)``.  Values
may be ``+inf`` to encode hard cores; ``exp(-beta * inf)`` is taken as 0.
The declared parameters say that

* ``phi(r) >= phi0 / r**s`` for ``r <= r0`` (repulsive core, ``s >= d``), and
* ``phi(r) >= -phi1 / r**(d + eps0)`` for ``r >= R`` (integrable attraction).

Both are spot-checked on log-spaced radii at construction and the outcome is
kept in :attr:`PairPotential.assumption_check`; a failed check is recorded,
not raised, so non-conforming potentials can still be split and summed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .estimate import Estimate, NumericalRejection
from .extrema import Decay, interval_extrema, shell_tail
from .geometry import as_configuration

DEFAULT_CUTOFF = 64
MAX_LATTICE_CELLS = 2_000_000
A_STAR_RTOL = 1e-6


@dataclass(frozen=True)
class AssumptionCheck:
    ok: bool
    core_violations: int
    tail_violations: int
    radii_checked: int
    note: str = ""


class PairPotential:
    def __init__(self, func: Callable, d: int = 1, *, phi0: float, s: float, r0: float,
                 R: float | None = None, phi1: float = 0.0, eps0: float = 1.0,
                 name: str = "custom", is_zero: bool = False, params: dict | None = None):
        if d < 1:
            raise ValueError("dimension must be positive")
        if phi0 <= 0 or r0 <= 0 or eps0 <= 0:
            raise ValueError("phi0, r0 and eps0 must be positive")
        if phi1 < 0:
            # phi1 = 0 declares phi >= 0 beyond R
            raise ValueError("phi1 must be nonnegative")
        if s < d:
            raise ValueError(f"core exponent s={s} must be >= d={d}")
        R = 2.0 * r0 if R is None else float(R)
        if R <= r0:
            raise ValueError("R must exceed r0")
        self.func = func
        self.d = int(d)
        self.phi0, self.s, self.r0, self.R = float(phi0), float(s), float(r0), R
        self.phi1, self.eps0 = float(phi1), float(eps0)
        self.name = name
        self.is_zero = is_zero
        self.params = dict(params or {})
        self.assumption_check = self._check_assumption()

    def __repr__(self):
        return f"PairPotential({self.name}, d={self.d}, {self.params})"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = np.asarray(self.func(r), dtype=float)
        out = np.broadcast_to(out, r.shape)
        # the core is repulsive: an undefined value at r = 0 counts as +inf
        return np.where(np.isnan(out) & (r <= 0), np.inf, out)

    def _check_assumption(self, n: int = 1000) -> AssumptionCheck:
        core_r = np.geomspace(self.r0 * 1e-3, self.r0, n // 2)
        tail_r = np.geomspace(self.R, self.R * 1e3, n - n // 2)
        core = self(core_r)
        tail = self(tail_r)
        tol = 1e-12
        core_bad = int(np.sum(~(core >= self.phi0 / core_r ** self.s * (1 - tol))))
        bound = -self.phi1 / tail_r ** (self.d + self.eps0)
        tail_bad = int(np.sum(~(tail >= bound - tol * np.abs(bound))))
        note = "" if core_bad == tail_bad == 0 else "sampled assumption check failed"
        return AssumptionCheck(core_bad == 0 and tail_bad == 0, core_bad, tail_bad, n, note)

    def positive_part(self, r):
        return np.maximum(self(r), 0.0)

    def negative_part(self, r):
        return np.maximum(-self(r), 0.0)

    def tail_decay(self, eps: float = 0.0) -> Decay:
        """Declared bound on ``phi^-(r) r^eps`` beyond ``R``."""
        return Decay("power", self.phi1, self.d + self.eps0 - eps, self.R)

    # batched energy of configurations stored as (M, n, d)
    def energy_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        M, n = X.shape[0], X.shape[1]
        if self.is_zero or n < 2:
            return np.zeros(M)
        iu, ju = np.triu_indices(n, k=1)
        r = np.sqrt(np.sum((X[:, iu, :] - X[:, ju, :]) ** 2, axis=-1))
        return self(r).sum(axis=1)

    def cross_energy_batch(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Interaction between every row of X (M, n, d) and the fixed points Y (k, d)."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float).reshape(-1, X.shape[-1])
        if self.is_zero or X.shape[1] == 0 or len(Y) == 0:
            return np.zeros(X.shape[0])
        r = np.sqrt(np.sum((X[:, :, None, :] - Y[None, None, :, :]) ** 2, axis=-1))
        return self(r).sum(axis=(1, 2))


@dataclass(frozen=True)
class StabilityConstants:
    """Constants of a (strong) superstability bound at cube edge ``a``.

    ``U(g) >= A * sum_{|g_D| >= 2} |g_D|^m - B |g|``.
    """

    a: float
    A: float
    B: float
    m: int = 2
    b: float | None = None
    upsilon0: float | None = None
    delta: float | None = None
    a_star: float | None = None
    B_delta: float | None = None
    source: str = "pair"
    extra: dict = field(default_factory=dict)


def phi_split(pot: PairPotential, r: float) -> tuple[float, float]:
    """``(phi^+, phi^-)`` at ``r``, with ``phi = phi^+ - phi^-``."""
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    v = float(pot(np.array([r]))[0])
    return max(v, 0.0), max(-v, 0.0)


def _b_interval(pot: PairPotential, a: float):
    diam = a * math.sqrt(pot.d)
    vals, levels, conv = interval_extrema(pot.positive_part, [0.0], [diam], "inf",
                                          open_at_zero=False)
    return float(vals[0]), int(levels[0]), bool(conv[0])


def _check_edge(pot: PairPotential, a: float) -> None:
    limit = pot.r0 / math.sqrt(pot.d)
    if not (0 < a <= limit * (1 + 1e-12)):
        raise ValueError(f"cube edge a={a} outside (0, r0/sqrt(d)] = (0, {limit}]")


def b_of_a(pot: PairPotential, a: float) -> float:
    """Infimum of ``phi^+(|x - y|)`` over pairs in one cube of edge ``a``.

    Pair distances in a cube fill ``(0, a sqrt(d))``, so the infimum is taken
    over that radial interval on a nested grid that includes the far
    endpoint; for a decreasing ``phi^+`` this gives ``phi^+(a sqrt(d))``
    exactly.
    """
    _check_edge(pot, a)
    return _b_interval(pot, a)[0]


def _offset_classes(d: int, cutoff: int):
    """Sorted nonnegative offset tuples within the Chebyshev cutoff, with multiplicities."""
    ks, mult = [], []
    for k in itertools.combinations_with_replacement(range(cutoff + 1), d):
        perms = math.factorial(d)
        for v in set(k):
            perms //= math.factorial(k.count(v))
        ks.append(k)
        mult.append(perms * 2 ** sum(1 for v in k if v))
    return np.array(ks, dtype=float).reshape(-1, d), np.array(mult, dtype=float)


def cube_pair_distance_range(offsets: np.ndarray, a: float):
    """Smallest and largest distance between points of two closed cubes."""
    k = np.abs(np.asarray(offsets, dtype=float))
    dmin = a * np.sqrt(np.sum(np.maximum(k - 1.0, 0.0) ** 2, axis=-1))
    dmax = a * np.sqrt(np.sum((k + 1.0) ** 2, axis=-1))
    return dmin, dmax


def attraction_lattice_sum(f, d: int, a: float, cutoff: int, decay: Decay) -> Estimate:
    """Sum over cubes of the supremum of a radial ``f`` between a reference cube and each cube."""
    ks, mult = _offset_classes(d, cutoff)
    dmin, dmax = cube_pair_distance_range(ks, a)
    sups, levels, conv = interval_extrema(f, dmin, dmax, "sup", open_at_zero=False)
    sups = np.maximum(sups, 0.0)
    value = float(np.sum(mult * sups))
    tail = shell_tail(d, a, cutoff, decay)
    warning = None if conv.all() else f"{int((~conv).sum())} cube suprema hit the refinement cap"
    return Estimate(value, tail, "lattice-sum",
                    {"cutoff": cutoff, "tail": tail, "max_level": int(levels.max()),
                     "grid_points": int(2 ** levels.max() + 1), "classes": len(ks)},
                    warning)


def upsilon_eps(pot: PairPotential, a: float, eps: float = 0.0,
                cutoff: int = DEFAULT_CUTOFF) -> Estimate:
    """Lattice sum of the cube-to-cube supremum of ``phi^-(r) r^eps``.

    The error field bounds the truncated shells with the declared tail decay.
    """
    if eps >= pot.eps0:
        raise ValueError(f"eps={eps} must be below eps0={pot.eps0}; the lattice sum diverges")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    if a <= 0:
        raise ValueError("a must be positive")
    if pot.is_zero:
        return Estimate(0.0, 0.0, "lattice-sum", {"cutoff": cutoff, "tail": 0.0})

    def f(r):
        return pot.negative_part(r) * r ** eps

    return attraction_lattice_sum(f, pot.d, a, reach_cutoff(cutoff, a, pot.R, pot.d),
                                  pot.tail_decay(eps))


def reach_cutoff(cutoff: int, a: float, R: float | None, d: int) -> int:
    """Raise the shell cutoff until the truncated shells start beyond ``R``.

    The declared tail bound only holds past ``R``; shorter cutoffs give an
    infinite tail.  The extension is capped at ``MAX_LATTICE_CELLS`` cubes.
    """
    if R is None or not math.isfinite(R):
        return cutoff
    need = int(math.ceil(R / a)) + 2
    cap = int((MAX_LATTICE_CELLS ** (1.0 / d) - 1) // 2)
    return max(cutoff, min(need, cap))


def delta_decompose(pot: PairPotential, delta: float):
    """Split ``phi = (1 - delta) phi^+ + (delta phi^+ - phi^-)``."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")

    def phi_plus_delta(r):
        return (1.0 - delta) * pot.positive_part(r)

    def phi_stable(r):
        p = pot.positive_part(r)
        # delta * inf stays inf; avoid inf - 0 issues on the attractive side
        return np.where(np.isinf(p), np.inf, delta * p - pot.negative_part(r))

    return phi_plus_delta, phi_stable


def sss_constants(pot: PairPotential, a: float, cutoff: int = DEFAULT_CUTOFF) -> StabilityConstants:
    """Strong-superstability constants ``A = (b - 2 v0) / 4``, ``B = v0 / 2``, ``m = 2``.

    ``v0`` is taken at its upper bound (value plus truncation tail).
    """
    b = b_of_a(pot, a)
    ups = upsilon_eps(pot, a, 0.0, cutoff)
    v0 = ups.upper
    if not b > 2.0 * v0:
        raise NumericalRejection(
            f"b(a)={b:.6g} does not exceed 2*upsilon0(a)={2 * v0:.6g} at a={a}; use a smaller edge")
    return StabilityConstants(a=a, A=(b - 2.0 * v0) / 4.0, B=v0 / 2.0, m=2, b=b, upsilon0=v0,
                              extra={"upsilon0_value": ups.value, "upsilon0_tail": ups.error})


def _g(pot, delta, a, cutoff):
    return delta * b_of_a(pot, a) / 4.0 - upsilon_eps(pot, a, 0.0, cutoff).value / 2.0


def find_a_star(pot: PairPotential, delta: float, bracket: tuple[float, float] | None = None,
                rtol: float = A_STAR_RTOL, scan_points: int = 48,
                cutoff: int = DEFAULT_CUTOFF) -> float:
    """Smallest root of ``delta b(a) / 4 - upsilon0(a) / 2`` on the bracket.

    A log-spaced sign scan locates the first sign change from the small-edge
    end; bisection then refines it to relative tolerance ``rtol``.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    hi_lim = pot.r0 / math.sqrt(pot.d)
    lo, hi = bracket if bracket is not None else (hi_lim * 1e-3, hi_lim)
    grid = np.geomspace(lo, hi, scan_points)
    vals = [_g(pot, delta, a, cutoff) for a in grid]
    left = right = None
    for i in range(len(grid) - 1):
        if vals[i] > 0 and vals[i + 1] <= 0:
            left, right = grid[i], grid[i + 1]
            break
    if left is None:
        raise NumericalRejection(
            f"no sign change of delta*b/4 - upsilon0/2 on [{lo:.4g}, {hi:.4g}]: "
            f"g(lo)={vals[0]:.4g}, g(hi)={vals[-1]:.4g}")
    while (right - left) > rtol * left:
        mid = 0.5 * (left + right)
        if _g(pot, delta, mid, cutoff) > 0:
            left = mid
        else:
            right = mid
    return 0.5 * (left + right)


def delta_constants(pot: PairPotential, delta: float, **kw) -> StabilityConstants:
    """Constants at the root edge: ``B_delta = upsilon0(a*) / 2``."""
    a_star = find_a_star(pot, delta, **kw)
    b = b_of_a(pot, a_star)
    v0 = upsilon_eps(pot, a_star, 0.0).value
    return StabilityConstants(a=a_star, A=(b - 2 * v0) / 4.0, B=v0 / 2.0, m=2, b=b,
                              upsilon0=v0, delta=delta, a_star=a_star, B_delta=v0 / 2.0,
                              extra={"B_delta_from_b": delta * b / 4.0})


def _pairwise(points: np.ndarray) -> np.ndarray:
    n = len(points)
    iu, ju = np.triu_indices(n, k=1)
    return np.sqrt(np.sum((points[iu] - points[ju]) ** 2, axis=-1))


def _eval(pot, r):
    if isinstance(pot, PairPotential):
        return pot(r)
    with np.errstate(all="ignore"):
        return np.asarray(pot(r), dtype=float)


def pair_energy(pot, gamma) -> float:
    """Sum of ``phi`` over unordered pairs; ``+inf`` inside a hard core."""
    conf = as_configuration(gamma, getattr(pot, "d", None))
    if len(conf) < 2:
        return 0.0
    return float(np.sum(_eval(pot, _pairwise(conf.points))))


def pair_interaction(pot, eta, gamma) -> float:
    """Sum of ``phi(|x - y|)`` over ``x`` in ``eta`` and ``y`` in ``gamma``."""
    d = getattr(pot, "d", None)
    e = as_configuration(eta, d)
    g = as_configuration(gamma, d)
    if len(e) == 0 or len(g) == 0:
        return 0.0
    if e.intersects(g):
        raise ValueError("configurations overlap")
    r = np.sqrt(np.sum((e.points[:, None, :] - g.points[None, :, :]) ** 2, axis=-1))
    return float(np.sum(_eval(pot, r.ravel())))


# Built-in potentials ----------------------------------------------------------

def ideal(d: int = 1) -> PairPotential:
    return PairPotential(lambda r: np.zeros_like(r), d, phi0=1.0, s=d, r0=1.0,
                         name="ideal", is_zero=True)


def inverse_power(phi0: float, s: float, d: int = 1, r0: float = 1.0) -> PairPotential:
    """``phi0 / r**s``; purely repulsive, so any core radius works."""
    return PairPotential(lambda r: phi0 / r ** s, d, phi0=phi0, s=s, r0=r0,
                         name="inverse_power", params={"phi0": phi0, "s": s})


def hard_core(sigma: float, d: int = 1) -> PairPotential:
    """``+inf`` for ``r < sigma``, zero beyond."""
    return PairPotential(lambda r: np.where(r < sigma, np.inf, 0.0), d, phi0=1.0, s=d,
                         r0=sigma / 2.0, R=sigma, name="hard_core", params={"sigma": sigma})


def hard_core_plus_well(sigma: float, depth: float, range: float, d: int = 1) -> PairPotential:
    """Hard core of diameter ``sigma`` with a square well ``-depth`` out to ``range``."""
    if range < sigma:
        raise ValueError("well range must be at least sigma")

    def phi(r):
        return np.where(r < sigma, np.inf, np.where(r < range, -depth, 0.0))

    return PairPotential(phi, d, phi0=1.0, s=d, r0=sigma / 2.0, R=range,
                         name="hard_core_plus_well",
                         params={"sigma": sigma, "depth": depth, "range": range})


def power_core_exp_tail(phi0: float, s: float, phi1: float, kappa: float,
                        d: int = 1) -> PairPotential:
    """``phi0 / r**s - phi1 * exp(-kappa r)``.

    Declared parameters: the core bound ``phi0/2 / r**s`` holds for
    ``r <= (phi0 / (2 phi1))**(1/s)``, and the tail is dominated by
    ``phi1 * max_{r >= R} exp(-kappa r) r**(d+1) / r**(d+1)``.
    """
    r0 = (phi0 / (2.0 * phi1)) ** (1.0 / s)
    R = 2.0 * r0
    eps0 = 1.0
    p = d + eps0
    r_peak = max(R, p / kappa)
    tail_amp = phi1 * math.exp(-kappa * r_peak) * r_peak ** p
    return PairPotential(lambda r: phi0 / r ** s - phi1 * np.exp(-kappa * r), d,
                         phi0=phi0 / 2.0, s=s, r0=r0, R=R, phi1=tail_amp, eps0=eps0,
                         name="power_core_exp_tail",
                         params={"phi0": phi0, "s": s, "phi1": phi1, "kappa": kappa})


BUILTIN = {
    "ideal": (ideal, ()),
    "inverse_power": (inverse_power, ("phi0", "s")),
    "hard_core": (hard_core, ("sigma",)),
    "hard_core_plus_well": (hard_core_plus_well, ("sigma", "depth", "range")),
    "power_core_exp_tail": (power_core_exp_tail, ("phi0", "s", "phi1", "kappa")),
}


def make_potential(kind: str, d: int = 1, **params) -> PairPotential:
    try:
        factory, keys = BUILTIN[kind]
    except KeyError:
        raise ValueError(f"unknown potential kind {kind!r}; known: {sorted(BUILTIN)}") from None
    missing = [k for k in keys if k not in params]
    extra = [k for k in params if k not in keys]
    if missing:
        raise ValueError(f"potential {kind!r} is missing parameters {missing}")
    if extra:
        raise ValueError(f"potential {kind!r} got unknown parameters {extra}")
    return factory(d=d, **{k: float(params[k]) for k in keys})
