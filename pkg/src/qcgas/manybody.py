"""Truncated many-body interactions ``V_2, ..., V_pmax``.

Each ``V_p`` is a vectorized function of an array of shape ``(..., p, d)``.
The positive part used for the repulsive quantities is all of ``V_p^+``;
no part of it is moved into the stabilizing family.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .estimate import Estimate, NumericalRejection
from .extrema import Decay, Extremum, grid_extremum, shell_tail
from .geometry import CubePartition, as_configuration
from .potential import (DEFAULT_CUTOFF, PairPotential, StabilityConstants, b_of_a,
                        upsilon_eps)

MANYBODY_CUTOFF = 6
_GRID_POINTS = 400_000


class ManyBodyFamily:
    def __init__(self, potentials: dict[int, Callable], d: int = 1, *,
                 decay: dict[int, Decay] | None = None,
                 pair_potential: PairPotential | None = None, name: str = "custom",
                 params: dict | None = None, check_seed: int = 0):
        if not potentials or min(potentials) < 2:
            raise ValueError("potentials must be keyed by body count p >= 2")
        self.potentials = dict(sorted(potentials.items()))
        self.p_max = max(self.potentials)
        self.d = int(d)
        self.decay = dict(decay or {})
        self.pair_potential = pair_potential
        self.name = name
        self.params = dict(params or {})
        self._spot_check(np.random.default_rng(check_seed))

    def __repr__(self):
        return f"ManyBodyFamily({self.name}, p_max={self.p_max}, d={self.d})"

    def V(self, p: int, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if p not in self.potentials:
            return np.zeros(X.shape[:-2])
        with np.errstate(all="ignore"):
            return np.asarray(self.potentials[p](X), dtype=float)

    def V_minus(self, p: int, X) -> np.ndarray:
        return np.maximum(-self.V(p, X), 0.0)

    def V_plus(self, p: int, X) -> np.ndarray:
        return np.maximum(self.V(p, X), 0.0)

    def _spot_check(self, rng, trials: int = 16):
        for p in self.potentials:
            X = rng.uniform(0.0, 3.0, size=(trials, p, self.d))
            base = self.V(p, X)
            perm = rng.permutation(p)
            shifted = X + rng.normal(size=(trials, 1, self.d))
            for label, other in (("symmetric", self.V(p, X[:, perm, :])),
                                 ("translation invariant", self.V(p, shifted))):
                same = np.isclose(base, other, rtol=1e-9, atol=1e-12) | (base == other)
                if not same.all():
                    raise ValueError(f"V_{p} is not {label} on sampled tuples")

    def energy_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        M, n = X.shape[0], X.shape[1]
        total = np.zeros(M)
        for p in self.potentials:
            if p > n:
                break
            idx = np.array(list(itertools.combinations(range(n), p)))
            total = total + self.V(p, X[:, idx, :]).sum(axis=1)
        return total


def pair_only(pot: PairPotential) -> ManyBodyFamily:
    def v2(X):
        r = np.sqrt(np.sum((X[..., 0, :] - X[..., 1, :]) ** 2, axis=-1))
        return pot(r)

    return ManyBodyFamily({2: v2}, pot.d, decay={2: pot.tail_decay(0.0)}, pair_potential=pot,
                          name="pair_only", params={"potential": pot.name})


def pair_plus_triple(pot: PairPotential, triple_strength: float,
                     triple_range: float) -> ManyBodyFamily:
    """Pair potential plus ``strength * exp(-(r12 + r13 + r23) / range)``.

    Since ``r12 + r13 + r23 >= 2 max(r12, r13)`` the triple term decays at
    least like ``|strength| exp(-2 r / range)`` in the largest distance from
    the first particle.
    """
    if triple_range <= 0:
        raise ValueError("triple_range must be positive")
    base = pair_only(pot)

    def v3(X):
        r12 = np.linalg.norm(X[..., 0, :] - X[..., 1, :], axis=-1)
        r13 = np.linalg.norm(X[..., 0, :] - X[..., 2, :], axis=-1)
        r23 = np.linalg.norm(X[..., 1, :] - X[..., 2, :], axis=-1)
        return triple_strength * np.exp(-(r12 + r13 + r23) / triple_range)

    amp = max(-triple_strength, 0.0)
    return ManyBodyFamily({2: base.potentials[2], 3: v3}, pot.d,
                          decay={2: pot.tail_decay(0.0), 3: Decay("exp", amp, 2.0 / triple_range)},
                          pair_potential=pot, name="pair_plus_triple",
                          params={"potential": pot.name, "triple_strength": triple_strength,
                                  "triple_range": triple_range})


def _as_family(energy) -> ManyBodyFamily:
    return pair_only(energy) if isinstance(energy, PairPotential) else energy


def mb_energy(fam: ManyBodyFamily, gamma) -> float:
    """Sum of ``V_p`` over all subsets of size 2..p_max."""
    conf = as_configuration(gamma, fam.d)
    if len(conf) < 2:
        return 0.0
    return float(fam.energy_batch(conf.points[None, :, :])[0])


def mb_interaction(fam: ManyBodyFamily, eta, gamma) -> float:
    """``U(eta + gamma) - U(eta) - U(gamma)``."""
    e = as_configuration(eta, fam.d)
    g = as_configuration(gamma, fam.d)
    if len(e) == 0 or len(g) == 0:
        return 0.0
    if e.intersects(g):
        raise ValueError("configurations overlap")
    whole = mb_energy(fam, e.union(g))
    return whole - mb_energy(fam, e) - mb_energy(fam, g)


@dataclass(frozen=True)
class CubeTuple:
    """Cubes ``(D_1, ..., D_N)`` of the lattice with multiplicities ``k_j``."""

    cubes: tuple[tuple[int, ...], ...]
    multiplicities: tuple[int, ...]

    def __post_init__(self):
        cubes = tuple(tuple(int(i) for i in np.atleast_1d(c)) for c in self.cubes)
        mult = tuple(int(k) for k in self.multiplicities)
        if len(cubes) < 1 or len(cubes) != len(mult):
            raise ValueError("need one multiplicity per cube and at least one cube")
        if any(k < 1 for k in mult):
            raise ValueError("multiplicities must be >= 1")
        object.__setattr__(self, "cubes", cubes)
        object.__setattr__(self, "multiplicities", mult)

    @property
    def p(self) -> int:
        return sum(self.multiplicities)


def _placement_bounds(cubes: Sequence[Sequence[int]], mult: Sequence[int], a: float):
    lows, highs = [], []
    for c, k in zip(cubes, mult):
        lo = np.asarray(c, dtype=float) * a
        for _ in range(k):
            lows.extend(lo)
            highs.extend(lo + a)
    return np.array(lows), np.array(highs)


def _tuple_extremum(f, p, d, cubes, mult, a, mode, max_points=_GRID_POINTS) -> Extremum:
    lows, highs = _placement_bounds(cubes, mult, a)

    def g(pts):
        return f(pts.reshape(len(pts), p, d))

    return grid_extremum(g, lows, highs, mode, max_points=max_points)


def I_sup(fam: ManyBodyFamily, tup: CubeTuple, part: CubePartition) -> Extremum:
    """Supremum of ``V_p^-`` with ``k_j`` points in (the closure of) cube ``D_j``."""
    p = tup.p
    if p > fam.p_max:
        raise ValueError(f"tuple has p={p} bodies but the family stops at p_max={fam.p_max}")
    if p not in fam.potentials:
        return Extremum(0.0, 0, 1, True)
    return _tuple_extremum(lambda X: fam.V_minus(p, X), p, fam.d, tup.cubes,
                           tup.multiplicities, part.a, "sup")


def v_inf(fam: ManyBodyFamily, tup: CubeTuple, a: float) -> Extremum:
    """Infimum of ``V_p^+`` over placements in the cube tuple."""
    p = tup.p
    if p not in fam.potentials:
        return Extremum(0.0, 0, 1, True)
    return _tuple_extremum(lambda X: fam.V_plus(p, X), p, fam.d, tup.cubes,
                           tup.multiplicities, a, "inf")


def _sorted_offset_tuples(d: int, n: int, cutoff: int):
    """Multisets of ``n`` lattice offsets within the cutoff, with their ordered counts."""
    cube_offsets = list(itertools.product(range(-cutoff, cutoff + 1), repeat=d))
    for combo in itertools.combinations_with_replacement(range(len(cube_offsets)), n):
        count = math.factorial(n)
        for v in set(combo):
            count //= math.factorial(combo.count(v))
        yield [cube_offsets[i] for i in combo], count


def attraction_sum(fam: ManyBodyFamily, p: int, a: float, cutoff: int,
                   base_cubes=None, base_mult=None, weight=None) -> Estimate:
    """``sum over D'_1..D'_n`` of the supremum of ``V_p^-`` with the base cubes fixed.

    With no base given this is the single-cube quantity at ``M = 1`` with one
    point in the reference cube and ``p - 1`` points spread over the lattice.
    """
    if p not in fam.potentials:
        return Estimate(0.0, 0.0, "lattice-sum", {"cutoff": cutoff})
    decay = fam.decay.get(p)
    if decay is None:
        raise ValueError(f"V_{p} has no decay metadata; a sound tail bound is impossible")
    d = fam.d
    zero = (0,) * d
    base_cubes = [zero] if base_cubes is None else [tuple(c) for c in base_cubes]
    base_mult = [1] if base_mult is None else list(base_mult)
    n = p - sum(base_mult)
    if n < 1:
        raise ValueError("need at least one free cube")
    if (p == 2 and base_mult == [1] and weight is None and fam.pair_potential is not None
            and all(c == zero for c in base_cubes)):
        # radial shortcut: identical to the pair attraction lattice sum
        est = upsilon_eps(fam.pair_potential, a, 0.0, cutoff)
        return Estimate(est.value, est.error, "lattice-sum", dict(est.breakdown), est.warning)
    total = 0.0
    unconverged = 0
    for offsets, count in _sorted_offset_tuples(d, n, cutoff):
        cubes = base_cubes + [tuple(o) for o in offsets]
        mult = base_mult + [1] * n
        ext = _tuple_extremum(lambda X: fam.V_minus(p, X), p, d, cubes, mult, a, "sup")
        unconverged += not ext.converged
        w = 1.0 if weight is None else weight(offsets)
        total += count * w * ext.value
    tail = shell_tail(d * n, a, cutoff, decay)
    if weight is not None and math.isfinite(tail) and tail > 0:
        tail *= weight(None)
    warn = f"{unconverged} suprema hit the grid cap" if unconverged else None
    return Estimate(total, tail, "lattice-sum", {"cutoff": cutoff, "tail": tail}, warn)


def I_bar(fam: ManyBodyFamily, a: float, cutoff: int = MANYBODY_CUTOFF) -> Estimate:
    """``sum_p 2^p I_p^{1|p-1}(a; 0)`` over the truncated family."""
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    parts = {p: attraction_sum(fam, p, a, _cut(fam, p, cutoff)) for p in fam.potentials}
    value = sum(2 ** p * e.value for p, e in parts.items())
    error = sum(2 ** p * e.error for p, e in parts.items())
    return Estimate(value, error, "lattice-sum",
                    {"per_p": {p: (e.value, e.error) for p, e in parts.items()}})


def _cut(fam, p, cutoff):
    # the radial pair sum is cheap, so it keeps the long pair cutoff
    if p == 2 and fam.pair_potential is not None:
        return max(cutoff, DEFAULT_CUTOFF)
    return cutoff


def v22(fam: ManyBodyFamily, a: float) -> float:
    """Infimum of ``V_2^+`` for two points in one cube."""
    if fam.pair_potential is not None:
        return b_of_a(fam.pair_potential, a)
    zero = (0,) * fam.d
    return v_inf(fam, CubeTuple((zero,), (2,)), a).value


def manybody_constants(fam: ManyBodyFamily, a: float,
                      cutoff: int = MANYBODY_CUTOFF) -> StabilityConstants:
    """``A = v_2^2 - 2 sum_p 4^p I_p``, ``B = sum_p I_p``, ``m = 2``.

    The attraction sums enter at their upper bounds.
    """
    fam = _as_family(fam)
    v = v22(fam, a)
    parts = {p: attraction_sum(fam, p, a, _cut(fam, p, cutoff)) for p in fam.potentials}
    penalty = 2.0 * sum(4 ** p * e.upper for p, e in parts.items())
    B = sum(e.upper for e in parts.values())
    A = v - penalty
    if not A > 0:
        raise NumericalRejection(f"A(a)={A:.6g} <= 0 at a={a} (v22={v:.6g}, attraction={penalty:.6g}); "
                         "use a smaller edge")
    return StabilityConstants(a=a, A=A, B=B, m=2, b=v, upsilon0=B, source="many-body",
                              extra={"per_p": {p: (e.value, e.error) for p, e in parts.items()}})


@dataclass
class CubeRelationReport:
    samples: int
    violations: list = field(default_factory=list)
    margins: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and all(m["margin"] >= 0 for m in self.margins)


def _compositions(total: int, parts: int):
    """Tuples of ``parts`` positive integers summing to ``total``."""
    if parts == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def relation_sides(fam: ManyBodyFamily, cubes, mult, a: float, *, eps: float = 0.0,
             pi: Sequence[int] | None = None, l_max: int | None = None,
             cutoff: int = 2) -> tuple[float, float]:
    """Both sides of the attraction-repulsion relation for one small instance.

    Left: infimum of ``V_p^+`` over the placement.  Right:
    ``2 sum_l sum_{m, n} prod C(k_j, m_j) (2p)^n I_{p+l}^{m|n}`` with the
    ``n`` free cubes summed over the lattice (truncated at ``cutoff``, tail
    included) and weighted by ``prod (1 + dist(D'_i, D_pi(i))^eps)``.  At
    ``eps = 0`` the weight is taken as 1.
    """
    cubes = [tuple(c) for c in cubes]
    p = sum(mult)
    N = len(cubes)
    if not 1 <= N < p:
        raise ValueError("need 1 <= N < p")
    lhs = v_inf(fam, CubeTuple(tuple(cubes), tuple(mult)), a).value
    l_top = fam.p_max - p if l_max is None else min(l_max, fam.p_max - p)
    rhs = 0.0
    for l in range(0, l_top + 1):
        q = p + l
        if q not in fam.potentials:
            continue
        for n in range(1, q - N + 1):
            for ms in _compositions(q - n, N):
                coeff = math.prod(math.comb(k, m) for k, m in zip(mult, ms))
                if coeff == 0:
                    continue
                weight = None
                if eps > 0:
                    mapping = pi if pi is not None else [0] * n
                    weight = _distance_weight(cubes, mapping, a, eps, cutoff)
                est = attraction_sum(fam, q, a, cutoff, base_cubes=cubes, base_mult=list(ms),
                                     weight=weight)
                rhs += 2.0 * coeff * (2 * p) ** n * est.upper
    return lhs, rhs


def _distance_weight(cubes, mapping, a, eps, cutoff):
    def weight(offsets):
        if offsets is None:
            # tail cubes sit at most (2 cutoff + 1)-ish apart only inside the cutoff;
            # beyond it the weight is unbounded, so fall back to the largest inner weight
            far = (2 * cutoff + 2) * a * math.sqrt(len(cubes[0]))
            return (1.0 + far ** eps) ** len(mapping)
        w = 1.0
        for off, j in zip(offsets, mapping):
            k = np.abs(np.asarray(off, float) - np.asarray(cubes[j], float))
            dist = a * math.sqrt(float(np.sum(np.maximum(k - 1.0, 0.0) ** 2)))
            w *= 1.0 + dist ** eps
        return w
    return weight


def check_cube_relations(fam: ManyBodyFamily, part: CubePartition, samples: int, *, seed: int = 0,
             instances=None, eps: float = 0.0, cutoff: int = 2) -> CubeRelationReport:
    """Sampled falsification of the in-cube repulsion and attraction-repulsion relations.

    (i) draws ``samples`` random ``p``-tuples inside single cubes for every
    ``p`` and records negative ``V_p``.  (ii) evaluates both sides of the
    relation for each ``(cubes, multiplicities)`` in ``instances`` and records
    the margin ``lhs - rhs``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    report = CubeRelationReport(samples=samples)
    a = part.a
    corners = part.cube_lower_corners()
    for p in fam.potentials:
        which = rng.integers(0, len(corners), size=samples)
        X = corners[which][:, None, :] + rng.uniform(0.0, a, size=(samples, p, fam.d))
        vals = fam.V(p, X)
        for i in np.flatnonzero(vals < 0):
            report.violations.append({"p": p, "points": X[i].tolist(), "V": float(vals[i])})
    for cubes, mult in instances or ():
        lhs, rhs = relation_sides(fam, cubes, mult, a, eps=eps, cutoff=cutoff)
        report.margins.append({"cubes": [list(c) for c in cubes], "multiplicities": list(mult),
                               "lhs": lhs, "rhs": rhs, "margin": lhs - rhs})
    return report
