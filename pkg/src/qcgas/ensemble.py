"""Grand canonical sums ``Z``, ``Z^-``, ``rho`` and ``rho^-`` by truncated expansion.

The ``n``-particle integrals are evaluated either on a tensor midpoint grid
(two resolutions, the difference reported as error) or by Monte Carlo with a
3-sigma error.  Truncation after ``n_max`` particles is bounded through the
stability constant ``B``: ``exp(-beta U) <= exp(beta B n)``.

Dilute integrals are organised by cube subsets.  With one point per cube,
``int_{Lambda^n} prod chi_- f = n! sum_{|S| = n} int_{prod_S cubes} f``, which
the grid rule evaluates cube by cube and Monte Carlo samples by drawing a
random subset and then a uniform point in each of its cubes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import gammainc

from .estimate import Estimate, NumericalRejection
from .geometry import Box, CubePartition, as_configuration, batch_dense_mask, is_dilute
from .parallel import OP_CANONICAL, OP_DILUTE, ordered_map, stream

DEFAULT_BUDGET = 200_000
DEFAULT_TOL = 1e-8
MAX_QUAD_DIM = 12
MC_BATCH = 8192
MC_SIGMAS = 3.0
# hard cores make the midpoint rule first order and the fine-coarse gap irregular
QUAD_SAFETY = 2.0
MIN_TERM_BUDGET = 4096
FULL_SHARE = 10.0
_CHUNK = 65_536
_N_HARD_CAP = 200
_ROUNDING_ULPS = 8
EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class EnsembleParams:
    """Fugacity, inverse temperature, box, energy and the stability constant ``B``.

    ``energy`` is anything with ``energy_batch(X)`` for ``X`` of shape
    ``(M, n, d)``: a :class:`~qcgas.potential.PairPotential` or a
    :class:`~qcgas.manybody.ManyBodyFamily`.
    """

    z: float
    beta: float
    box: Box
    energy: object
    B: float = 0.0

    def __post_init__(self):
        if not (self.z >= 0 and math.isfinite(self.z)):
            raise ValueError(f"fugacity must be nonnegative and finite, got {self.z}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.B >= 0:
            raise ValueError(f"stability constant B must be >= 0, got {self.B}")
        d = getattr(self.energy, "d", self.box.dimension)
        if d != self.box.dimension:
            raise ValueError(f"energy is {d}-dimensional but the box is {self.box.dimension}-dimensional")

    @property
    def d(self) -> int:
        return self.box.dimension

    @property
    def is_ideal(self) -> bool:
        return bool(getattr(self.energy, "is_zero", False))

    def weights(self, X: np.ndarray) -> np.ndarray:
        """Boltzmann factors ``exp(-beta U)`` for a batch ``(M, n, d)``."""
        if self.is_ideal or X.shape[1] < 2:
            return np.ones(X.shape[0])
        U = np.asarray(self.energy.energy_batch(X), dtype=float)
        if np.isnan(U).any():
            raise NumericalRejection("energy evaluated to NaN")
        with np.errstate(over="ignore"):
            return np.exp(-self.beta * U)


# Truncation ------------------------------------------------------------------

def poisson_tail(x: float, n_max: int) -> float:
    """``sum_{n > n_max} x^n / n!``."""
    if x == 0:
        return 0.0
    return float(math.exp(x) * gammainc(n_max + 1, x))


def binomial_tail(N: int, y: float, n_max: int) -> float:
    """``sum_{n_max < n <= N} C(N, n) y^n``; zero once ``n_max >= N``."""
    return float(sum(math.comb(N, n) * y ** n for n in range(n_max + 1, N + 1)))


def default_n_max(x: float, tol: float = DEFAULT_TOL) -> int:
    """Smallest ``n`` with ``x^(n+1)/(n+1)! e^x < tol``."""
    if x == 0:
        return 0
    for n in range(_N_HARD_CAP + 1):
        if (n + 1) * math.log(x) - math.lgamma(n + 2) + x < math.log(tol):
            return n
    raise NumericalRejection(f"no n_max <= {_N_HARD_CAP} meets tol={tol} at z|L|e^(beta B)={x:.4g}")


def _dilute_n_max(N: int, y: float, tol: float) -> int:
    for n in range(N + 1):
        if binomial_tail(N, y, n) < tol:
            return n
    return N


# Grid quadrature --------------------------------------------------------------

def _sorted_tuples(P: int, n: int, chunk: int = _CHUNK):
    """Nondecreasing index tuples of ``range(P)`` in lexicographic blocks."""
    if n == 1:
        for s in range(0, P, chunk):
            yield np.arange(s, min(P, s + chunk))[:, None]
        return
    for prefix in _sorted_tuples(P, n - 1, chunk):
        counts = P - prefix[:, -1]
        cum = np.cumsum(counts)
        start = 0
        while start < len(prefix):
            base = cum[start - 1] if start else 0
            end = max(int(np.searchsorted(cum, base + chunk, side="right")), start + 1)
            p, c = prefix[start:end], counts[start:end]
            offs = np.arange(int(c.sum())) - np.repeat(np.cumsum(c) - c, c)
            last = np.repeat(p[:, -1], c) + offs
            yield np.column_stack([np.repeat(p, c, axis=0), last])
            start = end


def _multiset_weights(idx: np.ndarray) -> np.ndarray:
    """``n! / prod(mult!)`` for sorted rows: the number of orderings of each tuple."""
    n = idx.shape[1]
    denom = np.ones(len(idx))
    run = np.ones(len(idx))
    for k in range(1, n):
        run = np.where(idx[:, k] == idx[:, k - 1], run + 1, 1.0)
        denom *= run
    return math.factorial(n) / denom


def _grid_cost(P: int, n: int) -> int:
    return math.comb(P + n - 1, n)


def _grid_sum(params: EnsembleParams, n: int, extra: np.ndarray, G: tuple[int, ...],
              classify=None):
    """Midpoint-grid integral over ``Lambda^n`` with ``G[i]`` cells on axis ``i``.

    With ``classify`` the integrand is split by the integer label it returns
    for each batch of full configurations; returns ``{label: value}``.
    """
    sides = np.asarray(params.box.sides)
    cells = np.indices(G).reshape(params.d, -1).T
    coords = (cells + 0.5) * (sides / np.asarray(G))
    P = len(coords)
    vol = float(np.prod(sides / np.asarray(G))) ** n
    sums: dict[int, float] = {}
    for idx in _sorted_tuples(P, n):
        X = coords[idx]
        if len(extra):
            X = np.concatenate([np.broadcast_to(extra, (len(X),) + extra.shape), X], axis=1)
        f = params.weights(X) * _multiset_weights(idx)
        if classify is None:
            sums[0] = sums.get(0, 0.0) + float(f.sum())
        else:
            labels = classify(X)
            for lab in np.unique(labels):
                sums[int(lab)] = sums.get(int(lab), 0.0) + float(f[labels == lab].sum())
    return {k: v * vol for k, v in sums.items()}


def _choose_grid(params: EnsembleParams, n: int, budget: int, align: tuple[int, ...] | None):
    """Largest per-axis refinement whose coarse + fine grids fit the budget."""
    base = align if align is not None else (1,) * params.d
    P0 = int(np.prod(base))

    def fits(g):
        P = P0 * g ** params.d
        return _grid_cost(P, n) + _grid_cost(P * 2 ** params.d, n) <= budget

    if not fits(1):
        return None
    lo, hi = 1, 2
    while fits(hi):
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        lo, hi = (mid, hi) if fits(mid) else (lo, mid)
    return tuple(b * lo for b in base)


def _dilute_cost(n_sub: int, n: int, d: int, K: int) -> int:
    return n_sub * (K ** (n * d) + (2 * K) ** (n * d))


def _offsets(K: int, n: int, d: int, a: float) -> np.ndarray:
    """Midpoints of a ``K^d`` grid inside one cube, for each of ``n`` points."""
    one = (np.indices((K,) * d).reshape(d, -1).T + 0.5) * (a / K)
    grids = np.indices((len(one),) * n).reshape(n, -1).T
    return one[grids]  # (K^(nd), n, d)


def _dilute_grid_sum(params, n, extra, part, cubes, K):
    corners = part.cube_lower_corners()[cubes]
    offs = _offsets(K, n, params.d, part.a)
    per_sub = max(1, _CHUNK // len(offs))
    total = 0.0
    subsets = combinations(range(len(cubes)), n)
    while True:
        block = list(_take(subsets, per_sub))
        if not block:
            break
        S = np.asarray(block)
        X = (corners[S][:, None, :, :] + offs[None, :, :, :]).reshape(-1, n, params.d)
        if len(extra):
            X = np.concatenate([np.broadcast_to(extra, (len(X),) + extra.shape), X], axis=1)
        total += float(params.weights(X).sum())
    return total * math.factorial(n) * (part.a / K) ** (n * params.d)


def _take(it, k):
    for _ in range(k):
        try:
            yield next(it)
        except StopIteration:
            return


# Monte Carlo --------------------------------------------------------------------

def _mc(params, n, extra, budget, seed, workers, sampler, scale, op):
    n_batches = max(1, math.ceil(budget / MC_BATCH))

    def run(b):
        rng = stream(seed, op, n, b)
        X = sampler(rng, MC_BATCH)
        if len(extra):
            X = np.concatenate([np.broadcast_to(extra, (len(X),) + extra.shape), X], axis=1)
        f = params.weights(X)
        return float(f.sum()), float(np.dot(f, f))

    parts = ordered_map(run, range(n_batches), workers)
    M = n_batches * MC_BATCH
    s = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s / M
    var = max(s2 / M - mean * mean, 0.0) * M / (M - 1)
    err = MC_SIGMAS * math.sqrt(var / M)
    return Estimate(scale * mean, scale * err, "monte-carlo",
                    {"samples": M, "batches": n_batches, "sigmas": MC_SIGMAS})


# Public operations -------------------------------------------------------------

def _extra_points(params, extra) -> np.ndarray:
    conf = as_configuration(extra if extra is not None else (), params.d)
    pts = np.asarray(conf.points, dtype=float).reshape(-1, params.d)
    if len(pts) and not params.box.contains(pts).all():
        bad = pts[~params.box.contains(pts)][0]
        raise ValueError(f"point {bad.tolist()} lies outside the box")
    return pts


def canonical_integral(params: EnsembleParams, n: int, extra=None,
                       dilute_part: CubePartition | None = None, method: str = "auto",
                       budget: int = DEFAULT_BUDGET, seed: int = 0,
                       workers: int | None = None) -> Estimate:
    """``int_{Lambda^n} exp(-beta U(extra + x)) [prod chi_-(extra + x)] dx``.

    ``method`` is ``"quadrature"``, ``"mc"`` or ``"auto"``; auto uses the grid
    whenever ``n d <= 12`` and the budget allows a useful resolution.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if method not in ("auto", "quadrature", "mc"):
        raise ValueError(f"unknown method {method!r}")
    if dilute_part is not None and dilute_part.box != params.box:
        raise ValueError("the partition must tile the ensemble box")
    ext = _extra_points(params, extra)
    d = params.d
    if method == "quadrature" and n * d > MAX_QUAD_DIM:
        raise ValueError(f"quadrature needs n*d <= {MAX_QUAD_DIM}, got {n * d}; use mc")
    if dilute_part is not None:
        return _dilute_integral(params, n, ext, dilute_part, method, budget, seed, workers)
    if n == 0:
        return Estimate(float(params.weights(ext[None, :, :])[0]), 0.0, "closed-form")
    vol = params.box.volume
    G = _choose_grid(params, n, budget, None) if n * d <= MAX_QUAD_DIM else None
    use_grid = G is not None and (method == "quadrature" or min(G) >= 4)
    if method == "mc":
        use_grid = False
    if method == "quadrature" and G is None:
        raise NumericalRejection(f"budget {budget} too small for a two-level grid at n={n}")
    if use_grid:
        coarse = _grid_sum(params, n, ext, G)[0]
        fine = _grid_sum(params, n, ext, tuple(2 * g for g in G))[0]
        return Estimate(fine, QUAD_SAFETY * abs(fine - coarse), "quadrature", {"grid": list(G), "coarse": coarse})
    sides = np.asarray(params.box.sides)

    def sampler(rng, M):
        return rng.uniform(size=(M, n, d)) * sides

    return _mc(params, n, ext, budget, seed, workers, sampler, vol ** n, OP_CANONICAL)


def _dilute_integral(params, n, ext, part, method, budget, seed, workers):
    d = params.d
    if len(ext) and not is_dilute(ext, part):
        return Estimate(0.0, 0.0, "closed-form", {"reason": "extra points are not dilute"})
    taken = set(part.flat_index(ext).tolist()) if len(ext) else set()
    cubes = np.array([c for c in range(part.n_cubes) if c not in taken], dtype=np.int64)
    Np = len(cubes)
    if n == 0:
        return Estimate(float(params.weights(ext[None, :, :])[0]), 0.0, "closed-form")
    if n > Np:
        return Estimate(0.0, 0.0, "closed-form", {"reason": "more points than free cubes"})
    n_sub = math.comb(Np, n)
    K = 0
    if n * d <= MAX_QUAD_DIM:
        while _dilute_cost(n_sub, n, d, K + 1) <= budget:
            K += 1
    use_grid = K >= 1 and (method == "quadrature" or K >= 2)
    if method == "mc":
        use_grid = False
    if method == "quadrature" and K < 1:
        raise NumericalRejection(f"budget {budget} too small for a two-level cube grid at n={n}")
    if use_grid:
        coarse = _dilute_grid_sum(params, n, ext, part, cubes, K)
        fine = _dilute_grid_sum(params, n, ext, part, cubes, 2 * K)
        return Estimate(fine, QUAD_SAFETY * abs(fine - coarse), "quadrature",
                        {"cube_grid": K, "subsets": n_sub, "coarse": coarse})
    corners = part.cube_lower_corners()[cubes]
    a = part.a

    def sampler(rng, M):
        keys = rng.random((M, Np))
        S = np.argpartition(keys, n - 1, axis=1)[:, :n] if n < Np else np.tile(np.arange(Np), (M, 1))
        return corners[S] + rng.uniform(size=(M, n, d)) * a

    scale = math.factorial(n) * n_sub * a ** (n * d)
    return _mc(params, n, ext, budget, seed, workers, sampler, scale, OP_DILUTE)


def _method_tag(terms) -> str:
    tags = {t.method for t in terms if t.method != "closed-form"}
    if not tags:
        return "closed-form"
    return tags.pop() if len(tags) == 1 else "mixed"


def term_budgets(bounds, budget: int) -> list[int]:
    """Split a per-term budget by the a-priori size of each term.

    Terms within a factor ``FULL_SHARE`` of the largest get the whole
    ``budget``; smaller ones get a proportional share, but never less than
    ``min(budget, MIN_TERM_BUDGET)``.
    """
    top = max(bounds) if bounds else 0.0
    floor = min(budget, MIN_TERM_BUDGET)
    if top <= 0:
        return [floor] * len(bounds)
    return [max(floor, int(budget * min(1.0, FULL_SHARE * w / top))) for w in bounds]


def _series(params, n_max, extra, part, method, budget, seed, workers, tail, tol):
    z = params.z
    if part is None:
        x = z * params.box.volume * math.exp(params.beta * params.B)
        bounds = [math.exp(n * math.log(x) - math.lgamma(n + 1)) if x > 0 else float(n == 0)
                  for n in range(n_max + 1)]
    else:
        y = z * part.cube_volume * math.exp(params.beta * params.B)
        bounds = [math.comb(part.n_cubes, n) * y ** n for n in range(n_max + 1)]
    budgets = term_budgets(bounds, budget)
    terms = [canonical_integral(params, n, extra, part, method, budgets[n], seed, workers)
             for n in range(n_max + 1)]
    coef = [z ** n / math.factorial(n) for n in range(n_max + 1)]
    value = math.fsum(c * t.value for c, t in zip(coef, terms))
    stat = math.fsum(c * t.error for c, t in zip(coef, terms))
    # floating-point allowance for the per-term sums and coefficients
    rounding = _ROUNDING_ULPS * (n_max + 1) * EPS * math.fsum(abs(c * t.value)
                                                            for c, t in zip(coef, terms))
    warning = None
    if tail > tol:
        warning = f"truncation tail {tail:.3g} exceeds the requested tolerance {tol:.3g}"
    breakdown = {
        "n_max": n_max,
        "terms": [{"n": n, "value": c * t.value, "error": c * t.error, "method": t.method,
                   "budget": budgets[n]}
                  for n, (c, t) in enumerate(zip(coef, terms))],
        "numerical_error": stat,
        "rounding": rounding,
        "tail": tail,
    }
    return Estimate(value, stat + rounding + tail, _method_tag(terms), breakdown, warning)


def partition_function(params: EnsembleParams, n_max: int | None = None, method: str = "auto",
                       seed: int = 0, *, budget: int = DEFAULT_BUDGET, tol: float = DEFAULT_TOL,
                       workers: int | None = None) -> Estimate:
    """``Z = sum_n z^n / n! int exp(-beta U)`` up to ``n_max``, tail in the error."""
    if params.z == 0:
        return Estimate(1.0, 0.0, "closed-form", {"n_max": 0, "tail": 0.0})
    x = params.z * params.box.volume * math.exp(params.beta * params.B)
    if method == "closed-form":
        _require_ideal(params)
        return Estimate(math.exp(params.z * params.box.volume), 0.0, "closed-form")
    n_max = default_n_max(x, tol) if n_max is None else _check_n_max(n_max)
    return _series(params, n_max, None, None, method, budget, seed, workers,
                   poisson_tail(x, n_max), tol)


def dilute_partition_function(params: EnsembleParams, part: CubePartition,
                              n_max: int | None = None, method: str = "auto", seed: int = 0, *,
                              budget: int = DEFAULT_BUDGET, tol: float = DEFAULT_TOL,
                              workers: int | None = None) -> Estimate:
    """``Z^-``: the same expansion restricted to dilute configurations."""
    if part.box != params.box:
        raise ValueError("the partition must tile the ensemble box")
    y = params.z * part.cube_volume * math.exp(params.beta * params.B)
    if params.z == 0:
        return Estimate(1.0, 0.0, "closed-form", {"n_max": 0, "tail": 0.0})
    if method == "closed-form":
        _require_ideal(params)
        return Estimate((1.0 + params.z * part.cube_volume) ** part.n_cubes, 0.0, "closed-form")
    N = part.n_cubes
    n_max = _dilute_n_max(N, y, tol) if n_max is None else _check_n_max(n_max)
    return _series(params, n_max, None, part, method, budget, seed, workers,
                   binomial_tail(N, y, n_max), tol)


def _check_n_max(n_max):
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    return int(n_max)


def _require_ideal(params):
    if not params.is_ideal:
        raise ValueError("closed-form evaluation is only available for the ideal gas")


def ratio_estimate(k: int, z: float, num: Estimate, Z: Estimate, extra: dict | None = None) -> Estimate:
    """``z^k num / Z`` with the denominator kept away from zero by its lower bar."""
    Z_lo = Z.value - Z.error
    if not Z_lo > 0:
        raise NumericalRejection(
            f"denominator {Z.value:.6g} +/- {Z.error:.3g} is not bounded away from 0")
    pref = z ** k
    value = pref * num.value / Z.value
    error = pref * (num.error / Z_lo + abs(num.value) * Z.error / (Z.value * Z_lo))
    method = num.method if num.method == Z.method else "mixed"
    breakdown = {"numerator": num.value, "numerator_error": num.error, "Z": Z.value,
                 "Z_error": Z.error}
    breakdown.update(extra or {})
    warning = num.warning or Z.warning
    return Estimate(value, error, method, breakdown, warning)


def correlation(params: EnsembleParams, eta, n_max: int | None = None, method: str = "auto",
                seed: int = 0, *, budget: int = DEFAULT_BUDGET, tol: float = DEFAULT_TOL,
                workers: int | None = None, Z: Estimate | None = None) -> Estimate:
    """``rho(eta) = z^|eta| / Z sum_n z^n / n! int exp(-beta U(eta + x)) dx``."""
    ext = _extra_points(params, eta)
    k = len(ext)
    if params.z == 0:
        return Estimate(1.0 if k == 0 else 0.0, 0.0, "closed-form")
    x = params.z * params.box.volume * math.exp(params.beta * params.B)
    n_max = default_n_max(x, tol) if n_max is None else _check_n_max(n_max)
    if Z is None:
        Z = partition_function(params, n_max, method, seed, budget=budget, tol=tol,
                               workers=workers)
    tail = math.exp(params.beta * params.B * k) * poisson_tail(x, n_max)
    num = _series(params, n_max, ext, None, method, budget, seed, workers, tail, tol)
    return ratio_estimate(k, params.z, num, Z, {"n_max": n_max})


def dilute_correlation(params: EnsembleParams, eta, part: CubePartition,
                       n_max: int | None = None, method: str = "auto", seed: int = 0, *,
                       budget: int = DEFAULT_BUDGET, tol: float = DEFAULT_TOL,
                       workers: int | None = None, Zminus: Estimate | None = None) -> Estimate:
    """``rho^-(eta)``; exactly 0 when ``eta`` itself is not dilute."""
    if part.box != params.box:
        raise ValueError("the partition must tile the ensemble box")
    ext = _extra_points(params, eta)
    k = len(ext)
    if k and not is_dilute(ext, part):
        return Estimate(0.0, 0.0, "closed-form", {"reason": "eta is not dilute"})
    if params.z == 0:
        return Estimate(1.0 if k == 0 else 0.0, 0.0, "closed-form")
    y = params.z * part.cube_volume * math.exp(params.beta * params.B)
    free = part.n_cubes - k
    n_max = _dilute_n_max(part.n_cubes, y, tol) if n_max is None else _check_n_max(n_max)
    if Zminus is None:
        Zminus = dilute_partition_function(params, part, n_max, method, seed, budget=budget,
                                           tol=tol, workers=workers)
    tail = math.exp(params.beta * params.B * k) * binomial_tail(free, y, n_max)
    num = _series(params, n_max, ext, part, method, budget, seed, workers, tail, tol)
    return ratio_estimate(k, params.z, num, Zminus, {"n_max": n_max})


def dense_pattern_labels(part: CubePartition):
    """Classifier giving the bitmask of dense cubes of each configuration in a batch."""
    if part.n_cubes > 62:
        raise ValueError("dense-pattern labels need at most 62 cubes")
    bits = (1 << np.arange(part.n_cubes, dtype=np.int64))

    def classify(X):
        flat = part.flat_index(X)
        mask = batch_dense_mask(flat, part.n_cubes)
        return (mask * bits).sum(axis=1)

    return classify


def pattern_integrals(params: EnsembleParams, n: int, extra, part: CubePartition,
                      budget: int = DEFAULT_BUDGET) -> dict[int, Estimate]:
    """Grid integrals of ``exp(-beta U(extra + x))`` split by the dense-cube bitmask.

    The grid is aligned with the cubes so no midpoint sits on a cube face.
    """
    ext = _extra_points(params, extra)
    if n == 0:
        lab = int(dense_pattern_labels(part)(ext[None, :, :])[0]) if len(ext) else 0
        return {lab: Estimate(float(params.weights(ext[None, :, :])[0]), 0.0, "closed-form")}
    if n * params.d > MAX_QUAD_DIM:
        raise ValueError(f"quadrature needs n*d <= {MAX_QUAD_DIM}, got {n * params.d}")
    G = _choose_grid(params, n, budget, part.shape)
    if G is None:
        raise NumericalRejection(f"budget {budget} too small for a cube-aligned grid at n={n}")
    classify = dense_pattern_labels(part)
    coarse = _grid_sum(params, n, ext, G, classify)
    fine = _grid_sum(params, n, ext, tuple(2 * g for g in G), classify)
    out = {}
    for lab in sorted(set(coarse) | set(fine)):
        f, c = fine.get(lab, 0.0), coarse.get(lab, 0.0)
        out[lab] = Estimate(f, QUAD_SAFETY * abs(f - c), "quadrature", {"grid": list(G)})
    return out
