"""Convergence of the dilute approximation as the cube edge shrinks.

``epsilon1`` and ``remainder_rhs`` evaluate the closed-form bounds on the
remainder ``R = rho - (Z^-/Z) rho^-``; ``verify_identity`` checks that
decomposition on tiny boxes by enumerating the dense-cube pattern ``X``; and
``sweep`` tabulates ``Z``, ``Z^-``, ``rho`` and ``rho^-`` along a refining
sequence of edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln, logsumexp

from .estimate import Estimate, NumericalRejection
from .geometry import CubePartition, as_configuration, check_compatible_sequence, is_dilute
from .ensemble import (DEFAULT_BUDGET, DEFAULT_TOL, EnsembleParams, correlation,
                       dilute_correlation, dilute_partition_function, partition_function,
                       pattern_integrals, ratio_estimate)
from .potential import StabilityConstants

EPS1_N_CAP = 200


def _eps1_log_terms(x, beta, A, Bu, ns):
    ns = np.asarray(ns, dtype=float)
    return ns * math.log(x) - gammaln(ns + 1) - 0.5 * beta * A * ns ** 2 + beta * Bu * ns


def epsilon1(a: float, z: float, beta: float, consts: StabilityConstants, upsilon_star: float,
             n_cap: int = EPS1_N_CAP, *, d: int = 1) -> Estimate:
    """``sum_{n>=2} (a^d z)^n / n! exp(-beta A n^2 / 2 + beta (B + upsilon*) n)``.

    Summed to ``n_cap``; the rest is bounded geometrically, which is valid
    because the ratio of consecutive terms decreases in ``n``.
    """
    A = consts.A
    if not A > 0:
        raise NumericalRejection(f"A(a)={A} <= 0; the series bound is useless")
    if n_cap < 2:
        raise ValueError("n_cap must be >= 2")
    x = a ** d * z
    if x == 0 or math.isinf(A):
        return Estimate(0.0, 0.0, "closed-form")
    Bu = consts.B + upsilon_star
    logs = _eps1_log_terms(x, beta, A, Bu, np.arange(2, n_cap + 1))
    value = float(np.exp(logsumexp(logs)))
    # ratio t_{n+1}/t_n = x/(n+1) exp(-beta A (2n+1)/2 + beta Bu)
    nxt = n_cap + 1
    log_ratio = math.log(x) - math.log(nxt + 1) - 0.5 * beta * A * (2 * nxt + 1) + beta * Bu
    if log_ratio >= 0:
        return Estimate(value, math.inf, "lattice-sum", {"n_cap": n_cap},
                        "terms are still growing at n_cap; tail unbounded")
    log_next = float(_eps1_log_terms(x, beta, A, Bu, [nxt])[0])
    tail = math.exp(log_next) / (1.0 - math.exp(log_ratio))
    return Estimate(value, tail, "lattice-sum", {"n_cap": n_cap, "tail": tail})


def remainder_rhs(eta_size: int, volume: float, volume_eta: float, a: float, z: float,
                  beta: float, consts: StabilityConstants, upsilon_star: float, *,
                  d: int = 1) -> float:
    """Closed-form upper bound on the remainder ``R(eta)``.

    ``(z e^{beta(B+u)})^k (1+e1)^{M-1} [e1 M + (2^k - 1)(1+e1) e^{-beta(2A-B-u)} e^{z a^d k}]``
    with ``M = |Lambda minus Lambda_eta| / a^d`` and ``e1`` at its upper bound.
    """
    if volume_eta > volume * (1 + 1e-12):
        raise ValueError("the eta-occupied volume cannot exceed the box volume")
    if z == 0:
        return 0.0
    e1 = epsilon1(a, z, beta, consts, upsilon_star, d=d).upper
    k = int(eta_size)
    Bu = consts.B + upsilon_star
    M = round((volume - volume_eta) / a ** d)
    pref = (z * math.exp(beta * Bu)) ** k * (1.0 + e1) ** (M - 1)
    if math.isinf(consts.A):
        second = 0.0
    else:
        second = ((2 ** k - 1) * (1.0 + e1) * math.exp(-beta * (2 * consts.A - Bu))
                  * math.exp(z * a ** d * k))
    return float(pref * (e1 * M + second))


def occupied_volume(eta, part: CubePartition) -> float:
    """Volume of the union of cubes holding points of ``eta``."""
    conf = as_configuration(eta, part.dimension)
    if len(conf) == 0:
        return 0.0
    return len(set(part.flat_index(conf.points).tolist())) * part.cube_volume


@dataclass
class IdentityReport:
    lhs: Estimate
    rhs: float
    rhs_error: float
    remainder: Estimate
    Z: Estimate
    Zminus: Estimate
    rho_minus: Estimate
    remainder_bound: float | None = None
    note: str = ""

    @property
    def difference(self) -> float:
        return abs(self.lhs.value - self.rhs)

    @property
    def combined_error(self) -> float:
        return self.lhs.error + self.rhs_error

    @property
    def holds(self) -> bool:
        return self.difference <= self.combined_error + 1e-12 * max(1.0, abs(self.rhs))

    @property
    def bound_holds(self) -> bool | None:
        if self.remainder_bound is None:
            return None
        return self.remainder.lower <= self.remainder_bound


def verify_identity(params: EnsembleParams, eta, part: CubePartition, n_max: int = 4,
                      seed: int = 0, *, budget: int = DEFAULT_BUDGET,
                      consts: StabilityConstants | None = None,
                      upsilon_star: float | None = None) -> IdentityReport:
    """Check ``rho = (Z^-/Z) rho^- + R`` on a tiny box.

    ``R`` is built by enumerating nonempty dense-cube patterns ``X`` on a
    cube-aligned grid; ``rho`` comes from the plain grid, ``Z^-`` and
    ``rho^-`` from the cube-subset integrator, so the two sides share no
    integration code path beyond the integrand.  All pieces use the same
    ``n_max``; truncation tails enter every error bar.  With ``consts`` and
    ``upsilon_star`` the closed-form remainder bound is evaluated too.
    """
    if part.n_cubes > 4 or n_max > 4:
        raise ValueError(f"instance too large to enumerate (cubes={part.n_cubes}, n_max={n_max}); "
                         "need at most 4 cubes and n_max <= 4")
    conf = as_configuration(eta, params.d)
    k = len(conf)
    z = params.z
    Z = partition_function(params, n_max, "quadrature", seed, budget=budget)
    rho = correlation(params, conf, n_max, "quadrature", seed, budget=budget, Z=Z)
    Zm = dilute_partition_function(params, part, n_max, "quadrature", seed, budget=budget)
    rho_m = dilute_correlation(params, conf, part, n_max, "quadrature", seed, budget=budget,
                               Zminus=Zm)
    # R from the dense-pattern split of the numerator
    num_val = num_err = 0.0
    for n in range(n_max + 1):
        coef = z ** n / math.factorial(n)
        for lab, est in pattern_integrals(params, n, conf, part, budget).items():
            if lab != 0:
                num_val += coef * est.value
                num_err += coef * est.error
    R = ratio_estimate(k, z, Estimate(num_val, num_err, "quadrature"), Z)
    first = (Zm.value / Z.value) * rho_m.value
    first_err = (Zm.error * abs(rho_m.value) + Zm.value * rho_m.error) / (Z.value - Z.error) \
        + Zm.value * abs(rho_m.value) * Z.error / (Z.value * (Z.value - Z.error))
    report = IdentityReport(lhs=rho, rhs=first + R.value, rhs_error=first_err + R.error,
                            remainder=R, Z=Z, Zminus=Zm, rho_minus=rho_m)
    if consts is not None and upsilon_star is not None:
        report.remainder_bound = remainder_rhs(k, params.box.volume, occupied_volume(conf, part),
                                               part.a, z, params.beta, consts, upsilon_star,
                                               d=params.d)
    elif consts is None:
        report.note = "no stability constants supplied; remainder bound not evaluated"
    if k and not is_dilute(conf, part):
        report.note = (report.note + "; " if report.note else "") + "eta is not dilute, rho^- = 0"
    return report


SWEEP_COLUMNS = ("a", "Z", "Z_err", "Zminus", "Zminus_err", "ratio", "rho", "rhominus",
                 "absdiff", "eps1", "rbound")


@dataclass
class SweepRow:
    a: float
    Z: Estimate
    Zminus: Estimate
    ratio: Estimate
    rho: Estimate
    rhominus: Estimate
    absdiff: Estimate
    eps1: Estimate | None = None
    rbound: float | None = None

    def csv_values(self) -> list[float]:
        nan = float("nan")
        return [self.a, self.Z.value, self.Z.error, self.Zminus.value, self.Zminus.error,
                self.ratio.value, self.rho.value, self.rhominus.value, self.absdiff.value,
                self.eps1.value if self.eps1 is not None else nan,
                self.rbound if self.rbound is not None else nan]


@dataclass
class SweepResult:
    rows: list[SweepRow]
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> list[float]:
        i = SWEEP_COLUMNS.index(name)
        return [r.csv_values()[i] for r in self.rows]

    def first_below(self, eps: float) -> float | None:
        """Largest edge whose ``|rho - rho^-|`` upper bound is below ``eps``."""
        for r in self.rows:
            if r.absdiff.upper < eps:
                return r.a
        return None


def sweep(params: EnsembleParams, eta, a_list, n_max: int | None = None, seed: int = 0, *,
          method: str = "auto", budget: int = DEFAULT_BUDGET, tol: float = DEFAULT_TOL,
          constants: Callable[[float], tuple[StabilityConstants, float] | None] | None = None,
          workers: int | None = None) -> SweepResult:
    """Tabulate the dilute approximation along decreasing compatible edges.

    ``Z`` and ``rho`` do not depend on the edge and are computed once; every
    row reuses the same seed so Monte Carlo noise is shared across rows.
    ``constants(a)`` may return ``(StabilityConstants, upsilon_star)`` to fill
    the ``eps1`` and ``rbound`` columns.
    """
    a_list = [float(a) for a in a_list]
    if not a_list:
        raise ValueError("a_list is empty")
    check_compatible_sequence(a_list)
    parts = [CubePartition(params.box, a) for a in a_list]
    conf = as_configuration(eta, params.d)
    if len(conf) and not is_dilute(conf, parts[-1]):
        raise ValueError("eta must be dilute at the smallest edge")
    k = len(conf)
    Z = partition_function(params, n_max, method, seed, budget=budget, tol=tol, workers=workers)
    rho = correlation(params, conf, n_max, method, seed, budget=budget, tol=tol,
                      workers=workers, Z=Z)
    rows = []
    for a, part in zip(a_list, parts):
        Zm = dilute_partition_function(params, part, n_max, method, seed, budget=budget,
                                       tol=tol, workers=workers)
        rho_m = dilute_correlation(params, conf, part, n_max, method, seed, budget=budget,
                                   tol=tol, workers=workers, Zminus=Zm)
        ratio = ratio_estimate(0, 1.0, Zm, Z)
        diff = Estimate(abs(rho.value - rho_m.value), rho.error + rho_m.error, "mixed")
        row = SweepRow(a, Z, Zm, ratio, rho, rho_m, diff)
        if constants is not None:
            try:
                got = constants(a)
            except NumericalRejection:
                got = None
            if got is not None:
                consts, ups = got
                row.eps1 = epsilon1(a, params.z, params.beta, consts, ups, d=params.d)
                row.rbound = remainder_rhs(k, params.box.volume, occupied_volume(conf, part), a,
                                           params.z, params.beta, consts, ups, d=params.d)
        rows.append(row)
    meta = {"z": params.z, "beta": params.beta, "box": list(params.box.sides), "B": params.B,
            "eta": conf.points.tolist(), "seed": seed, "method": method, "budget": budget,
            "n_max_Z": Z.breakdown.get("n_max"), "tail_Z": Z.breakdown.get("tail")}
    return SweepResult(rows, meta)
