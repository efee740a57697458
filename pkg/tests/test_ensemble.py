import math

import pytest

from qcgas.estimate import Estimate, NumericalRejection
from qcgas.geometry import Box, CubePartition
from qcgas.potential import hard_core, ideal, inverse_power
from qcgas.ensemble import (EnsembleParams, binomial_tail, canonical_integral, correlation,
                            default_n_max, dilute_correlation, dilute_partition_function,
                            partition_function, poisson_tail, ratio_estimate, term_budgets)

BOX = Box.cube(1.0)


def tonks(z=1.0, L=1.0, sigma=0.3):
    return sum(z ** n * max(L - (n - 1) * sigma, 0.0) ** n / math.factorial(n)
               for n in range(0, 20))


def ideal_params(z=1.0):
    return EnsembleParams(z, 1.0, BOX, ideal(1))


def rods(z=1.0):
    return EnsembleParams(z, 1.0, BOX, hard_core(0.3))


def test_params_validation():
    with pytest.raises(ValueError):
        EnsembleParams(-1.0, 1.0, BOX, ideal(1))
    with pytest.raises(ValueError):
        EnsembleParams(1.0, 0.0, BOX, ideal(1))
    with pytest.raises(ValueError, match="dimensional"):
        EnsembleParams(1.0, 1.0, Box.cube(1.0, 2), ideal(1))


def test_tail_helpers():
    assert poisson_tail(1.0, 3) == pytest.approx(sum(1 / math.factorial(n) for n in range(4, 40)))
    assert binomial_tail(4, 0.5, 2) == pytest.approx(4 * 0.125 + 0.0625)
    n = default_n_max(1.0, 1e-8)
    assert 1.0 ** (n + 1) / math.factorial(n + 1) * math.e < 1e-8
    assert 1.0 ** n / math.factorial(n) * math.e >= 1e-8


def test_canonical_integral_examples():
    assert canonical_integral(ideal_params(), 2).value == pytest.approx(1.0, abs=1e-14)
    dil = canonical_integral(ideal_params(), 2, dilute_part=CubePartition(BOX, 0.5))
    assert dil.value == pytest.approx(0.5, abs=1e-14)
    for method in ("quadrature", "mc"):
        est = canonical_integral(rods(), 2, method=method)
        assert abs(est.value - 0.49) <= est.error
    with pytest.raises(ValueError, match="mc"):
        canonical_integral(ideal_params(), 13, method="quadrature")


def test_canonical_integral_n_zero_is_exact():
    params = EnsembleParams(1.0, 2.0, BOX, inverse_power(1, 1))
    est = canonical_integral(params, 0, extra=[[0.2], [0.7]])
    assert est.value == pytest.approx(math.exp(-2.0 / 0.5), rel=1e-15) and est.error == 0


def test_partition_function_examples():
    Z = partition_function(ideal_params())
    assert abs(Z.value - math.e) < 1e-8
    zero = partition_function(ideal_params(0.0))
    assert (zero.value, zero.error) == (1.0, 0.0)
    Zr = partition_function(rods())
    assert abs(Zr.value - tonks()) <= Zr.error
    assert Zr.breakdown["tail"] > 0
    assert partition_function(ideal_params(), method="closed-form").value == math.e
    with pytest.raises(ValueError, match="ideal"):
        partition_function(rods(), method="closed-form")


def test_tail_warning_when_truncated_hard():
    Z = partition_function(ideal_params(), n_max=2, tol=1e-8)
    assert Z.warning and "tail" in Z.warning
    assert Z.error >= math.e - Z.value


def test_dilute_partition_function_examples():
    part = CubePartition(BOX, 0.5)
    assert dilute_partition_function(ideal_params(), part).value == pytest.approx(2.25, abs=1e-12)
    fine = dilute_partition_function(ideal_params(), CubePartition(BOX, 1 / 16))
    assert abs(fine.value - (17 / 16) ** 16) <= max(fine.error, 1e-12)
    assert fine.value == pytest.approx(2.6379285, abs=1e-7)
    # two rods in the two half cubes: 2 * int 1{y - x > 0.3} / 2! = 0.205
    Zm = dilute_partition_function(rods(), part)
    assert abs(Zm.value - 2.205) <= Zm.error


def test_dominance_and_refinement_monotonicity():
    params = rods()
    Z = partition_function(params)
    prev = None
    for a in (0.5, 0.25, 0.125):
        Zm = dilute_partition_function(params, CubePartition(BOX, a))
        assert Zm.value <= Z.value + Zm.error + Z.error
        if prev is not None:
            assert prev.value <= Zm.value + prev.error + Zm.error
        prev = Zm
    for a in (0.5, 0.25):
        Zi = dilute_partition_function(ideal_params(), CubePartition(BOX, a))
        assert Zi.value <= math.e


def test_correlation_examples():
    assert correlation(ideal_params(), [[0.3]]).value == pytest.approx(1.0, abs=1e-8)
    rho2 = correlation(ideal_params(2.0), [[0.3], [0.6]], budget=50_000)
    assert rho2.value == pytest.approx(4.0, rel=1e-6)
    assert correlation(rods(), []).value == pytest.approx(1.0, abs=1e-12)
    # a rod at 0.5 leaves two free segments of length 0.2, each holding at most one rod
    exact = (1 + 0.2) ** 2 / tonks()
    rho = correlation(rods(), [[0.5]])
    assert abs(rho.value - exact) <= rho.error
    with pytest.raises(ValueError, match="outside"):
        correlation(rods(), [[1.5]])


def test_dilute_correlation_examples():
    part = CubePartition(BOX, 0.5)
    zero = dilute_correlation(ideal_params(), [[0.1], [0.2]], part)
    assert (zero.value, zero.error) == (0.0, 0.0)
    assert dilute_correlation(ideal_params(), [[0.3]], part).value == pytest.approx(1 / 1.5)
    fine = dilute_correlation(ideal_params(), [[0.3]], CubePartition(BOX, 1 / 16))
    assert fine.value == pytest.approx(16 / 17, abs=1e-6)


def test_tail_soundness():
    for params in (ideal_params(), rods(2.0)):
        for n in (2, 3, 4):
            lo = partition_function(params, n_max=n)
            hi = partition_function(params, n_max=n + 2)
            stat = lo.error - lo.breakdown["tail"] + hi.error - hi.breakdown["tail"]
            assert abs(hi.value - lo.value) <= lo.breakdown["tail"] + stat


def test_method_agreement():
    params = rods(1.0)
    agree, trials = 0, 20
    for seed in range(trials):
        for n in (2, 3):
            q = canonical_integral(params, n, method="quadrature", budget=20_000)
            m = canonical_integral(params, n, method="mc", budget=20_000, seed=seed)
            agree += abs(q.value - m.value) <= q.error + m.error
    assert agree >= 0.95 * 2 * trials


def test_workers_do_not_change_results():
    params = EnsembleParams(1.0, 1.0, Box.cube(1.0, 2), inverse_power(1, 2, d=2))
    one = canonical_integral(params, 3, method="mc", budget=40_000, seed=5, workers=1)
    four = canonical_integral(params, 3, method="mc", budget=40_000, seed=5, workers=4)
    assert (one.value, one.error) == (four.value, four.error)
    Z1 = partition_function(rods(), seed=2, workers=1)
    Z4 = partition_function(rods(), seed=2, workers=4)
    assert (Z1.value, Z1.error) == (Z4.value, Z4.error)


def test_ratio_rejects_unbounded_denominator():
    with pytest.raises(NumericalRejection):
        ratio_estimate(1, 1.0, Estimate(1.0, 0.1, "mc"), Estimate(0.5, 0.6, "mc"))
    r = ratio_estimate(0, 1.0, Estimate(2.0, 0.0, "mc"), Estimate(4.0, 0.0, "mc"))
    assert (r.value, r.error) == (0.5, 0.0)


def test_term_budgets_floor_and_share():
    b = term_budgets([1.0, 0.5, 1e-6], 100_000)
    assert b[0] == b[1] == 100_000
    assert b[2] == 4096


def test_dilute_correlation_stays_bounded_under_refinement():
    params = rods()
    vals = [dilute_correlation(params, [[0.51]], CubePartition(BOX, 2.0 ** -k)).value
            for k in range(1, 5)]
    assert all(0 < v < 1.5 for v in vals)
    assert max(vals) / min(vals) < 1.5
