import math

import numpy as np
import pytest

from qcgas.geometry import Box, CubePartition
from qcgas.potential import StabilityConstants, ideal, inverse_power, sss_constants
from qcgas.stability import StabilityReport, bound_rhs, sample_configs, verify_bound


def test_sampler_is_deterministic_and_batch_independent():
    box = Box.cube(2.0, 2)
    a = [c.points.tolist() for c in sample_configs(box, 5, 2500, seed=9)]
    b = [c.points.tolist() for c in sample_configs(box, 5, 2500, seed=9)]
    assert a == b
    # a shorter stream is a prefix of a longer one
    short = [c.points.tolist() for c in sample_configs(box, 5, 1500, seed=9)]
    assert short == a[:1500]
    other = [c.points.tolist() for c in sample_configs(box, 5, 10, seed=10)]
    assert other != a[:10]


def test_sampler_edge_cases():
    assert list(sample_configs(Box.cube(1.0), 3, 0)) == []
    with pytest.raises(ValueError):
        list(sample_configs(Box.cube(1.0), 0, 5))


def test_sampler_size_statistics():
    max_n, n = 6, 100_000
    sizes = np.array([len(c) for c in sample_configs(Box.cube(1.0), max_n, n, seed=1)])
    sigma = math.sqrt(((max_n + 1) ** 2 - 1) / 12 / n)
    assert abs(sizes.mean() - max_n / 2) < 3 * sigma
    assert sizes.min() == 0 and sizes.max() == max_n


def test_ideal_gas_is_stable():
    consts = StabilityConstants(a=1.0, A=0.0, B=0.0)
    rep = verify_bound(ideal(1), consts, "S", None, sample_configs(Box.cube(1.0), 4, 500))
    assert rep.ok and rep.samples == 500 and rep.worst_margin == 0


def test_inverse_power_sss_holds_on_samples():
    pot = inverse_power(1, 1)
    consts = sss_constants(pot, 0.5)
    part = CubePartition(Box.cube(1.0), 0.5)
    rep = verify_bound(pot, consts, "SSS", part, sample_configs(Box.cube(1.0), 8, 10_000, seed=3))
    assert rep.samples == 10_000 and rep.ok
    assert "evidence" in rep.note


def test_inflated_constant_gives_violations():
    pot = inverse_power(1, 1)
    consts = StabilityConstants(a=0.5, A=50.0, B=0.0)
    part = CubePartition(Box.cube(1.0), 0.5)
    rep = verify_bound(pot, consts, "SSS", part, sample_configs(Box.cube(1.0), 8, 1000, seed=3))
    assert rep.violations
    v = rep.violations[0]
    assert v["U"] < v["rhs"] and v["margin"] == pytest.approx(v["U"] - v["rhs"])
    assert rep.worst_margin == min(x["margin"] for x in rep.violations)


def test_sss_implies_ss_with_singleton_allowance():
    pot = inverse_power(1, 2)
    consts = sss_constants(pot, 0.25)
    box = Box.cube(1.0)
    coarse = CubePartition(box, 0.25)
    configs = list(sample_configs(box, 8, 3000, seed=4))
    passing = [g for g in configs if verify_bound(pot, consts, "SSS", coarse, [g]).ok]
    assert len(passing) == len(configs)
    # singly occupied cubes add A each to the SS side, absorbed by B + A since |g_D|^2 <= |g_D|^m
    shifted = StabilityConstants(a=consts.a, A=consts.A, B=consts.B + consts.A)
    assert verify_bound(pot, shifted, "SS", coarse, passing).ok
    # with unchanged constants two far-apart points already break SS
    far = [[0.05], [0.95]]
    assert not verify_bound(pot, consts, "SS", coarse, [np.array(far)]).ok


def test_ss_survives_refinement():
    pot = inverse_power(1, 2)
    consts = sss_constants(pot, 0.25)
    consts = StabilityConstants(a=consts.a, A=consts.A, B=consts.B + consts.A)
    box = Box.cube(1.0)
    coarse = CubePartition(box, 0.25)
    fine = CubePartition(box, 0.125)
    configs = [g for g in sample_configs(box, 8, 3000, seed=4)
               if verify_bound(pot, consts, "SS", coarse, [g]).ok]
    assert verify_bound(pot, consts, "SS", fine, configs).ok
    # finer cubes never raise the occupancy sum, so the bound only loosens
    for g in configs[:200]:
        assert bound_rhs(g, consts, "SS", fine) <= bound_rhs(g, consts, "SS", coarse) + 1e-12


def test_kind_validation_and_merge():
    consts = StabilityConstants(a=1.0, A=0.0, B=0.0)
    with pytest.raises(ValueError):
        verify_bound(ideal(1), consts, "SSSS", None, [])
    with pytest.raises(ValueError, match="partition"):
        bound_rhs(np.zeros((0, 1)), consts, "SS", None)
    r1 = StabilityReport("S", consts, 3, [{"margin": -1.0}], -1.0)
    r2 = StabilityReport("S", consts, 2, [], 0.5)
    m12, m21 = r1.merge(r2), r2.merge(r1)
    assert (m12.samples, m12.worst_margin, len(m12.violations)) == (5, -1.0, 1)
    assert (m21.samples, m21.worst_margin) == (m12.samples, m12.worst_margin)
    with pytest.raises(ValueError):
        r1.merge(StabilityReport("SS", consts))
