"""Randomized falsification of the stability inequalities.

``S``:   ``U(g) >= -B |g|``
``SS``:  ``U(g) >= A sum_D |g_D|^2 - B |g|``
``SSS``: ``U(g) >= A sum_{|g_D| >= 2} |g_D|^m - B |g|``

Passing any number of samples is evidence, not proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .geometry import Box, Configuration, CubePartition, as_configuration, occupancy
from .parallel import OP_SAMPLE, stream
from .potential import PairPotential, StabilityConstants, pair_energy

SAMPLE_BATCH = 1024
KINDS = ("S", "SS", "SSS")


def sample_configs(box: Box, max_n: int, samples: int, seed: int = 0) -> Iterator[Configuration]:
    """Reproducible stream: ``|g|`` uniform on ``0..max_n``, points uniform in the box.

    Each block of ``SAMPLE_BATCH`` configurations has its own counter-keyed
    generator, so the stream does not depend on how it is consumed.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if samples < 0:
        raise ValueError("samples must be >= 0")
    sides = np.asarray(box.sides)
    d = box.dimension
    for b in range(math.ceil(samples / SAMPLE_BATCH)):
        rng = stream(seed, OP_SAMPLE, b)
        count = min(SAMPLE_BATCH, samples - b * SAMPLE_BATCH)
        sizes = rng.integers(0, max_n + 1, size=SAMPLE_BATCH)
        pts = rng.uniform(size=(SAMPLE_BATCH, max_n, d)) * sides
        for i in range(count):
            yield Configuration(pts[i, :sizes[i]], d=d)


def energy_function(energy) -> Callable[[Configuration], float]:
    """Turn a potential, a family or a plain callable into ``U(config)``."""
    if isinstance(energy, PairPotential):
        return lambda g: pair_energy(energy, g)
    if hasattr(energy, "energy_batch"):
        def U(g):
            pts = np.asarray(g.points, dtype=float)
            if len(pts) < 2:
                return 0.0
            return float(energy.energy_batch(pts[None])[0])
        return U
    return energy


@dataclass
class StabilityReport:
    kind: str
    constants: StabilityConstants
    samples: int = 0
    violations: list = field(default_factory=list)
    worst_margin: float = math.inf
    note: str = "falsification only: no violations among the samples is evidence, not proof"

    @property
    def ok(self) -> bool:
        return not self.violations

    def merge(self, other: "StabilityReport") -> "StabilityReport":
        if other.kind != self.kind:
            raise ValueError("cannot merge reports of different kinds")
        return StabilityReport(self.kind, self.constants, self.samples + other.samples,
                               self.violations + other.violations,
                               min(self.worst_margin, other.worst_margin), self.note)


def bound_rhs(config, consts: StabilityConstants, kind: str, part: CubePartition | None) -> float:
    n = len(config)
    if kind == "S":
        return -consts.B * n
    if part is None:
        raise ValueError(f"kind {kind} needs a cube partition")
    occ = np.array(list(occupancy(config, part).values()), dtype=float)
    if kind == "SS":
        return consts.A * float(np.sum(occ ** 2)) - consts.B * n
    dense = occ[occ >= 2]
    return consts.A * float(np.sum(dense ** consts.m)) - consts.B * n


def verify_bound(energy, consts: StabilityConstants, kind: str, part: CubePartition | None,
                 configs: Iterable, *, rtol: float = 1e-9) -> StabilityReport:
    """Check the chosen inequality on every configuration; violations are data.

    A configuration violates the bound when ``U - rhs < -rtol (|U| + |rhs| + 1)``.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    U = energy_function(energy)
    report = StabilityReport(kind, consts)
    for g in configs:
        g = as_configuration(g, part.box.dimension if part is not None else None)
        u = float(U(g))
        rhs = bound_rhs(g, consts, kind, part)
        margin = u - rhs if math.isfinite(u) else math.inf
        report.samples += 1
        report.worst_margin = min(report.worst_margin, margin)
        if margin < -rtol * (abs(u) + abs(rhs) + 1.0):
            report.violations.append({"points": np.asarray(g.points).tolist(), "U": u,
                                      "rhs": rhs, "margin": margin})
    return report
