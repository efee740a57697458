"""Command-line driver.

Configuration is a flat ``key = value`` text file with dotted sections
(``#`` starts a comment), or a JSON sidecar written by a previous run.
Numbers accept fractions such as ``1/16``; lists are comma separated and
points of ``eta`` are separated by ``;``.

Exit codes: 0 success, 1 validation error, 2 numerical rejection.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from . import __version__
from .convergence import (SWEEP_COLUMNS, epsilon1, remainder_rhs, sweep, verify_identity,
                          occupied_volume)
from .ensemble import (DEFAULT_BUDGET, DEFAULT_TOL, EnsembleParams, correlation,
                       dilute_correlation, dilute_partition_function, partition_function)
from .estimate import NumericalRejection
from .geometry import Box, CubePartition, as_configuration, check_compatible_sequence
from .manybody import I_bar, ManyBodyFamily, manybody_constants, pair_only, pair_plus_triple
from .parallel import default_workers
from .potential import (BUILTIN, DEFAULT_CUTOFF, PairPotential, StabilityConstants, b_of_a,
                        find_a_star, make_potential, sss_constants, upsilon_eps)
from .stability import sample_configs, verify_bound

COMMANDS = ("constants", "check-stability", "zfun", "rho", "epsilon1", "sweep", "verify-identity")
POTENTIAL_PARAMS = ("phi0", "s", "sigma", "depth", "range", "phi1", "kappa")
FAMILY_KINDS = ("pair_only", "pair_plus_triple")


class ConfigError(ValueError):
    pass


def _num(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {text!r}") from None


def _int(text: str) -> int:
    v = _num(text)
    if v != int(v):
        raise ConfigError(f"not an integer: {text!r}")
    return int(v)


def _nums(text: str) -> list[float]:
    return [_num(t) for t in text.split(",") if t.strip()]


def _points(text: str) -> list[list[float]]:
    return [_nums(p) for p in text.split(";") if p.strip()]


SCHEMA = {
    "potential.kind": str,
    **{f"potential.{p}": _num for p in POTENTIAL_PARAMS},
    "family.kind": str,
    "family.triple_strength": _num,
    "family.triple_range": _num,
    "box.sides": _nums,
    "ensemble.z": _num,
    "ensemble.beta": _num,
    "ensemble.B": _num,
    "partition.a": _num,
    "partition.a_list": _nums,
    "eta": _points,
    "numerics.n_max": _int,
    "numerics.method": str,
    "numerics.budget": _int,
    "numerics.tol": _num,
    "numerics.cutoff": _int,
    "numerics.eps": _num,
    "numerics.delta": _num,
    "stability.kind": str,
    "stability.samples": _int,
    "stability.max_n": _int,
    "stability.A": _num,
    "stability.B": _num,
    "stability.upsilon_star": _num,
    "seed": _int,
    "output.csv": str,
    "output.json": str,
}


def parse_text(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def load_raw(path: str | Path) -> dict[str, str]:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        data = data.get("config", data)
        return {str(k): str(v) for k, v in data.items()}
    return parse_text(text)


@dataclass
class RunConfig:
    raw: dict[str, str]
    values: dict = field(default_factory=dict)

    @classmethod
    def from_raw(cls, raw: dict[str, str]) -> "RunConfig":
        values = {}
        for key, text in raw.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = SCHEMA[key](text)
        cfg = cls(dict(raw), values)
        cfg._validate()
        return cfg

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing config key {key!r}")
        return self.values[key]

    def _validate(self):
        method = self.get("numerics.method", "auto")
        if method not in ("auto", "quadrature", "mc", "closed-form"):
            raise ConfigError(f"numerics.method must be auto, quadrature, mc or closed-form, got {method!r}")
        kind = self.get("stability.kind", "SSS")
        if kind not in ("S", "SS", "SSS"):
            raise ConfigError(f"stability.kind must be S, SS or SSS, got {kind!r}")
        if "potential.kind" in self.values and self.values["potential.kind"] not in BUILTIN:
            raise ConfigError(f"unknown potential.kind {self.values['potential.kind']!r}; "
                              f"known: {sorted(BUILTIN)}")
        fam = self.get("family.kind")
        if fam is not None and fam not in FAMILY_KINDS:
            raise ConfigError(f"unknown family.kind {fam!r}; known: {list(FAMILY_KINDS)}")
        if "partition.a_list" in self.values:
            check_compatible_sequence(self.values["partition.a_list"])

    # derived objects --------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.get("seed", 0)

    @property
    def box(self) -> Box:
        return Box(tuple(self.require("box.sides")))

    def potential(self) -> PairPotential:
        d = len(self.get("box.sides", [1.0]))
        kind = self.require("potential.kind")
        params = {k.split(".", 1)[1]: v for k, v in self.values.items()
                  if k.startswith("potential.") and k != "potential.kind"}
        return make_potential(kind, d, **params)

    def family(self) -> ManyBodyFamily | None:
        kind = self.get("family.kind")
        if kind is None:
            for k in ("family.triple_strength", "family.triple_range"):
                if k in self.values:
                    raise ConfigError(f"{k} needs family.kind")
            return None
        pot = self.potential()
        if kind == "pair_only":
            return pair_only(pot)
        return pair_plus_triple(pot, self.require("family.triple_strength"),
                                self.require("family.triple_range"))

    def energy(self):
        fam = self.family()
        return fam if fam is not None else self.potential()

    def edges(self) -> list[float]:
        if "partition.a_list" in self.values:
            return list(self.values["partition.a_list"])
        if "partition.a" in self.values:
            return [self.values["partition.a"]]
        raise ConfigError("need partition.a or partition.a_list")

    def constants_at(self, a: float) -> tuple[StabilityConstants, float]:
        """Stability constants and ``upsilon*`` at edge ``a``, user values first."""
        if "stability.A" in self.values or "stability.B" in self.values:
            consts = StabilityConstants(a=a, A=self.require("stability.A"),
                                        B=self.require("stability.B"), source="config")
            return consts, self.get("stability.upsilon_star", 0.0)
        cutoff = self.get("numerics.cutoff")
        fam = self.family()
        if fam is not None:
            consts = manybody_constants(fam, a, **({"cutoff": cutoff} if cutoff else {}))
            ups = self.get("stability.upsilon_star", I_bar(fam, a, **({"cutoff": cutoff} if cutoff else {})).upper)
            return consts, ups
        pot = self.potential()
        consts = sss_constants(pot, a, cutoff or DEFAULT_CUTOFF)
        return consts, self.get("stability.upsilon_star", consts.upsilon0)

    def stability_B(self) -> float:
        """``ensemble.B`` if given, else a derived stability constant."""
        if "ensemble.B" in self.values:
            return self.values["ensemble.B"]
        pot = self.potential()
        if pot.is_zero and self.family() is None:
            return 0.0
        if "stability.B" in self.values:
            return self.values["stability.B"]
        # halve the edge until the constants are accepted
        a = pot.r0 / math.sqrt(pot.d)
        for _ in range(30):
            try:
                return self.constants_at(a)[0].B
            except NumericalRejection:
                a /= 2
        raise NumericalRejection("no edge found where the stability constants are accepted; "
                                 "set ensemble.B")

    def ensemble(self) -> EnsembleParams:
        return EnsembleParams(self.require("ensemble.z"), self.get("ensemble.beta", 1.0),
                              self.box, self.energy(), self.stability_B())

    def numerics(self) -> dict:
        return {"method": self.get("numerics.method", "auto"),
                "budget": self.get("numerics.budget", DEFAULT_BUDGET),
                "tol": self.get("numerics.tol", DEFAULT_TOL)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.17g" % v
    if v is None:
        return "nan"
    return str(v)


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


# Subcommands ---------------------------------------------------------------

def cmd_constants(cfg: RunConfig, workers):
    header = ["a", "b", "upsilon_eps", "upsilon_eps_err", "A", "B", "a_star", "Ibar", "Ibar_err"]
    eps = cfg.get("numerics.eps", 0.0)
    cutoff = cfg.get("numerics.cutoff")
    pot = cfg.potential()
    fam = cfg.family() or pair_only(pot)
    a_star = math.nan
    if "numerics.delta" in cfg.values:
        a_star = find_a_star(pot, cfg.values["numerics.delta"], cutoff=cutoff or DEFAULT_CUTOFF)
    rows, meta = [], {}
    for a in cfg.edges():
        ups = upsilon_eps(pot, a, eps, cutoff or DEFAULT_CUTOFF)
        consts, _ = cfg.constants_at(a)
        ib = I_bar(fam, a, **({"cutoff": cutoff} if cutoff else {}))
        rows.append([a, b_of_a(pot, a), ups.value, ups.error, consts.A, consts.B, a_star,
                     ib.value, ib.error])
        meta[_fmt(a)] = {"upsilon_tail": ups.error, "Ibar_tail": ib.error}
    return header, rows, {"error_bounds": meta, "truncations": {"cutoff": cutoff or DEFAULT_CUTOFF}}


def cmd_check_stability(cfg: RunConfig, workers):
    kind = cfg.get("stability.kind", "SSS")
    samples = cfg.get("stability.samples", 10_000)
    max_n = cfg.get("stability.max_n", 8)
    a = cfg.edges()[0]
    consts, _ = cfg.constants_at(a)
    part = CubePartition(cfg.box, a)
    report = verify_bound(cfg.energy(), consts, kind, part,
                          sample_configs(cfg.box, max_n, samples, cfg.seed))
    header = ["kind", "a", "A", "B", "m", "samples", "violations", "worst_margin"]
    rows = [[kind, a, consts.A, consts.B, consts.m, report.samples, len(report.violations),
             report.worst_margin]]
    return header, rows, {"violations": report.violations[:100], "note": report.note}


def _estimate_meta(est):
    return {"value": est.value, "error": est.error, "method": est.method,
            "n_max": est.breakdown.get("n_max"), "tail": est.breakdown.get("tail"),
            "warning": est.warning}


def cmd_zfun(cfg: RunConfig, workers):
    params = cfg.ensemble()
    num = cfg.numerics()
    n_max = cfg.get("numerics.n_max")
    header = ["quantity", "a", "value", "error", "method", "n_max", "tail"]
    rows, meta = [], {}
    Z = partition_function(params, n_max, num["method"], cfg.seed, budget=num["budget"],
                           tol=num["tol"], workers=workers)
    rows.append(["Z", math.nan, Z.value, Z.error, Z.method, Z.breakdown.get("n_max"),
                 Z.breakdown.get("tail")])
    meta["Z"] = _estimate_meta(Z)
    if "partition.a" in cfg.values or "partition.a_list" in cfg.values:
        for a in cfg.edges():
            Zm = dilute_partition_function(params, CubePartition(params.box, a), n_max,
                                           num["method"], cfg.seed, budget=num["budget"],
                                           tol=num["tol"], workers=workers)
            rows.append(["Zminus", a, Zm.value, Zm.error, Zm.method, Zm.breakdown.get("n_max"),
                         Zm.breakdown.get("tail")])
            meta[f"Zminus@{_fmt(a)}"] = _estimate_meta(Zm)
    return header, rows, {"error_bounds": meta, "B": params.B}


def cmd_rho(cfg: RunConfig, workers):
    params = cfg.ensemble()
    num = cfg.numerics()
    method = num["method"] if num["method"] != "closed-form" else "auto"
    n_max = cfg.get("numerics.n_max")
    eta = as_configuration(cfg.get("eta", []), params.d)
    header = ["quantity", "a", "value", "error", "method", "n_max"]
    rho = correlation(params, eta, n_max, method, cfg.seed, budget=num["budget"],
                      tol=num["tol"], workers=workers)
    rows = [["rho", math.nan, rho.value, rho.error, rho.method, rho.breakdown.get("n_max")]]
    meta = {"rho": _estimate_meta(rho)}
    if "partition.a" in cfg.values or "partition.a_list" in cfg.values:
        for a in cfg.edges():
            r = dilute_correlation(params, eta, CubePartition(params.box, a), n_max, method,
                                   cfg.seed, budget=num["budget"], tol=num["tol"],
                                   workers=workers)
            rows.append(["rhominus", a, r.value, r.error, r.method, r.breakdown.get("n_max")])
            meta[f"rhominus@{_fmt(a)}"] = _estimate_meta(r)
    return header, rows, {"error_bounds": meta, "B": params.B}


def cmd_epsilon1(cfg: RunConfig, workers):
    z = cfg.require("ensemble.z")
    beta = cfg.get("ensemble.beta", 1.0)
    box = cfg.box
    eta = as_configuration(cfg.get("eta", []), box.dimension)
    header = ["a", "A", "B", "upsilon_star", "eps1", "eps1_err", "rbound"]
    rows = []
    for a in cfg.edges():
        consts, ups = cfg.constants_at(a)
        e1 = epsilon1(a, z, beta, consts, ups, d=box.dimension)
        part = CubePartition(box, a)
        rb = remainder_rhs(len(eta), box.volume, occupied_volume(eta, part), a, z, beta, consts,
                           ups, d=box.dimension)
        rows.append([a, consts.A, consts.B, ups, e1.value, e1.error, rb])
    return header, rows, {}


def cmd_sweep(cfg: RunConfig, workers):
    params = cfg.ensemble()
    num = cfg.numerics()
    method = num["method"] if num["method"] != "closed-form" else "auto"
    eta = cfg.get("eta", [])

    def constants(a):
        # edges beyond the core radius have no constants; leave those columns empty
        try:
            return cfg.constants_at(a)
        except ValueError:
            return None

    use_consts = not (isinstance(params.energy, PairPotential) and params.energy.is_zero) \
        or "stability.A" in cfg.values
    res = sweep(params, eta, cfg.edges(), cfg.get("numerics.n_max"), cfg.seed, method=method,
                budget=num["budget"], tol=num["tol"], workers=workers,
                constants=constants if use_consts else None)
    rows = [r.csv_values() for r in res.rows]
    errs = [{"a": r.a, "ratio_err": r.ratio.error, "rho_err": r.rho.error,
             "rhominus_err": r.rhominus.error, "absdiff_err": r.absdiff.error,
             "eps1_err": r.eps1.error if r.eps1 is not None else None} for r in res.rows]
    return list(SWEEP_COLUMNS), rows, {"error_bounds": errs, "truncations": res.metadata}


def cmd_verify_identity(cfg: RunConfig, workers):
    params = cfg.ensemble()
    num = cfg.numerics()
    a = cfg.edges()[0]
    part = CubePartition(params.box, a)
    eta = cfg.get("eta", [])
    consts = ups = None
    try:
        consts, ups = cfg.constants_at(a)
    except NumericalRejection:
        pass
    if consts is not None and not (consts.A > 0):
        consts = ups = None
    rep = verify_identity(params, eta, part, cfg.get("numerics.n_max", 4), cfg.seed,
                            budget=num["budget"], consts=consts, upsilon_star=ups)
    header = ["a", "lhs", "rhs", "difference", "combined_error", "holds", "remainder",
              "remainder_err", "remainder_bound", "bound_holds"]
    rows = [[a, rep.lhs.value, rep.rhs, rep.difference, rep.combined_error, rep.holds,
             rep.remainder.value, rep.remainder.error, rep.remainder_bound, rep.bound_holds]]
    return header, rows, {"note": rep.note}


HANDLERS = {
    "constants": cmd_constants,
    "check-stability": cmd_check_stability,
    "zfun": cmd_zfun,
    "rho": cmd_rho,
    "epsilon1": cmd_epsilon1,
    "sweep": cmd_sweep,
    "verify-identity": cmd_verify_identity,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qcgas", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"qcgas {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", help="key = value config file, or a JSON sidecar of an earlier run")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default from QCGAS_WORKERS, else 1); never changes results")
    return p


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    start = time.perf_counter()
    try:
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = RunConfig.from_raw(load_raw(args.config))
        header, rows, extra = HANDLERS[args.command](cfg, workers)
    except NumericalRejection as exc:
        print(f"qcgas: numerical rejection: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"qcgas: error: {exc}", file=sys.stderr)
        return 1
    table = _table(header, rows)
    csv_path = cfg.get("output.csv")
    if csv_path:
        Path(csv_path).write_text(table)
    else:
        sys.stdout.write(table)
    json_path = cfg.get("output.json") or (str(Path(csv_path).with_suffix(".json")) if csv_path else None)
    if json_path:
        sidecar = {"command": args.command, "config": cfg.raw, "seed": cfg.seed,
                   "columns": header, "wall_time": time.perf_counter() - start,
                   "version": __version__}
        sidecar.update(extra)
        Path(json_path).write_text(json.dumps(sidecar, indent=2, default=_json_default) + "\n")
    return 0


def _json_default(o):
    if isinstance(o, float):
        return None if math.isnan(o) else o
    try:
        return float(o)
    except (TypeError, ValueError):
        return str(o)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
