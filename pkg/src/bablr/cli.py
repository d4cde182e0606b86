"""Command-line interface: ``bablr fit | simulate | sim-study | curves | validate | summarize``.

Settings come from three layers, later ones winning: built-in defaults, an
optional ``--config`` key=value file, and command-line flags.  Every command
writes ``manifest.txt`` into its output directory.  The manifest lists every
effective setting in the config format, so ``--config manifest.txt`` repeats
the run.

Config keys (schema version 1)::

    mode                 simulation | application
    prior.<parameter>    family(loc,scale) or half_student_t(df,loc,scale)
    cp_lower_bound       number or none
    noncentered          true | false
    chains, warmup, samples, target_accept, max_treedepth, seed, init_radius
    jobs                 worker processes (does not change results)
    data, draws, heldout input paths
    out                  output directory
    holdout_fraction     fit: share of subjects whose last visit is held out
    strict               fit: fail when any R-hat >= 1.05
    grid                 start:stop:step ages for curves
    quantiles            comma-separated, strictly increasing, in (0, 1)
    subject              curves: one subject's bands instead of population curves
    pooled               curves: quantiles over all draws rather than medians
    design               sim1 | sim2
    n_subjects, visits (min,max), time_range (lo,hi or design), spacing, replicates
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import io as bio
from .analysis import (
    holdout_validation,
    individual_trajectory,
    leave_last_out,
    population_quantile_curves,
    random_effect_correlations,
    summarize,
    QuantileCurves,
)
from .diagnostics import diagnose
from .fitting import fit
from .model import POPULATION_PARAMETERS, PriorConfig
from .priors import parse_prior
from .sampler import InitializationError, SamplerConfig
from .simulate import (
    DEFAULT_TIME_RANGE,
    SIM1_TRUTH,
    SIM2_DESIGN,
    SIM2_TRUTH,
    run_sim_study,
    simulate_dataset,
)

__all__ = ["main", "RunConfig", "build_parser", "resolve_config", "ConfigError"]

log = logging.getLogger("bablr")

RHAT_THRESHOLD = 1.05
EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 3

COMMANDS = ("fit", "simulate", "sim-study", "curves", "validate", "summarize")
DESIGNS = {"sim1": SIM1_TRUTH, "sim2": SIM2_TRUTH}
DESIGN_TIME_RANGES = {"sim1": DEFAULT_TIME_RANGE, "sim2": SIM2_DESIGN["time_range"]}


class ConfigError(ValueError):
    """Invalid or inconsistent run settings."""


@dataclasses.dataclass
class RunConfig:
    """Every effective setting of one command invocation."""

    command: str = "fit"
    mode: str = "simulation"
    priors: dict = dataclasses.field(default_factory=dict)  # overrides only
    cp_lower_bound: str = "default"
    noncentered: bool = True
    chains: int = 4
    warmup: int = 5000
    samples: int = 5000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    jobs: int = 1
    data: str = ""
    draws: str = ""
    heldout: str = ""
    out: str = "."
    holdout_fraction: float = 0.0
    strict: bool = True
    grid: str = "-25:20:1"
    quantiles: str = "0.1,0.5,0.9"
    subject: str = ""
    pooled: bool = False
    design: str = "sim1"
    n_subjects: int = 100
    visits: str = "3,7"
    time_range: str = "design"
    spacing: float = 2.0
    replicates: int = 10

    # -- derived objects ----------------------------------------------------

    def prior_config(self) -> PriorConfig:
        if self.mode not in ("simulation", "application"):
            raise ConfigError(f"mode must be simulation or application, not {self.mode!r}")
        base = PriorConfig.application() if self.mode == "application" else PriorConfig()
        changes = {}
        for name, text in self.priors.items():
            if name not in POPULATION_PARAMETERS:
                raise ConfigError(f"unknown prior parameter {name!r}; "
                                  f"choose from {', '.join(POPULATION_PARAMETERS)}")
            try:
                changes[name] = parse_prior(text)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.cp_lower_bound != "default":
            changes["cp_lower_bound"] = (None if self.cp_lower_bound == "none"
                                         else float(self.cp_lower_bound))
        changes["noncentered"] = self.noncentered
        try:
            return base.replace(**changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def sampler_config(self) -> SamplerConfig:
        try:
            return SamplerConfig(chains=self.chains, warmup=self.warmup, samples=self.samples,
                                 target_accept=self.target_accept,
                                 max_treedepth=self.max_treedepth, seed=self.seed,
                                 init_radius=self.init_radius)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def age_grid(self):
        try:
            start, stop, step = (float(v) for v in self.grid.split(":"))
        except ValueError:
            raise ConfigError(f"grid must be start:stop:step, got {self.grid!r}") from None
        if not step > 0 or stop < start:
            raise ConfigError("grid needs step > 0 and stop >= start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return start + step * np.arange(n)

    def quantile_list(self):
        try:
            q = [float(v) for v in self.quantiles.split(",")]
        except ValueError:
            raise ConfigError(f"quantiles must be comma-separated numbers: {self.quantiles!r}")
        if any(not 0 < v < 1 for v in q) or any(b <= a for a, b in zip(q, q[1:])):
            raise ConfigError("quantiles must lie in (0, 1) and strictly increase")
        return q

    def design_kwargs(self):
        try:
            lo, hi = (int(v) for v in self.visits.split(","))
            t0, t1 = (float(v) for v in self.effective_time_range().split(","))
        except ValueError:
            raise ConfigError("visits takes min,max and time_range takes lo,hi") from None
        return dict(visit_range=(lo, hi), time_range=(t0, t1), spacing=float(self.spacing))

    def effective_time_range(self):
        """``lo,hi`` text; ``design`` picks the window of the chosen design."""
        if self.time_range != "design":
            return self.time_range
        self.truth()
        lo, hi = DESIGN_TIME_RANGES[self.design]
        return f"{lo!r},{hi!r}"

    def truth(self):
        try:
            return DESIGNS[self.design]
        except KeyError:
            raise ConfigError(f"design must be one of {', '.join(DESIGNS)}") from None

    # -- manifest -----------------------------------------------------------

    def manifest_items(self):
        """Every effective value, defaults included, in config-file syntax."""
        items = [("command", self.command), ("mode", self.mode)]
        prior = self.prior_config()
        for name, value in prior.items():
            key = f"prior.{name}" if name in POPULATION_PARAMETERS else name
            items.append((key, value))
        items += [
            ("chains", self.chains), ("warmup", self.warmup), ("samples", self.samples),
            ("target_accept", bio.fmt(self.target_accept)),
            ("max_treedepth", self.max_treedepth), ("seed", self.seed),
            ("init_radius", bio.fmt(self.init_radius)), ("jobs", self.jobs),
            ("data", self.data), ("draws", self.draws), ("heldout", self.heldout),
            ("out", self.out), ("holdout_fraction", bio.fmt(self.holdout_fraction)),
            ("strict", _bool_text(self.strict)), ("grid", self.grid),
            ("quantiles", self.quantiles), ("subject", self.subject),
            ("pooled", _bool_text(self.pooled)), ("design", self.design),
            ("n_subjects", self.n_subjects), ("visits", self.visits),
            ("time_range", self.effective_time_range()), ("spacing", bio.fmt(self.spacing)),
            ("replicates", self.replicates),
        ]
        return [(k, str(v)) for k, v in items]


def _bool_text(v):
    return "true" if v else "false"


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected true/false, got {text!r}")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool":
            return _parse_bool(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
    return str(value)


def _apply_file(cfg: RunConfig, values):
    for key, value in values.items():
        if key.startswith("prior."):
            cfg.priors[key[len("prior."):]] = value
        elif key == "command":
            continue  # the command line decides what runs
        elif key in _FIELD_TYPES and key != "priors":
            setattr(cfg, key, _coerce(key, value))
        else:
            raise ConfigError(f"unknown config key {key!r}")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _sampler_args(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--chains", type=int)
    g.add_argument("--warmup", type=int)
    g.add_argument("--samples", type=int)
    g.add_argument("--target-accept", type=float)
    g.add_argument("--max-treedepth", type=int)
    g.add_argument("--init-radius", type=float)
    g.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")


def _prior_args(p):
    g = p.add_argument_group("priors")
    g.add_argument("--mode", choices=("simulation", "application"))
    g.add_argument("--prior", action="append", default=[], metavar="NAME=SPEC",
                   help="override one prior, e.g. sigma_u2=lognormal(0,0.2)")
    g.add_argument("--cp-lower-bound", metavar="L|none")
    g.add_argument("--centered", dest="noncentered", action="store_const", const=False,
                   help="centred random effects (default: non-centred)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bablr", description="Bayesian bent-line regression with random change points.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value settings file; flags override it")
        p.add_argument("--out", help="output directory (created if missing)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("fit", help="fit the model to a subject_id,time,outcome CSV")
    common(p)
    p.add_argument("--data")
    p.add_argument("--holdout-fraction", type=float)
    p.add_argument("--no-strict", dest="strict", action="store_const", const=False,
                   help="do not fail when some R-hat >= 1.05")
    _prior_args(p)
    _sampler_args(p)

    p = sub.add_parser("simulate", help="simulate a cohort (dataset CSV + truth CSV)")
    common(p)
    p.add_argument("--design", choices=tuple(DESIGNS))
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--visits", metavar="MIN,MAX")
    p.add_argument("--time-range", metavar="LO,HI")
    p.add_argument("--spacing", type=float)

    p = sub.add_parser("sim-study", help="repeated simulate-and-fit bias/coverage study")
    common(p)
    p.add_argument("--design", choices=tuple(DESIGNS))
    p.add_argument("--replicates", type=int)
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--visits", metavar="MIN,MAX")
    p.add_argument("--time-range", metavar="LO,HI")
    p.add_argument("--spacing", type=float)
    _prior_args(p)
    _sampler_args(p)

    p = sub.add_parser("curves", help="population quantile curves or one subject's bands")
    common(p)
    p.add_argument("--draws")
    p.add_argument("--grid", metavar="START:STOP:STEP")
    p.add_argument("--quantiles", metavar="Q1,Q2,...")
    p.add_argument("--subject")
    p.add_argument("--pooled", action="store_const", const=True)

    p = sub.add_parser("validate", help="predictive coverage of held-out observations")
    common(p)
    p.add_argument("--draws")
    p.add_argument("--heldout")

    p = sub.add_parser("summarize", help="summary, diagnostics and correlations of a draws file")
    common(p)
    p.add_argument("--draws")
    p.add_argument("--max-treedepth", type=int)
    return parser


def resolve_config(args) -> RunConfig:
    """Merge defaults, the optional config file and explicit flags."""
    cfg = RunConfig(command=args.command)
    if getattr(args, "config", None):
        _apply_file(cfg, bio.read_key_values(args.config))
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose", "prior") or value is None:
            continue
        if key in _FIELD_TYPES:
            setattr(cfg, key, value)
    for item in getattr(args, "prior", None) or []:
        if "=" not in item:
            raise ConfigError(f"--prior expects NAME=SPEC, got {item!r}")
        name, spec = (s.strip() for s in item.split("=", 1))
        cfg.priors[name] = spec
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _out(cfg, name):
    return os.path.join(cfg.out, name)


def _require(value, flag):
    if not value:
        raise ConfigError(f"{flag} is required")
    if not os.path.exists(value):
        raise ConfigError(f"{flag}: no such file {value!r}")
    return value


def _manifest(cfg, extra=()):
    bio.write_key_values(_out(cfg, "manifest.txt"), list(cfg.manifest_items()) + list(extra),
                         kind="run manifest")


def cmd_fit(cfg: RunConfig):
    data = bio.read_dataset_csv(_require(cfg.data, "--data"))
    prior, sampler = cfg.prior_config(), cfg.sampler_config()
    if not 0 <= cfg.holdout_fraction <= 1:
        raise ConfigError("holdout_fraction must lie in [0, 1]")
    heldout = []
    if cfg.holdout_fraction > 0:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2**31,)))
        data, heldout = leave_last_out(data, cfg.holdout_fraction, rng)
        bio.write_dataset_csv(_out(cfg, "heldout.csv"),
                              _as_dataset(heldout))
    _manifest(cfg)
    store = fit(data, prior, sampler, n_jobs=cfg.jobs)
    report = diagnose(store, sampler.max_treedepth)
    bio.write_draws_csv(_out(cfg, "draws.csv"), store)
    bio.write_summary_csv(_out(cfg, "summary.csv"), summarize(store, POPULATION_PARAMETERS))
    bio.write_diagnostics_json(_out(cfg, "diagnostics.json"), report)
    bad = sorted(k for k, v in report.rhat.items() if math.isfinite(v) and v >= RHAT_THRESHOLD)
    print(f"fit: {data.n_subjects} subjects, {store.n_chains}x{store.n_samples} draws, "
          f"max R-hat {report.max_rhat():.4f}, {report.divergences} divergences")
    if bad:
        msg = (f"{len(bad)} parameter(s) with R-hat >= {RHAT_THRESHOLD}: "
               f"{', '.join(bad[:8])}{' ...' if len(bad) > 8 else ''}")
        if cfg.strict:
            print(f"error: {msg} (use --no-strict to accept)", file=sys.stderr)
            return EXIT_NOT_CONVERGED
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_OK


def _as_dataset(heldout):
    from .model import LongitudinalDataset, SubjectRecord

    return LongitudinalDataset([SubjectRecord(s, [t], [y]) for s, t, y in heldout],
                               strict=False)


def cmd_simulate(cfg: RunConfig):
    data, truth = simulate_dataset(cfg.truth(), cfg.n_subjects, seed=cfg.seed,
                                   **cfg.design_kwargs())
    _manifest(cfg)
    bio.write_dataset_csv(_out(cfg, "dataset.csv"), data)
    bio.write_truth_csv(_out(cfg, "truth.csv"), truth)
    print(f"simulate: {data.n_subjects} subjects, {data.n_obs} observations")
    return EXIT_OK


def cmd_sim_study(cfg: RunConfig):
    if cfg.replicates < 1:
        raise ConfigError("replicates must be >= 1")
    prior, sampler = cfg.prior_config(), cfg.sampler_config()
    design = cfg.design_kwargs()
    _manifest(cfg)
    report = run_sim_study(cfg.replicates, cfg.truth(), sampler, prior,
                           n_subjects=cfg.n_subjects, seed=cfg.seed, design=design,
                           n_jobs=cfg.jobs)
    bio.write_study_csv(_out(cfg, "study.csv"), report)
    print(f"sim-study: {cfg.replicates} replicates, {report.n_failed} failed")
    for r in report.replicates:
        if not r.ok:
            print(f"  replicate {r.index} failed: {r.error}", file=sys.stderr)
    return EXIT_OK


def cmd_curves(cfg: RunConfig):
    store = bio.read_draws_csv(_require(cfg.draws, "--draws"))
    grid, q = cfg.age_grid(), cfg.quantile_list()
    if cfg.subject:
        values = individual_trajectory(store, cfg.subject, grid, q)
        curves = QuantileCurves(grid, np.asarray(q), values)
    else:
        curves = population_quantile_curves(store, grid, q, pooled=cfg.pooled)
    _manifest(cfg)
    bio.write_curves_csv(_out(cfg, "curves.csv"), curves)
    print(f"curves: {len(q)} quantiles over {grid.size} ages")
    return EXIT_OK


def cmd_validate(cfg: RunConfig):
    store = bio.read_draws_csv(_require(cfg.draws, "--draws"))
    heldout = bio.read_heldout_csv(_require(cfg.heldout, "--heldout"))
    report = holdout_validation(store, heldout)
    line = (f"coverage {bio.fmt(report.coverage)} "
            f"({report.n_inside}/{len(report.points)} inside 95% predictive intervals)")
    _manifest(cfg, [("result.coverage", bio.fmt(report.coverage)),
                    ("result.inside", report.n_inside), ("result.points", len(report.points))])
    bio.write_validation_csv(_out(cfg, "validate.csv"), report)
    print(line)
    return EXIT_OK


def cmd_summarize(cfg: RunConfig):
    store = bio.read_draws_csv(_require(cfg.draws, "--draws"))
    names = [n for n in POPULATION_PARAMETERS if n in store.names] or store.names
    _manifest(cfg)
    bio.write_summary_csv(_out(cfg, "summary.csv"), summarize(store, names))
    bio.write_diagnostics_json(_out(cfg, "diagnostics.json"),
                               diagnose(store, cfg.max_treedepth))
    if len(store.subject_ids()) >= 3:
        bio.write_correlations_csv(_out(cfg, "correlations.csv"),
                                   random_effect_correlations(store))
    print(f"summarize: {len(store.names)} parameters, {store.n_chains} chain(s)")
    return EXIT_OK


HANDLERS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "sim-study": cmd_sim_study,
    "curves": cmd_curves,
    "validate": cmd_validate,
    "summarize": cmd_summarize,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        os.makedirs(cfg.out, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            return HANDLERS[cfg.command](cfg)
    except (ConfigError, bio.DataFormatError, InitializationError, OSError, KeyError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
