"""Command line front end for the laboratory.

Subcommands
-----------
potential-diag  interaction kernel norm scaling fits across widths
pde             field evolution diagnostics, with an exact heat-flow check
                row when the coupling is off
sim-coupled     one coupled three-system cell, summary error statistics
                per checkpoint
sweep           preset experiment sweeps (exceedance, coupling_rate,
                marginal_l1, lln)
lln-diag        shorthand for the lln sweep preset
plot            render a records CSV, or a plain two-column x,y CSV, as
                SVG charts

Configs are INI files: [experiment] holds the run parameters, [grid] the
periodic box, [output] the destination directory.  Validation completes
before any compute starts, and config complaints are anchored to the
offending line.  Compute subcommands always leave a manifest behind, on
failure as well as success, so a run can be audited post mortem.

Exit codes: 0 success, 2 usage or config error, 3 numerical failure or an
empty sweep, 4 I/O trouble or malformed input data.
"""

import argparse
import configparser
import json
import logging
import os
import sys

import numpy as np

from . import harness, svgplot
from .errors import ConfigurationError, CouplingError, StabilityError
from .harness import CHI_WELLPOSED_BOUND, ExperimentConfig, PRESETS
from .metrics import MetricRecord, max_norm, power_mean
from .particles import SYSTEMS, pair_name, run_coupled_batch
from .pde import GridSpec, boundary_mass, check_epsilon_resolved, evolve, \
    heat_reference
from .potential import build_table, norm_scaling_diagnostic

log = logging.getLogger("kschaos")

KEY_DOC = {
    ("experiment", "preset"):
        "which sweep to run: " + " | ".join(PRESETS),
    ("experiment", "n"):
        "particle counts, comma or space separated, strictly increasing",
    ("experiment", "replicas"):
        "independent repetitions per sweep cell",
    ("experiment", "beta"):
        "width exponent: eps = n**(-beta) for each particle count",
    ("experiment", "epsilon"):
        "explicit interaction width(s); the alternative to beta",
    ("experiment", "alpha"):
        "threshold exponents; error statistics are compared to n**(-alpha)",
    ("experiment", "k"):
        "moment orders, entering through the 2k-power means",
    ("experiment", "theta"):
        "deviation exponents for the field-average exceedance events",
    ("experiment", "chi"):
        "signal coupling strength; 0 switches the interaction off",
    ("experiment", "seed"):
        "master seed for the counter-based noise streams",
    ("experiment", "times"):
        "checkpoint times, each a whole number of dt steps",
    ("experiment", "workers"):
        "process count for replica batches (default $KSCHAOS_WORKERS or 1)",
    ("grid", "half_width"):
        "half width L of the periodic box [-L, L)^2",
    ("grid", "n"):
        "collocation nodes per axis, a power of two, at least 64",
    ("grid", "dt"):
        "time step shared by the field solver and the particle scheme",
    ("grid", "t_end"):
        "time horizon; checkpoints cannot pass it",
    ("output", "dir"):
        "directory for CSV, SVG, and manifest outputs",
}

_GRID_KEYS = {k for k in KEY_DOC if k[0] == "grid"}
_COMMON = {("experiment", "chi"), ("experiment", "seed"), ("output", "dir")}
_SWEEP_KEYS = set(KEY_DOC)

APPLICABLE = {
    "sweep": _SWEEP_KEYS,
    "lln-diag": _SWEEP_KEYS,
    "sim-coupled": _COMMON | _GRID_KEYS | {
        ("experiment", "n"), ("experiment", "replicas"),
        ("experiment", "beta"), ("experiment", "epsilon"),
        ("experiment", "k"), ("experiment", "times")},
    "pde": _COMMON | _GRID_KEYS | {
        ("experiment", "epsilon"), ("experiment", "times")},
    "potential-diag": _COMMON | {("experiment", "epsilon")},
}

# desk-scale defaults per preset; a config file overrides key by key.
# coupling_rate and lln reach widths under the 256-node resolution floor
# (2*dx = 0.125), so their default grids refine until the smallest width
# stays resolved.
DEFAULT_SWEEPS = {
    "exceedance": dict(n_list=(256, 1024, 4096), replicas=64, beta=0.1,
                       alpha_list=(0.3,), k_list=(2.0,)),
    "coupling_rate": dict(n_list=(1024,), replicas=32,
                          epsilon_list=(0.4, 0.2, 0.1, 0.05),
                          k_list=(1.0,), grid=GridSpec(n=1024)),
    "marginal_l1": dict(n_list=(1024, 4096, 16384), replicas=5, beta=0.1),
    "lln": dict(n_list=(256, 1024, 4096), replicas=64,
                epsilon_list=(0.1,), k_list=(2.0,),
                grid=GridSpec(n=512)),
}


class _Bail(Exception):
    """Internal control flow: carry an exit code and a user message."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _key_lines(text):
    """First line number of every section header and key, for anchoring."""
    lines = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            lines.setdefault((section, None), i)
            continue
        for sep in "=:":
            if sep in line:
                key = line.split(sep, 1)[0].strip().lower()
                lines.setdefault((section, key), i)
                break
    return lines


class _ConfigView:
    """Typed access to a parsed config with line-anchored complaints."""

    def __init__(self, parser, keymap, path):
        self.parser = parser
        self.keymap = keymap
        self.path = path

    def _anchor(self, section, key):
        lineno = self.keymap.get((section, key))
        if lineno is None:
            return "%s: key '%s'" % (self.path, key)
        return "%s line %d: key '%s'" % (self.path, lineno, key)

    def has(self, section, key):
        return self.parser.has_option(section, key)

    def raw(self, section, key, default=None):
        if not self.has(section, key):
            return default
        return self.parser.get(section, key).strip()

    def _parse(self, section, key, conv, text):
        try:
            return conv(text)
        except ValueError as exc:
            raise _Bail(2, "%s: %s" % (self._anchor(section, key), exc))

    def float1(self, section, key, default=None):
        text = self.raw(section, key)
        if text is None:
            return default
        return self._parse(section, key, float, text)

    def int1(self, section, key, default=None):
        text = self.raw(section, key)
        if text is None:
            return default
        return self._parse(section, key, int, text)

    def floats(self, section, key, default=None):
        text = self.raw(section, key)
        if text is None:
            return default
        parts = text.replace(",", " ").split()
        if not parts:
            raise _Bail(2, "%s: empty value" % self._anchor(section, key))
        return tuple(self._parse(section, key, float, p) for p in parts)

    def ints(self, section, key, default=None):
        vals = self.floats(section, key)
        if vals is None:
            return default
        for v in vals:
            if v != int(v):
                raise _Bail(2, "%s: expected integers"
                            % self._anchor(section, key))
        return tuple(int(v) for v in vals)


def _load_config(path, subcommand):
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise _Bail(2, "config %s: no such file" % path)
    except OSError as exc:
        raise _Bail(4, "config %s: %s" % (path, exc))
    parser = configparser.ConfigParser(strict=True, interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=path)
    except configparser.DuplicateOptionError as exc:
        raise _Bail(2, "%s line %d: duplicate key '%s'"
                    % (path, exc.lineno, exc.option))
    except configparser.DuplicateSectionError as exc:
        raise _Bail(2, "%s line %d: duplicate section [%s]"
                    % (path, exc.lineno, exc.section))
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = "%s line %s" % (path, lineno) if lineno else path
        raise _Bail(2, "%s: %s" % (where, exc.message.splitlines()[0]))
    keymap = _key_lines(text)
    allowed = APPLICABLE[subcommand]
    for section in parser.sections():
        s = section.lower()
        if all(k[0] != s for k in KEY_DOC):
            lineno = keymap.get((s, None), 0)
            raise _Bail(2, "%s line %d: unknown section [%s]"
                        % (path, lineno, section))
        for key in parser[section]:
            lineno = keymap.get((s, key), 0)
            if (s, key) not in KEY_DOC:
                raise _Bail(2, "%s line %d: unknown key '%s'"
                            % (path, lineno, key))
            if (s, key) not in allowed:
                raise _Bail(2,
                            "%s line %d: key '%s' does not apply to %s"
                            % (path, lineno, key, subcommand))
    return _ConfigView(parser, keymap, path)


def _grid_from(view, base=None):
    base = base or GridSpec()
    kw = {"half_width": base.half_width, "n": base.n, "dt": base.dt,
          "t_end": base.t_end}
    for key, conv in (("half_width", view.float1), ("n", view.int1),
                      ("dt", view.float1), ("t_end", view.float1)):
        val = conv("grid", key)
        if val is not None:
            kw[key] = val
    try:
        return GridSpec(**kw)
    except ConfigurationError as exc:
        raise _Bail(2, "config error in [grid]: %s" % exc)


def _output_dir(view, inv):
    out = inv.output or (view.raw("output", "dir") if view else None)
    if not out:
        raise _Bail(2, "an output directory is required "
                    "(set [output] dir or pass --output)")
    return out


def _check_times(times, grid):
    last = -np.inf
    for t in times:
        if not 0.0 <= t <= grid.t_end + 1e-12:
            raise _Bail(2, "checkpoint %.6g outside [0, t_end]" % t)
        if t <= last:
            raise _Bail(2, "checkpoint times must be strictly increasing")
        if abs(round(t / grid.dt) * grid.dt - t) > 1e-9 * max(1.0, t):
            raise _Bail(2, "checkpoint %.6g not on the dt lattice" % t)
        last = t
    return tuple(float(t) for t in times)


def _check_chi(chi):
    if chi < 0.0 or not np.isfinite(chi):
        raise _Bail(2, "chi must be nonnegative")
    return float(chi)


def _default_workers():
    raw = os.environ.get("KSCHAOS_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise _Bail(2, "KSCHAOS_WORKERS=%r is not an integer" % raw)


# ------------------------------------------------------------ invocation

def _common_flags(sub):
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--output", default=None,
                     help="override the output directory")
    sub.add_argument("-v", "--verbose", action="count", default=0,
                     help="log progress to stderr; repeat for more detail")


def _key_epilog(subcommand):
    lines = ["config keys:"]
    section = None
    for (sec, key) in sorted(APPLICABLE[subcommand]):
        if sec != section:
            lines.append("  [%s]" % sec)
            section = sec
        lines.append("    %-12s %s" % (key, KEY_DOC[(sec, key)]))
    return "\n".join(lines)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kschaos",
        description="Particle/field laboratory for signal-coupled "
                    "interacting ensembles.")
    subs = parser.add_subparsers(dest="subcommand", required=True,
                                 metavar="subcommand")

    def config_sub(name, help_text):
        sub = subs.add_parser(
            name, help=help_text, epilog=_key_epilog(name),
            formatter_class=argparse.RawDescriptionHelpFormatter)
        _common_flags(sub)
        return sub

    sub = config_sub("potential-diag",
                     "fit interaction kernel norm scaling across widths")
    sub.add_argument("config", help="INI config path")

    sub = config_sub("pde", "evolve the field and emit diagnostics")
    sub.add_argument("config", help="INI config path")

    sub = config_sub("sim-coupled",
                     "run one coupled cell and summarize pair errors")
    sub.add_argument("config", help="INI config path")

    sub = config_sub("sweep", "run a preset experiment sweep")
    sub.add_argument("config", nargs="?", default=None,
                     help="INI config path (optional with --preset)")
    sub.add_argument("--preset", choices=PRESETS, default=None,
                     help="run this preset with its desk-scale defaults")

    sub = config_sub("lln-diag",
                     "field-average exceedance diagnostics (lln preset)")
    sub.add_argument("config", help="INI config path")

    sub = subs.add_parser(
        "plot", help="render a CSV as SVG charts",
        description="Detects the records layout by its header; any other "
                    "CSV is read as two numeric columns x,y and drawn as "
                    "a single curve with a fitted slope when both axes "
                    "support log scale.")
    sub.add_argument("csv", help="input CSV path")
    _common_flags(sub)
    return parser


def parse_and_validate(argv=None):
    """Parse argv and fully validate the config before any compute.

    Returns the parsed namespace plus the ready-to-run payload; raises
    _Bail with the proper exit code on any problem.
    """
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(message)s")
    if args.subcommand == "plot":
        return args, None
    view = None
    if args.subcommand == "sweep" and args.config is None:
        if args.preset is None:
            raise _Bail(2, "sweep needs a config path or --preset")
    else:
        view = _load_config(args.config, args.subcommand)
    builder = {
        "sweep": _build_sweep,
        "lln-diag": _build_sweep,
        "sim-coupled": _build_sim_coupled,
        "pde": _build_pde,
        "potential-diag": _build_potential_diag,
    }[args.subcommand]
    return args, builder(args, view)


# -------------------------------------------------------------- builders

def _build_sweep(inv, view):
    if inv.subcommand == "lln-diag":
        preset = "lln"
        named = view.raw("experiment", "preset")
        if named is not None and named != "lln":
            raise _Bail(2, "lln-diag runs the lln preset; config names %r"
                        % named)
    else:
        preset = getattr(inv, "preset", None)
        named = view.raw("experiment", "preset") if view else None
        if named is not None:
            if preset is not None and preset != named:
                raise _Bail(2, "preset given twice: --preset %s vs "
                            "config %s" % (preset, named))
            preset = named
        if preset is None:
            raise _Bail(2, "no preset: set [experiment] preset or --preset")
        if preset not in PRESETS:
            raise _Bail(2, "unknown preset %r (expected one of %s)"
                        % (preset, ", ".join(PRESETS)))
    kw = dict(DEFAULT_SWEEPS[preset])
    if view is not None:
        got = {}
        for key, attr, conv in (
                ("n", "n_list", view.ints),
                ("replicas", "replicas", None),
                ("beta", "beta", None),
                ("epsilon", "epsilon_list", view.floats),
                ("alpha", "alpha_list", view.floats),
                ("k", "k_list", view.floats),
                ("theta", "theta_list", view.floats),
                ("times", "times", view.floats),
                ("chi", "chi", None),
                ("seed", "seed", None),
                ("workers", "workers", None)):
            if not view.has("experiment", key):
                continue
            if conv is not None:
                got[attr] = conv("experiment", key)
            elif key in ("replicas", "seed", "workers"):
                got[attr] = view.int1("experiment", key)
            else:
                got[attr] = view.float1("experiment", key)
        # an explicit width specification displaces the preset default
        if "beta" in got or "epsilon_list" in got:
            kw.pop("beta", None)
            kw.pop("epsilon_list", None)
        kw.update(got)
    base_grid = kw.pop("grid", None)
    kw["grid"] = _grid_from(view, base_grid) if view is not None \
        else (base_grid or GridSpec())
    if inv.seed is not None:
        kw["seed"] = inv.seed
    kw.setdefault("workers", _default_workers())
    out = _output_dir(view, inv)
    try:
        config = ExperimentConfig(preset=preset, output_dir=out, **kw)
    except ConfigurationError as exc:
        raise _Bail(2, "config error: %s" % exc)
    return config


def _build_pde(inv, view):
    grid = _grid_from(view)
    chi = _check_chi(view.float1("experiment", "chi", 0.5))
    epsilon = view.float1("experiment", "epsilon", 0.0)
    if epsilon < 0.0:
        raise _Bail(2, "epsilon must be nonnegative")
    try:
        check_epsilon_resolved(epsilon, grid)
    except ConfigurationError as exc:
        raise _Bail(2, "config error: %s" % exc)
    times = _check_times(view.floats("experiment", "times", (grid.t_end,)),
                         grid)
    return {
        "grid": grid, "chi": chi, "epsilon": epsilon, "times": times,
        "seed": inv.seed if inv.seed is not None
        else view.int1("experiment", "seed", 0),
        "out_dir": _output_dir(view, inv),
    }


def _build_sim_coupled(inv, view):
    grid = _grid_from(view)
    chi = _check_chi(view.float1("experiment", "chi", 0.5))
    ns = view.ints("experiment", "n", (256,))
    if len(ns) != 1 or ns[0] < 1:
        raise _Bail(2, "sim-coupled runs a single cell: give one n")
    beta = view.float1("experiment", "beta")
    eps_list = view.floats("experiment", "epsilon")
    if (beta is None) == (eps_list is None):
        raise _Bail(2, "give exactly one of beta or epsilon")
    if eps_list is not None:
        if len(eps_list) != 1:
            raise _Bail(2, "sim-coupled runs a single cell: give one epsilon")
        epsilon = float(eps_list[0])
    else:
        epsilon = float(ns[0]) ** (-beta)
    if epsilon <= 0.0:
        raise _Bail(2, "sim-coupled needs a positive interaction width")
    try:
        check_epsilon_resolved(epsilon, grid)
    except ConfigurationError as exc:
        raise _Bail(2, "config error: %s" % exc)
    k_list = view.floats("experiment", "k", (1.0,))
    if any(k < 1.0 for k in k_list):
        raise _Bail(2, "moment orders must be at least 1")
    replicas = view.int1("experiment", "replicas", 4)
    if replicas < 1:
        raise _Bail(2, "replicas must be positive")
    times = _check_times(view.floats("experiment", "times", (grid.t_end,)),
                         grid)
    if chi >= CHI_WELLPOSED_BOUND:
        log.warning("chi %.3g at or beyond the well-posedness bound %.6g",
                    chi, CHI_WELLPOSED_BOUND)
    return {
        "grid": grid, "chi": chi, "epsilon": epsilon, "n": ns[0],
        "replicas": replicas, "k_list": tuple(k_list), "times": times,
        "seed": inv.seed if inv.seed is not None
        else view.int1("experiment", "seed", 0),
        "out_dir": _output_dir(view, inv),
    }


def _build_potential_diag(inv, view):
    chi = _check_chi(view.float1("experiment", "chi", 0.5))
    eps_list = view.floats("experiment", "epsilon")
    if eps_list is None:
        raise _Bail(2, "potential-diag needs an epsilon list")
    if any(e <= 0.0 for e in eps_list):
        raise _Bail(2, "widths must be positive")
    # mirror the fit preconditions so no table gets built on a doomed run
    if len(eps_list) < 4:
        raise _Bail(2, "need at least 4 widths to fit exponents")
    if max(eps_list) / min(eps_list) < 4.0:
        raise _Bail(2, "widths must span at least two dyadic decades")
    return {
        "chi": chi, "epsilon_list": tuple(eps_list),
        "seed": inv.seed if inv.seed is not None
        else view.int1("experiment", "seed", 0),
        "out_dir": _output_dir(view, inv),
    }


# --------------------------------------------------------------- runners

def _emit_simple(records, spec, command, out_dir):
    """CSV + plots + manifest for the non-sweep compute subcommands."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    if records:
        csv_name = command.replace("-", "_") + ".csv"
        harness.write_records_csv(records, os.path.join(out_dir, csv_name))
        files.append(csv_name)
        for group in harness.curve_groups(records):
            svgplot.line_chart(
                os.path.join(out_dir, group["name"]), group["series"],
                title="%s at t = %g" % (group["stat"], group["t"]),
                xlabel=group["xlabel"], ylabel=group["stat"])
            files.append(group["name"])
    for name in files:
        log.info("wrote %s", os.path.join(out_dir, name))
    return harness.write_manifest(
        out_dir, command, _spec_dict(spec), _spec_digest(spec),
        spec.get("seed", 0), files, "ok" if records else "empty",
        len(records))


def _spec_dict(spec):
    d = dict(spec)
    grid = d.get("grid")
    if isinstance(grid, GridSpec):
        d["grid"] = {"half_width": grid.half_width, "n": grid.n,
                     "dt": grid.dt, "t_end": grid.t_end}
    return d


def _spec_digest(spec):
    d = _spec_dict(spec)
    d.pop("out_dir", None)
    return harness.dict_digest(d)


def _fail_manifest(command, config_dict, digest, seed, out_dir, exc):
    os.makedirs(out_dir, exist_ok=True)
    harness.write_manifest(out_dir, command, config_dict, digest, seed,
                           [], "failed: %s" % exc, 0)


def _run_sweep(inv, config):
    log.info("sweep preset %s over n = %s", config.preset,
             list(config.n_list))
    try:
        records = harness.run_experiment(config)
    except (StabilityError, CouplingError) as exc:
        _fail_manifest("sweep:" + config.preset,
                       harness.config_to_dict(config),
                       harness.config_digest(config), config.seed,
                       config.output_dir, exc)
        print("kschaos: numerical failure: %s" % exc, file=sys.stderr)
        return 3
    manifest = harness.emit_outputs(records, config)
    if manifest["status"] != "ok":
        print("kschaos: sweep produced no records; manifest written",
              file=sys.stderr)
        return 3
    log.info("%d records in %s", len(records), config.output_dir)
    return 0


def _run_pde(inv, spec):
    grid, chi, eps = spec["grid"], spec["chi"], spec["epsilon"]
    command = "pde"
    try:
        checkpoints = evolve(None, grid, chi, eps,
                             checkpoint_times=spec["times"])
    except (StabilityError, CouplingError) as exc:
        _fail_manifest(command, _spec_dict(spec), _spec_digest(spec),
                       spec["seed"], spec["out_dir"], exc)
        print("kschaos: numerical failure: %s" % exc, file=sys.stderr)
        return 3
    h2 = grid.spacing ** 2
    records = []

    def rec(t, stat, value, k=np.nan):
        records.append(MetricRecord(
            experiment="pde", t=t, n=0, epsilon=eps, alpha=np.nan, k=k,
            stat=stat, value=float(value), replicas=1))

    for u, v in checkpoints:
        t = u.time
        rec(t, "mass", u.mass)
        rec(t, "min_u", u.u.min())
        rec(t, "boundary_mass", boundary_mass(u))
        rec(t, "l2_norm", np.sqrt(np.sum(u.u ** 2) * h2), k=2.0)
        rec(t, "sup_u", u.u.max())
        rec(t, "sup_v", v.v.max())
        if chi == 0.0:
            # with the signal off the density follows plain heat flow, so
            # the gap to the closed-form solution isolates solver error
            gap = u.u - heat_reference(grid, t)
            rec(t, "heat_l2", np.sqrt(np.sum(gap ** 2) * h2))
    _emit_simple(records, spec, command, spec["out_dir"])
    return 0


def _run_sim_coupled(inv, spec):
    grid, chi, eps, n = spec["grid"], spec["chi"], spec["epsilon"], spec["n"]
    command = "sim-coupled"
    cfg_dict, digest = _spec_dict(spec), _spec_digest(spec)
    try:
        table = build_table(chi, eps)
        results = run_coupled_batch(
            grid, chi, eps, n, spec["seed"], range(spec["replicas"]),
            checkpoint_times=spec["times"], systems=SYSTEMS, table=table,
            store_positions=False)
    except (StabilityError, CouplingError) as exc:
        _fail_manifest(command, cfg_dict, digest, spec["seed"],
                       spec["out_dir"], exc)
        print("kschaos: numerical failure: %s" % exc, file=sys.stderr)
        return 3
    pairs = [pair_name(a, b) for a, b in
             ((SYSTEMS[0], SYSTEMS[1]), (SYSTEMS[1], SYSTEMS[2]),
              (SYSTEMS[0], SYSTEMS[2]))]
    records = []
    for j, t in enumerate(spec["times"]):
        for pair in pairs:
            errs = [r.checkpoints[j].errors[pair] for r in results]
            sups = [max_norm(e) for e in errs]
            records.append(MetricRecord(
                experiment="sim_coupled", t=t, n=n, epsilon=eps,
                alpha=np.nan, k=np.nan, stat="minf_median:" + pair,
                value=float(np.median(sups)), replicas=len(errs)))
            records.append(MetricRecord(
                experiment="sim_coupled", t=t, n=n, epsilon=eps,
                alpha=np.nan, k=np.nan, stat="minf_max:" + pair,
                value=float(np.max(sups)), replicas=len(errs)))
            for k in spec["k_list"]:
                vals = [power_mean(e, 2.0 * k) for e in errs]
                records.append(MetricRecord(
                    experiment="sim_coupled", t=t, n=n, epsilon=eps,
                    alpha=np.nan, k=k, stat="m2k_median:" + pair,
                    value=float(np.median(vals)), replicas=len(errs)))
    _emit_simple(records, spec, command, spec["out_dir"])
    return 0


def _run_potential_diag(inv, spec):
    diag = norm_scaling_diagnostic(spec["chi"], spec["epsilon_list"])
    records = []
    for stat in ("sup_phi", "sup_grad", "sup_hess"):
        for eps, value in zip(diag["eps"], diag[stat]):
            records.append(MetricRecord(
                experiment="potential_diag", t=0.0, n=0,
                epsilon=float(eps), alpha=np.nan, k=np.nan, stat=stat,
                value=float(value), replicas=1))
    for name in ("s0", "s1", "s2"):
        se = diag[name + "_stderr"]
        records.append(MetricRecord(
            experiment="potential_diag", t=0.0, n=0, epsilon=np.nan,
            alpha=np.nan, k=np.nan, stat=name, value=float(diag[name]),
            replicas=len(spec["epsilon_list"]),
            ci_lo=float(diag[name] - se) if np.isfinite(se) else None,
            ci_hi=float(diag[name] + se) if np.isfinite(se) else None))
    _emit_simple(records, spec, "potential-diag", spec["out_dir"])
    return 0


# ------------------------------------------------------------------ plot

def _read_text(path):
    try:
        with open(path, newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise _Bail(4, "%s: %s" % (path, exc))


def _plot_records(inv, path, out_dir):
    try:
        records = harness.load_records(path)
    except ConfigurationError as exc:
        raise _Bail(4, "%s: %s" % (path, exc))
    if not records:
        raise _Bail(4, "%s: no data rows" % path)
    manifest_path = os.path.join(os.path.dirname(path) or ".",
                                 "manifest.json")
    if os.path.exists(manifest_path):
        try:
            with open(manifest_path) as fh:
                manifest = json.load(fh)
        except (OSError, ValueError):
            manifest = {}
        beta = (manifest.get("config") or {}).get("beta")
        if beta is not None:
            try:
                harness.verify_scaling(records, beta=beta)
            except ConfigurationError as exc:
                raise _Bail(4, "%s: %s" % (path, exc))
            log.info("width scaling verified against beta = %g", beta)
    groups = harness.curve_groups(records)
    if not groups:
        raise _Bail(4, "%s: no plottable series" % path)
    os.makedirs(out_dir, exist_ok=True)
    for group in groups:
        target = os.path.join(out_dir, group["name"])
        svgplot.line_chart(
            target, group["series"],
            title="%s at t = %g" % (group["stat"], group["t"]),
            xlabel=group["xlabel"], ylabel=group["stat"])
        log.info("wrote %s", target)
    return 0


def _plot_columns(inv, path, text, out_dir):
    xs, ys = [], []
    labels = ("x", "y")
    lines = text.splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise _Bail(4, "%s line %d: expected two columns"
                        % (path, lineno))
        try:
            xs.append(float(parts[0]))
            ys.append(float(parts[1]))
        except ValueError:
            if lineno == 1 and not xs:
                labels = (parts[0] or "x", parts[1] or "y")
                continue
            raise _Bail(4, "%s line %d: not numeric: %s"
                        % (path, lineno, line.strip()))
    if not xs:
        raise _Bail(4, "%s: no data rows" % path)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(path))[0]
    target = os.path.join(out_dir, stem + ".svg")
    svgplot.line_chart(target, [svgplot.Series(labels[1], xs, ys)],
                       title=stem, xlabel=labels[0], ylabel=labels[1])
    log.info("wrote %s", target)
    return 0


def _run_plot(inv):
    path = inv.csv
    text = _read_text(path)
    out_dir = inv.output or (os.path.dirname(path) or ".")
    first = text.splitlines()[0] if text.splitlines() else ""
    if tuple(p.strip() for p in first.split(",")) == harness.CSV_HEADER:
        return _plot_records(inv, path, out_dir)
    return _plot_columns(inv, path, text, out_dir)


# ------------------------------------------------------------- dispatch

def dispatch(inv, payload):
    if inv.subcommand == "plot":
        return _run_plot(inv)
    runner = {
        "sweep": _run_sweep,
        "lln-diag": _run_sweep,
        "sim-coupled": _run_sim_coupled,
        "pde": _run_pde,
        "potential-diag": _run_potential_diag,
    }[inv.subcommand]
    try:
        return runner(inv, payload)
    except OSError as exc:
        print("kschaos: i/o error: %s" % exc, file=sys.stderr)
        return 4


def main(argv=None):
    try:
        inv, payload = parse_and_validate(argv)
        return dispatch(inv, payload)
    except _Bail as exc:
        print("kschaos: %s" % exc, file=sys.stderr)
        return exc.code
    except SystemExit as exc:
        # argparse exits on usage errors and --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
