"""Command line: ``qnls run | sweep | exponents | verify | presets``."""
from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import functools
import json
import math
import os
import shutil
import struct
import sys
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, _kernels
from .experiments import (ConfigError, RunConfig, ScenarioSpec, execute, run_phase_scan)
from .functionals import CSV_FIELDS
from .model import FieldState, GridSpec, NonlinearitySpec, exponents

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2
SNAPSHOT_MAGIC = b"QNLS1"
SNAPSHOT_VERSION = 1
SNAPSHOT_VERSION_RADIAL = 2
_HEADER = struct.Struct("<5sHBIdd")
GRID_FIELDS_TAIL = ("verdict", "run_verdict", "t_end", "energy0", "y0", "detector_max_ratio",
                    "q_c", "p_c", "C2", "config_hash")


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

class ConfigFileError(ValueError):
    def __init__(self, path, line, message):
        where = "%s:%d" % (path, line) if line else str(path)
        super().__init__("%s: %s" % (where, message))


def preset_names():
    return sorted(p.name[:-4] for p in resources.files("qnls.presets").iterdir() if p.name.endswith(".ini"))


def _resolve_config_path(name):
    p = Path(name)
    if p.exists():
        return p
    cand = resources.files("qnls.presets") / (name + ".ini")
    if cand.is_file():
        return Path(str(cand))
    raise ConfigFileError(name, 0, "no such config file or preset (presets: %s)" % ", ".join(preset_names()))


def _key_lines(text):
    """``{(section, key): line}`` for locating semantic errors."""
    out, sec = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip()
            out.setdefault((sec, None), i)
        elif s and not s.startswith(("#", ";")) and "=" in s and sec is not None:
            out[(sec, s.split("=", 1)[0].strip())] = i
    return out


def load_config(name, overrides=()):
    """Parse an INI file, preset name or run manifest.

    Returns ``(RunConfig, name, key_lines, path)``. Errors raise
    :class:`ConfigFileError` carrying the offending line.
    """
    path = _resolve_config_path(name)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(path, 0, "cannot read: %s" % exc) from None
    if path.suffix == ".json":
        try:
            sections = json.loads(text)["config"]
        except (ValueError, KeyError) as exc:
            raise ConfigFileError(path, 0, "not a run manifest: %s" % exc) from None
        lines = {}
    else:
        cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=None)
        cp.optionxform = str
        try:
            cp.read_string(text, source=str(path))
        except configparser.ParsingError as exc:
            line = exc.errors[0][0] if exc.errors else 0
            src = text.splitlines()[line - 1].strip() if 0 < line <= len(text.splitlines()) else ""
            raise ConfigFileError(path, line, "expected 'key = value' or '[section]', got %r" % src) from None
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigFileError(path, exc.lineno, "key outside of any [section]") from None
        except configparser.DuplicateOptionError as exc:
            raise ConfigFileError(path, exc.lineno, "duplicate key %r" % exc.option) from None
        except configparser.DuplicateSectionError as exc:
            raise ConfigFileError(path, exc.lineno, "duplicate section [%s]" % exc.section) from None
        except configparser.Error as exc:
            raise ConfigFileError(path, 0, str(exc)) from None
        sections = {s: dict(cp[s]) for s in cp.sections()}
        lines = _key_lines(text)
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigFileError("--set", 0, "override must look like section.key=value, got %r" % ov)
        k, v = ov.split("=", 1)
        sec, key = k.strip().split(".", 1)
        sections.setdefault(sec, {})[key] = v.strip()
    try:
        cfg = RunConfig.from_sections(sections)
        cfg.sweep_axes()
    except ConfigError as exc:
        raise ConfigFileError(path, _line_for(lines, exc.key), str(exc)) from None
    return cfg, path.stem, lines, path


def _line_for(lines, key):
    if not key:
        return 0
    if "." in key:
        sec, k = key.split(".", 1)
        return lines.get((sec, k)) or lines.get((sec, None)) or 0
    return lines.get((key, None)) or 0


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def fmt(x):
    """Shortest round-trip text for a float."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_series(path, rows):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(CSV_FIELDS) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")


def write_snapshot(path, state: FieldState):
    """Binary snapshot: header then row-major little-endian interleaved re/im float64."""
    g = state.grid
    version = SNAPSHOT_VERSION_RADIAL if g.radial else SNAPSHOT_VERSION
    u = np.ascontiguousarray(state.u, dtype=np.complex128)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(SNAPSHOT_MAGIC, version, g.N, g.points, float(g.extent), float(state.t)))
        f.write(u.view(np.float64).astype("<f8", copy=False).tobytes(order="C"))


def read_snapshot(path) -> FieldState:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("snapshot truncated")
    magic, version, N, points, extent, t = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError("not a QNLS1 snapshot")
    if version not in (SNAPSHOT_VERSION, SNAPSHOT_VERSION_RADIAL):
        raise ValueError("unsupported snapshot version %d" % version)
    grid = GridSpec(N, extent, points, radial=version == SNAPSHOT_VERSION_RADIAL)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * grid.size:
        raise ValueError("snapshot payload has %d values, expected %d" % (body.size, 2 * grid.size))
    u = body.astype(np.float64).view(np.complex128).reshape(grid.shape)
    return FieldState(grid, u.copy(), t)


def _versions():
    import numpy
    import scipy
    return {"qnls": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "backend": _kernels.backend_name()}


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _output_root():
    return Path(os.environ.get("QNLS_OUT", "qnls_out"))


def _prepare_dir(path: Path, force: bool):
    if path.exists():
        if not force:
            raise FileExistsError("output directory %s exists (use --force)" % path)
        shutil.rmtree(path)
    path.mkdir(parents=True)


def _manifest(cfg, res, started, finished, snapshots):
    model, grid, recipe, icfg, opts = cfg.build()
    return {
        "format": "qnls-manifest/1",
        "config_hash": cfg.hash(),
        "config": cfg.sections,
        "model": {"nonlinearity": model.nl.preset_string(), "potential": model.W.preset_string(),
                  "initial": cfg.get("initial", "data")},
        "grid": {"N": grid.N, "extent": grid.extent, "points": grid.points, "radial": grid.radial},
        "integrator": icfg.as_dict(),
        "run": {k: opts[k] for k in ("t_final", "sample_every", "snapshots", "dealias")},
        "tolerances": {**{k: v for k, v in icfg.as_dict().items()
                          if k in ("drift_tol", "local_tol", "boundary_tol", "blowup_ratio",
                                   "blowup_threshold")},
                       "initial_boundary_tol": opts["boundary_tol"]},
        "exponents": res.exponent_report,
        "initial": res.initial,
        "started": started,
        "finished": finished,
        "verdict": res.outcome.verdict,
        "outcome": res.outcome.as_dict(),
        "artifacts": {"series": "series.csv", "snapshots": snapshots},
        "versions": _versions(),
    }


def run_to_dir(cfg: RunConfig, out: Path):
    """Execute ``cfg`` writing manifest, series and snapshots into ``out``."""
    snaps = []

    def snap(st):
        name = "snap_%04d.qnls" % len(snaps)
        write_snapshot(out / name, st)
        snaps.append({"file": name, "t": st.t})

    started = _now()
    res = execute(cfg, snapshot_cb=snap)
    finished = _now()
    write_series(out / "series.csv", [r.row() for r in res.records])
    man = _manifest(cfg, res, started, finished, snaps)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return res, man


# ---------------------------------------------------------------------------
# verification suites
# ---------------------------------------------------------------------------

def _check(name, value, tol):
    return {"check": name, "value": float(value), "tol": float(tol), "ok": bool(value < tol)}


def suite_spectral():
    from .model import PowerLawPotential
    from .spectral import SpectralWorkspace, direct_convolution_oracle
    out = []
    g = GridSpec(3, 4.0, 8)
    W = PowerLawPotential(1.0, 4.0)
    ws = SpectralWorkspace(g, W)
    rng = np.random.default_rng(0)
    rho = rng.random(g.shape)
    kern, _ = W.kernel_arrays(g)
    d = np.max(np.abs(ws.hartree_convolution(rho) - direct_convolution_oracle(kern, rho, g.cell)))
    out.append(_check("hartree convolution vs direct sum (8^3)", d, 1e-10))
    g1 = GridSpec(1, 12.0, 256)
    ws1 = SpectralWorkspace(g1)
    x = g1.axis()
    f = np.exp(-x ** 2)
    lap = ws1.laplacian(f)
    out.append(_check("laplacian of a Gaussian", np.max(np.abs(lap - (4 * x ** 2 - 2) * f)), 1e-10))
    out.append(_check("Parseval", abs(ws1.parseval_sum(f) - ws1.integrate(f * f)), 1e-12))
    return out


def _free_run():
    from .dynamics import IntegratorConfig, evolve
    from .model import GaussianRecipe, Model, make_initial_data
    g = GridSpec(1, 12.0, 256)
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 1.0, 0.0))
    cfg = IntegratorConfig(boundary_tol=math.inf)
    return g, evolve(st, Model(), cfg, 1.0, 0.1)


@functools.lru_cache(maxsize=1)
def _full_run_1d():
    from .dynamics import IntegratorConfig, evolve
    from .model import GaussianPotential, GaussianRecipe, Model, make_initial_data
    g = GridSpec(1, 32.0, 512)
    model = Model(NonlinearitySpec.power(1.0, 0.6), GaussianPotential(1.0, 2.0))
    st, _ = make_initial_data(g, GaussianRecipe(1.0, 2.0, 0.0))
    return evolve(st, model, IntegratorConfig(), 1.0, 0.02)


def suite_conservation():
    g, (out_free, rec_free) = _free_run()
    x = g.axis()
    out = []
    err = 0.0
    for n in range(-5, 6):
        z = 1 - 4j * 1.0
        err = err + z ** -0.5 * np.exp(-(x + 24 * n) ** 2 / z)
    l2 = math.sqrt(np.sum(np.abs(out_free.state.u - err) ** 2) * g.dx)
    out.append(_check("free Gaussian vs closed form (L2)", l2, 1e-6))
    M0, E0 = rec_free[0].mass, rec_free[0].energy
    out.append(_check("free mass drift", max(abs(r.mass - M0) for r in rec_free) / M0, 1e-10))
    out.append(_check("free energy drift", max(abs(r.energy - E0) for r in rec_free) / abs(E0), 1e-10))
    oc, rec = _full_run_1d()
    M0, E0 = rec[0].mass, rec[0].energy
    out.append(_check("full model mass drift (N=1)", max(abs(r.mass - M0) for r in rec) / M0, 1e-8))
    out.append(_check("full model energy drift (N=1)", max(abs(r.energy - E0) for r in rec) / abs(E0), 1e-6))
    out.append(_check("full model run completed", 0.0 if oc.verdict == "completed" else 1.0, 0.5))
    return out


def virial_residuals(records):
    """Centred-difference residuals ``|J' + 4y|/max|4y|`` and ``|y' + Q|/max|Q|``."""
    t = np.array([r.t for r in records])
    J = np.array([r.J for r in records])
    y = np.array([r.y for r in records])
    Q = np.array([r.Q for r in records])
    dJ = (J[2:] - J[:-2]) / (t[2:] - t[:-2])
    dy = (y[2:] - y[:-2]) / (t[2:] - t[:-2])
    r1 = np.max(np.abs(dJ + 4 * y[1:-1])) / max(np.max(np.abs(4 * y)), np.finfo(float).tiny)
    r2 = np.max(np.abs(dy + Q[1:-1])) / max(np.max(np.abs(Q)), np.finfo(float).tiny)
    return float(r1), float(r2)


def suite_virial():
    oc, rec = _full_run_1d()
    r1, r2 = virial_residuals(rec)
    return [_check("dJ/dt + 4y (N=1)", r1, 1e-3), _check("dy/dt + Q (N=1)", r2, 1e-2)]


def suite_pseudoconformal():
    oc, rec = _full_run_1d()
    P0 = abs(rec[0].J)
    out = [_check("P residual at t=0", abs(rec[0].P_residual), 1e-300),
           _check("max |P residual|/P(0) (N=1)", max(abs(r.P_residual) for r in rec) / P0, 1e-3)]
    return out


SUITES = {"spectral": suite_spectral, "conservation": suite_conservation, "virial": suite_virial,
          "pseudoconformal": suite_pseudoconformal}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _run_dir_for(args, name, cfg):
    if args.out:
        return Path(args.out)
    return _output_root() / ("%s-%s" % (name, cfg.hash()[:12]))


def cmd_run(args):
    try:
        cfg, name, lines, path = load_config(args.config, args.set or ())
        if cfg.sweep_axes():
            raise ConfigFileError(path, lines.get(("sweep", None), 0),
                                  "config has sweep axes; use 'qnls sweep'")
        cfg.build()
    except ConfigError as exc:
        print("error: %s" % ConfigFileError(path, _line_for(lines, exc.key), str(exc)), file=sys.stderr)
        return EXIT_CONFIG
    except ConfigFileError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    out = _run_dir_for(args, name, cfg)
    try:
        _prepare_dir(out, args.force)
    except FileExistsError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    try:
        res, man = run_to_dir(cfg, out)
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    oc = res.outcome
    if args.json:
        print(json.dumps({"out": str(out), **man["outcome"], "config_hash": man["config_hash"]}, sort_keys=True))
    else:
        print("verdict   %s" % oc.verdict)
        print("t_end     %s" % fmt(oc.t_end))
        print("detector  %s (initial %s)" % (fmt(oc.detector_value_at_end), fmt(oc.detector_initial)))
        if oc.reason:
            print("reason    %s" % oc.reason)
        print("output    %s" % out)
    return EXIT_OK if oc.verdict in ("completed", "blowup_detected") else EXIT_ABORT


def write_grid(path, axes, rows):
    names = list(axes)
    with open(path, "w", newline="\n") as f:
        f.write(",".join(["index"] + names + list(GRID_FIELDS_TAIL)) + "\n")
        for r in rows:
            init = r.get("initial") or {}
            vals = [r["index"]] + [r["values"][n] for n in names] + [
                r["verdict"], r["run_verdict"], r["t_end"], init.get("energy"), init.get("y"),
                r["detector_max_ratio"], r.get("q_c"), r.get("p_c"), r.get("C2"), r["config_hash"]]
            f.write(",".join(v if isinstance(v, str) else fmt(v) for v in vals) + "\n")


def cmd_sweep(args):
    try:
        cfg, name, lines, path = load_config(args.config, args.set or ())
        axes = cfg.sweep_axes()
        if not axes:
            raise ConfigFileError(path, lines.get(("sweep", None), 0), "no sweep axes in [sweep]")
        spec = ScenarioSpec(name, cfg, axes, detector_bound=args.detector_bound)
        for pt in spec.points():
            cfg.with_values(pt).build()
    except ConfigError as exc:
        print("error: %s" % ConfigFileError(path, _line_for(lines, exc.key), str(exc)), file=sys.stderr)
        return EXIT_CONFIG
    except ConfigFileError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else _output_root() / ("%s-%s" % (name, cfg.hash()[:12]))
    try:
        _prepare_dir(out, args.force)
    except FileExistsError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    rows = run_phase_scan(spec, workers=args.workers)
    errors = 0
    for r in rows:
        d = out / "points" / ("%04d" % r["index"])
        d.mkdir(parents=True)
        write_series(d / "series.csv", r["records"])
        man = {"format": "qnls-manifest/1", "config_hash": r["config_hash"], "config": r["config"],
               "sweep_index": r["index"], "sweep_values": r["values"], "verdict": r["verdict"],
               "run_verdict": r["run_verdict"], "reason": r["reason"], "initial": r["initial"],
               "exponents": r["exponents"], "C2": r["C2"], "outcome": r.get("outcome"),
               "artifacts": {"series": "series.csv"}, "versions": _versions()}
        (d / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        errors += r["run_verdict"] == "error"
    write_grid(out / "grid.csv", axes, rows)
    summary = {"out": str(out), "points": len(rows), "errors": errors,
               "verdicts": {v: sum(r["verdict"] == v for r in rows) for v in sorted({r["verdict"] for r in rows})}}
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        for r in rows:
            print("%4d  %-40s %-18s %s" % (r["index"], json.dumps(r["values"], sort_keys=True), r["verdict"],
                                          r["reason"]))
        print("grid      %s" % (out / "grid.csv"))
    return EXIT_OK if errors == 0 else EXIT_ABORT


def cmd_exponents(args):
    if args.N < 3:
        print("error: 2* = 2N/(N-2) requires N >= 3", file=sys.stderr)
        return EXIT_CONFIG
    try:
        nl = NonlinearitySpec.power(args.b, args.alpha)
        rep = exponents(args.N, nl)
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    d = rep.as_dict()
    if args.json:
        print(json.dumps(d, sort_keys=True))
    else:
        for k, v in d.items():
            print("%-14s %s" % (k, "-" if v is None else fmt(v)))
    return EXIT_OK


def cmd_verify(args):
    names = list(SUITES) if args.suite == "all" else [args.suite]
    if any(n not in SUITES for n in names):
        print("error: unknown suite %r (choose from %s, all)" % (args.suite, ", ".join(SUITES)), file=sys.stderr)
        return EXIT_CONFIG
    results = []
    for n in names:
        for c in SUITES[n]():
            results.append({"suite": n, **c})
    ok = all(r["ok"] for r in results)
    if args.json:
        print(json.dumps({"ok": ok, "checks": results}, sort_keys=True))
    else:
        for r in results:
            print("%-16s %-44s %-24s %-8s %s" % (r["suite"], r["check"], fmt(r["value"]), fmt(r["tol"]),
                                                 "PASS" if r["ok"] else "FAIL"))
    return EXIT_OK if ok else EXIT_ABORT


def cmd_presets(args):
    names = preset_names()
    if args.json:
        print(json.dumps(names))
    else:
        print("\n".join(names))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="qnls", description="Quasilinear Schrödinger-Hartree laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="integrate one configuration")
    r.add_argument("config", help="INI file, preset name or manifest.json")
    r.add_argument("--out", help="output directory (default $QNLS_OUT/<name>-<hash>)")
    r.add_argument("--force", action="store_true", help="replace an existing output directory")
    r.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    r.add_argument("--json", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over its [sweep] axes")
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--force", action="store_true")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--detector-bound", type=float, default=2.0,
                   help="global-indicative if the detector stays below this multiple of its initial value")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("exponents", help="print watershed and Sobolev-like exponents")
    e.add_argument("--N", type=int, default=3)
    e.add_argument("--alpha", type=float, default=0.5)
    e.add_argument("--b", type=float, default=0.0)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_exponents)

    v = sub.add_parser("verify", help="run an oracle/invariant suite")
    v.add_argument("suite", help="spectral, conservation, virial, pseudoconformal or all")
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_verify)

    pr = sub.add_parser("presets", help="list shipped scenario presets")
    pr.add_argument("--json", action="store_true")
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
