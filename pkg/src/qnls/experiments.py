"""Scenario runners: run configurations, phase scans, decay and blowup-rate fits."""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import functionals as fn
from .dynamics import IntegratorConfig, RunOutcome, evolve
from .model import (GaussianRecipe, GridSpec, Model, check_C2, exponents, make_initial_data,
                    parse_initial, parse_nonlinearity, parse_potential)


class InsufficientResolution(ValueError):
    pass


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending ``section.key``."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

DEFAULTS: Dict[str, Dict[str, str]] = {
    "model": {"nonlinearity": "zero", "potential": "none"},
    "grid": {"N": "3", "extent": "8", "points": "48", "radial": "false"},
    "initial": {"data": "gaussian:A=1,sigma=1,beta=0", "boundary_tol": "1e-8"},
    "integrator": {},
    "run": {"t_final": "1", "sample_every": "0.1", "snapshots": "", "dealias": "auto"},
}

_INT_FIELDS = {"max_steps"}
_FLOAT_OR_NONE = {"blowup_threshold"}


def _bool(text, key):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError("expected a boolean, got %r" % text, key)


def _float(text, key):
    try:
        return float(text)
    except ValueError:
        raise ConfigError("expected a number, got %r" % text, key) from None


@dataclass
class RunConfig:
    """Resolved flat configuration: ``{section: {key: text}}``.

    Values stay as text so that the configuration hashes and round-trips
    exactly; :meth:`build` turns them into model objects.
    """

    sections: Dict[str, Dict[str, str]]

    @classmethod
    def from_sections(cls, sections):
        merged = copy.deepcopy(DEFAULTS)
        for sec, items in sections.items():
            if sec == "sweep":
                merged.setdefault("sweep", {})
            elif sec not in merged:
                raise ConfigError("unknown section [%s]" % sec, sec)
            for k, v in items.items():
                merged.setdefault(sec, {})[k] = str(v).strip()
        return cls(merged)

    def get(self, sec, key):
        return self.sections.get(sec, {}).get(key)

    def with_values(self, values: Dict[str, object]):
        """Copy with ``{name}`` placeholders substituted and ``section.key`` overrides applied."""
        out = copy.deepcopy(self.sections)
        out.pop("sweep", None)
        subs = {k: repr(float(v)) if isinstance(v, (int, float)) else str(v) for k, v in values.items()}
        for sec, items in out.items():
            for k, v in items.items():
                for name, val in subs.items():
                    v = v.replace("{%s}" % name, val)
                items[k] = v
        for name, val in subs.items():
            if "." in name:
                sec, key = name.split(".", 1)
                out.setdefault(sec, {})[key] = val
        return RunConfig(out)

    def canonical(self):
        return json.dumps(self.sections, sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def sweep_axes(self) -> Dict[str, List[float]]:
        axes = {}
        for name, text in self.sections.get("sweep", {}).items():
            vals = [v.strip() for v in text.split(",") if v.strip()]
            if not vals:
                raise ConfigError("sweep axis %r is empty" % name, "sweep." + name)
            axes[name] = [_float(v, "sweep." + name) for v in vals]
        return axes

    def build(self):
        """Return ``(model, grid, recipe, integrator_config, run_options)``."""
        s = self.sections
        for sec in ("model", "grid", "initial", "run"):
            for k, v in s[sec].items():
                if "{" in v:
                    raise ConfigError("unresolved placeholder in %r" % v, "%s.%s" % (sec, k))
        try:
            nl = parse_nonlinearity(s["model"]["nonlinearity"])
        except ValueError as exc:
            raise ConfigError(str(exc), "model.nonlinearity") from None
        try:
            W = parse_potential(s["model"]["potential"])
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc), "model.potential") from None
        unknown = set(s["model"]) - {"nonlinearity", "potential"}
        if unknown:
            raise ConfigError("unknown key %r" % sorted(unknown)[0], "model." + sorted(unknown)[0])
        g = s["grid"]
        unknown = set(g) - {"N", "extent", "points", "radial"}
        if unknown:
            raise ConfigError("unknown key %r" % sorted(unknown)[0], "grid." + sorted(unknown)[0])
        try:
            N = int(g["N"])
            points = int(g["points"])
        except ValueError:
            raise ConfigError("N and points must be integers", "grid.points") from None
        try:
            grid = GridSpec(N, _float(g["extent"], "grid.extent"), points,
                            _bool(g.get("radial", "false"), "grid.radial"))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), "grid.points") from None
        try:
            recipe = parse_initial(s["initial"]["data"])
        except ValueError as exc:
            raise ConfigError(str(exc), "initial.data") from None
        kw = {}
        fields_ = IntegratorConfig.__dataclass_fields__
        for k, v in s["integrator"].items():
            if k not in fields_:
                raise ConfigError("unknown integrator key %r" % k, "integrator." + k)
            if k in _INT_FIELDS:
                kw[k] = int(_float(v, "integrator." + k))
            elif k in _FLOAT_OR_NONE and v.lower() in ("", "none"):
                kw[k] = None
            else:
                kw[k] = _float(v, "integrator." + k)
        try:
            icfg = IntegratorConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc), "integrator") from None
        r = s["run"]
        unknown = set(r) - {"t_final", "sample_every", "snapshots", "dealias"}
        if unknown:
            raise ConfigError("unknown key %r" % sorted(unknown)[0], "run." + sorted(unknown)[0])
        t_final = _float(r["t_final"], "run.t_final")
        sample_every = _float(r["sample_every"], "run.sample_every")
        if not t_final > 0:
            raise ConfigError("t_final must be positive", "run.t_final")
        if not sample_every > 0:
            raise ConfigError("sample_every must be positive", "run.sample_every")
        snaps = [_float(v, "run.snapshots") for v in r.get("snapshots", "").split(",") if v.strip()]
        dl = r.get("dealias", "auto").strip().lower()
        dealias = None if dl == "auto" else _bool(dl, "run.dealias")
        btol = _float(s["initial"].get("boundary_tol", "1e-8"), "initial.boundary_tol")
        opts = {"t_final": t_final, "sample_every": sample_every, "snapshots": snaps,
                "dealias": dealias, "boundary_tol": btol}
        return Model(nl, W), grid, recipe, icfg, opts


@dataclass
class RunResult:
    config: RunConfig
    outcome: RunOutcome
    records: List[fn.DiagnosticsRecord]
    initial: dict
    exponent_report: Optional[dict]
    snapshots: List = field(default_factory=list)


def initial_summary(model, grid, u, ws):
    """Scalar diagnostics of the initial field recorded in manifests."""
    rec = fn.diagnostics(u, 0.0, model, ws)
    return {"energy": rec.energy, "mass": rec.mass, "J": rec.J, "y": rec.y,
            "detector": rec.detector, "Q": rec.Q}


def safe_exponents(model, N):
    try:
        return exponents(N, model.nl).as_dict()
    except ValueError:
        return None


def execute(cfg: RunConfig, snapshot_cb=None) -> RunResult:
    """Build and integrate one configuration.

    ``snapshot_cb(FieldState)`` is called at every requested snapshot time.
    """
    model, grid, recipe, icfg, opts = cfg.build()
    state, _ = make_initial_data(grid, recipe, model.nl, boundary_tol=opts["boundary_tol"])
    ws = fn.workspace_for(model, grid, dealias=opts["dealias"])
    init = initial_summary(model, grid, state.u, ws)
    snaps = sorted(opts["snapshots"])
    taken = []

    def cb(rec, st):
        for ts in snaps:
            if ts not in taken and abs(st.t - ts) <= 1e-9 * max(1.0, ts):
                taken.append(ts)
                if snapshot_cb is not None:
                    snapshot_cb(st)

    outcome, records = evolve(state, model, icfg, opts["t_final"], opts["sample_every"], [cb], ws=ws)
    return RunResult(cfg, outcome, records, init, safe_exponents(model, grid.N), taken)


# ---------------------------------------------------------------------------
# phase scans
# ---------------------------------------------------------------------------

VERDICT_GLOBAL = "global-indicative"
VERDICT_BLOWUP = "blowup_detected"
VERDICT_UNDECIDED = "undecided"


@dataclass
class ScenarioSpec:
    """A base configuration plus sweep axes.

    Axis names are either ``{name}`` placeholders used in the base
    configuration text or ``section.key`` overrides. A point is
    ``global-indicative`` when the run completes with the detector never
    above ``detector_bound`` times its initial value.
    """

    name: str
    base: RunConfig
    axes: Dict[str, List[float]]
    detector_bound: float = 2.0
    output: Optional[str] = None

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("scenario needs at least one sweep axis", "sweep")
        for k, v in self.axes.items():
            if len(v) == 0:
                raise ConfigError("sweep axis %r is empty" % k, "sweep." + k)
        if not self.detector_bound > 1:
            raise ConfigError("detector bound must exceed 1", "sweep")

    def points(self) -> List[Dict[str, float]]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]


def classify(outcome: RunOutcome, records, bound):
    if outcome.verdict == "blowup_detected":
        return VERDICT_BLOWUP
    if outcome.verdict == "completed":
        peak = max(r.detector for r in records)
        if peak <= bound * records[0].detector:
            return VERDICT_GLOBAL
    return VERDICT_UNDECIDED


def run_point(args):
    """Run one sweep point; returns a plain dict so results pickle cheaply."""
    index, values, base_sections, bound = args
    cfg = RunConfig(base_sections).with_values(values)
    row = {"index": index, "values": values, "config": cfg.sections, "config_hash": cfg.hash()}
    try:
        model, grid, recipe, icfg, opts = cfg.build()
        res = execute(cfg)
    except Exception as exc:  # recorded per point; the scan continues
        row.update(verdict=VERDICT_UNDECIDED, run_verdict="error", reason="%s: %s" % (type(exc).__name__, exc),
                   records=[], initial=None, t_end=0.0, exponents=None, C2=None, detector_max_ratio=math.nan)
        return row
    ex = res.exponent_report
    try:
        k = model.nl.k
        c2 = check_C2(model.W, k, grid.N).holds if not model.W.is_none else None
    except (ValueError, NotImplementedError):
        c2 = None
    recs = res.records
    row.update(
        verdict=classify(res.outcome, recs, bound),
        run_verdict=res.outcome.verdict,
        reason=res.outcome.reason,
        t_end=res.outcome.t_end,
        initial=res.initial,
        exponents=ex,
        q_c=None if ex is None else ex["q_c"],
        p_c=None if ex is None else ex["p_c"],
        C2=c2,
        detector_max_ratio=max(r.detector for r in recs) / recs[0].detector,
        records=[r.row() for r in recs],
        outcome=res.outcome.as_dict(),
    )
    return row


def run_phase_scan(spec: ScenarioSpec, workers: int = 1):
    """Evaluate every sweep point; results are sorted by sweep index.

    Worker count only affects scheduling; each point is an independent
    deterministic run.
    """
    jobs = [(i, pt, spec.base.sections, spec.detector_bound) for i, pt in enumerate(spec.points())]
    if workers <= 1:
        rows = [run_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_point, jobs))
    rows.sort(key=lambda r: r["index"])
    return rows


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    """Log-log least-squares fit ``q ≈ C t^(-exponent)`` on ``[t0, t1]``.

    For decay fits ``C_fit`` is the smallest constant with
    ``q ≤ C_fit t^(-expected)`` on the window (``None`` without an expected
    exponent). For blowup fits ``exponent`` is the fitted power of
    ``(T_est - t)``, ``constant`` the median of ``detector·(T_est-t)²``,
    and ``flag`` reports ``min/median ≥ 0.5``.
    """

    t0: float
    t1: float
    exponent: float
    constant: float
    residual_rms: float
    samples: int
    expected: Optional[float] = None
    C_fit: Optional[float] = None
    T_est: Optional[float] = None
    flag: Optional[bool] = None

    def as_dict(self):
        return asdict(self)


def _series(records, quantity):
    if isinstance(records, tuple) and len(records) == 2:
        t, q = records
        return np.asarray(t, dtype=float), np.asarray(q, dtype=float)
    t = np.array([r.t for r in records])
    if callable(quantity):
        q = np.array([quantity(r) for r in records])
    elif quantity == "decay":
        q = np.array([r.grad_h_sq + abs(r.hartree) for r in records])
    else:
        q = np.array([getattr(r, quantity) for r in records])
    return t, q


def fit_decay(records, quantity="decay", window=(1.0, None), expected=None) -> RateFit:
    """Fit the decay exponent of ``quantity`` (default ``∫|∇h|² + |∫(W∗ρ)ρ|``).

    ``records`` is a list of diagnostics records or a ``(t, values)`` pair.
    """
    t, q = _series(records, quantity)
    t0 = window[0]
    t1 = t[-1] if window[1] is None else window[1]
    if t0 < 1.0:
        raise ValueError("decay windows start at t >= 1")
    if not t1 > t0:
        raise ValueError("window end must exceed its start")
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if sel.sum() < 2:
        raise InsufficientResolution("fewer than two samples in the window")
    tw, qw = t[sel], q[sel]
    if np.any(qw <= 0) or not np.all(np.isfinite(qw)):
        raise ValueError("quantity must be positive on the fit window")
    X = np.column_stack([np.ones_like(tw), -np.log(tw)])
    coef, *_ = np.linalg.lstsq(X, np.log(qw), rcond=None)
    resid = np.log(qw) - X @ coef
    C_fit = None
    if expected is not None:
        C_fit = float(np.max(qw * tw ** expected))
    return RateFit(float(tw[0]), float(tw[-1]), float(coef[1]), float(math.exp(coef[0])),
                   float(np.sqrt(np.mean(resid ** 2))), int(sel.sum()), expected, C_fit)


@dataclass(frozen=True)
class KineticReport:
    gap_final: float
    relative_gap: float
    decreasing: bool
    slope: float


def check_asymptotic_kinetic(records) -> KineticReport:
    """Distance of ``∫|∇u|²`` from ``2E(u₀)`` and its trend over the last half of the run."""
    t = np.array([r.t for r in records])
    G = np.array([r.grad_u_sq for r in records])
    E0 = records[0].energy
    gap = np.abs(G - 2.0 * E0)
    scale = max(abs(2.0 * E0), np.finfo(float).tiny)
    half = t >= 0.5 * (t[0] + t[-1])
    if half.sum() >= 2:
        slope = float(np.polyfit(t[half], gap[half] / scale, 1)[0])
    else:
        slope = 0.0
    decreasing = bool(slope < 0 and gap[half][-1] < gap[half][0])
    return KineticReport(float(gap[-1]), float(gap[-1] / scale), decreasing, slope)


def estimate_blowup_time(t, det):
    """Zero of the straight-line fit of ``det^(-1/2)`` against ``t``."""
    y = 1.0 / np.sqrt(det)
    slope, icpt = np.polyfit(t, y, 1)
    if not slope < 0:
        raise InsufficientResolution("detector^(-1/2) is not decreasing")
    return float(-icpt / slope)


def fit_blowup_rate(records, T_est=None, min_samples=8) -> RateFit:
    """Test ``detector ≥ C/(T-t)²`` over the last resolved decade of the detector.

    ``T_est`` defaults to :func:`estimate_blowup_time` on the same window.
    """
    if isinstance(records, tuple):
        t, det = (np.asarray(a, dtype=float) for a in records)
    else:
        t = np.array([r.t for r in records])
        det = np.array([r.detector for r in records])
    sel = det >= det[-1] / 10.0
    # the resolved decade is the trailing run of samples above det_end/10
    start = len(det)
    while start > 0 and sel[start - 1]:
        start -= 1
    tw, dw = t[start:], det[start:]
    if len(tw) < min_samples:
        raise InsufficientResolution("only %d resolved samples (need %d)" % (len(tw), min_samples))
    if T_est is None:
        T_est = estimate_blowup_time(tw, dw)
    gap = T_est - tw
    ok = gap > 0
    if ok.sum() < 2:
        raise InsufficientResolution("T_est does not lie beyond the samples")
    tw, dw, gap = tw[ok], dw[ok], gap[ok]
    ratio = dw * gap ** 2
    med = float(np.median(ratio))
    X = np.column_stack([np.ones_like(gap), -np.log(gap)])
    coef, *_ = np.linalg.lstsq(X, np.log(dw), rcond=None)
    resid = np.log(dw) - X @ coef
    flag = bool(np.min(ratio) / med >= 0.5) if med > 0 else False
    return RateFit(float(tw[0]), float(tw[-1]), float(coef[1]), med, float(np.sqrt(np.mean(resid ** 2))),
                   len(tw), 2.0, None, float(T_est), flag)


# ---------------------------------------------------------------------------
# helpers for blowup presets
# ---------------------------------------------------------------------------

def scan_amplitude_negative_energy(model, grid, sigma, beta, A0=0.5, factor=1.1, max_iter=200):
    """Smallest ``A = A0·factor^k`` with ``E(u₀) < 0`` for ``A e^{-|x|²/σ²} e^{iβ|x|²}``.

    Returns ``(A, E)``; raises ``ValueError`` when no amplitude in range works.
    """
    ws = fn.workspace_for(model, grid)
    A = A0
    for _ in range(max_iter):
        u = GaussianRecipe(A, sigma, beta).sample(grid)
        E = fn.energy(u, model, ws)
        if E < 0:
            return A, E
        A *= factor
    raise ValueError("no amplitude below %g gives negative energy" % A)
