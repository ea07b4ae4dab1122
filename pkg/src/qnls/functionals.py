"""Functionals of a field: conserved quantities, virial terms, pseudo-conformal
residuals, blowup-time bound, Sobolev constant and the constrained infimum d_I."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as sint
from scipy import optimize

from . import _kernels
from .model import (Model, PowerLawPotential, RingRecipe, UnsupportedDimension, sobolev_star,
                    sphere_area)
from .spectral import make_workspace


class NotApplicable(ValueError):
    pass


class NoConstraintCrossing(RuntimeError):
    pass


CSV_FIELDS = ("t", "mass", "energy", "J", "y", "grad_u_sq", "grad_h_sq", "hartree", "Q",
              "theta", "P_residual", "dt")


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    energy: float
    J: float
    y: float
    grad_u_sq: float
    grad_h_sq: float
    hartree: float
    Q: float
    theta: float
    P_residual: float = 0.0
    dt: float = 0.0
    # not part of the CSV schema
    xgrad_hartree: float = field(default=0.0, repr=False)
    quasi_K: float = field(default=0.0, repr=False)

    @property
    def detector(self):
        """``∫|∇u|² + ∫|∇h(|u|²)|²``."""
        return self.grad_u_sq + self.grad_h_sq

    def row(self):
        return [getattr(self, f) for f in CSV_FIELDS]


def workspace_for(model: Model, grid, dealias=None, workers=1):
    """Workspace carrying ``model.W``; de-aliasing defaults to on for ``alpha >= 1``."""
    if dealias is None:
        dealias = (not model.nl.is_zero) and model.nl.alpha >= 1.0
    return make_workspace(grid, model.W, dealias=dealias, workers=workers)


@dataclass
class _Pieces:
    rho: np.ndarray
    mass: float
    G: float
    H: float
    hartree: float
    X: float
    K: float
    ql_theta: float


def _abs_grad_sq(u, ws, rho):
    """Pointwise ``|∇|u||² = Σ_d (Re ū ∂_d u)² / |u|²`` (zero at vacuum)."""
    acc = np.zeros(ws.grid.shape)
    for g in ws.gradient(u):
        re = (np.conj(u) * g).real
        acc += re * re
    out = np.zeros_like(acc)
    pos = rho > 0
    out[pos] = acc[pos] / rho[pos]
    return out


def _pieces(u, model, ws, need_virial=True):
    b, alpha = model.nl.coeffs
    eps = model.nl.eps_floor
    rho, h, _ = _kernels.active.density_terms(np.ascontiguousarray(u), b, alpha, eps)
    rho_p = ws.project(rho)
    G = ws.grad_sq_integral(u)
    H = ws.grad_sq_integral(ws.project(h)) if b != 0.0 else 0.0
    if model.W.is_none:
        hartree = X = 0.0
    else:
        hartree = ws.integrate(ws.hartree_convolution(rho_p) * rho_p)
        X = ws.integrate(ws.xgrad_convolution(rho_p) * rho_p) if need_virial else 0.0
    K = ql = 0.0
    if need_virial and b != 0.0:
        a_w, c_w = _kernels.active.quasilinear_weights(rho, b, alpha, eps)
        ag = _abs_grad_sq(u, ws, rho)
        K = ws.integrate(a_w * ag)
        ql = ws.integrate(c_w * ag)
    return _Pieces(rho, ws.integrate(rho), G, H, hartree, X, K, ql)


def mass(u, ws):
    return ws.integrate(np.abs(u) ** 2)


def energy(u, model, ws):
    """``½∫(|∇u|² + |∇h(|u|²)|²) − ¼∫(W∗|u|²)|u|²``."""
    p = _pieces(u, model, ws, need_virial=False)
    return 0.5 * (p.G + p.H) - 0.25 * p.hartree


def virial_y(u, ws):
    return ws.virial_y(u)


def _Q_from(p, N):
    return 2.0 * p.G + (N + 2.0) * p.H + 8.0 * N * p.K + 0.5 * p.X


def _theta_from(p, N):
    return -4.0 * N * p.ql_theta - p.hartree - 0.5 * p.X


def Q_functional(u, model, ws):
    """Virial functional with ``d²J/dt² = 4Q`` along solutions.

    ``|w|⁴|∇w|²`` in the ``h''h'`` term is evaluated with ``|∇|w||²``
    (identical for real fields), which keeps the identity exact for complex
    fields.
    """
    return _Q_from(_pieces(u, model, ws), ws.grid.N)


def virial_rhs(u, model, ws):
    """Right-hand side of ``dy/dt`` (equals ``-Q``)."""
    return -Q_functional(u, model, ws)


def theta(u, model, ws):
    """``-4N∫[2h''h's + h'²]s|∇|u||² − ∫([W + x·∇W/2]∗|u|²)|u|²`` with ``s = |u|²``."""
    return _theta_from(_pieces(u, model, ws), ws.grid.N)


def diagnostics(u, t, model, ws, dt=0.0):
    """One :class:`DiagnosticsRecord` from a shared set of spectral pieces."""
    p = _pieces(u, model, ws)
    N = ws.grid.N
    return DiagnosticsRecord(
        t=float(t), mass=p.mass, energy=0.5 * (p.G + p.H) - 0.25 * p.hartree,
        J=ws.moment2(p.rho), y=ws.virial_y(u), grad_u_sq=p.G, grad_h_sq=p.H,
        hartree=p.hartree, Q=_Q_from(p, N), theta=_theta_from(p, N), dt=float(dt),
        xgrad_hartree=p.X, quasi_K=p.K)


# ---------------------------------------------------------------------------
# trajectory residuals
# ---------------------------------------------------------------------------

def _series(records, name):
    return np.array([getattr(r, name) for r in records], dtype=float)


def _check_times(t):
    if t.size and np.any(np.diff(t) <= 0):
        raise ValueError("time samples must be strictly increasing")


def P_lhs(records):
    t = _series(records, "t")
    return (_series(records, "J") + 4 * t * _series(records, "y")
            + 4 * t ** 2 * (_series(records, "grad_u_sq") + _series(records, "grad_h_sq"))
            - 2 * t ** 2 * _series(records, "hartree"))


def P_residual(records):
    """``P(t) − [∫|x u₀|² + 4∫₀ᵗ τθ dτ]`` with trapezoid accumulation."""
    t = _series(records, "t")
    _check_times(t)
    th = _series(records, "theta")
    acc = sint.cumulative_trapezoid(4 * t * th, t, initial=0.0)
    return P_lhs(records) - (records[0].J + acc)


def B_residual(records, T):
    """``B(t) − [B(0) − 4∫₀ᵗ (T−τ)θ dτ]``; requires ``T`` beyond the samples."""
    t = _series(records, "t")
    _check_times(t)
    if not T > t[-1]:
        raise ValueError("T=%g must exceed the last sample time %g" % (T, t[-1]))
    s = T - t
    B = (_series(records, "J") - 4 * s * _series(records, "y")
         + 4 * s ** 2 * (_series(records, "grad_u_sq") + _series(records, "grad_h_sq"))
         - 2 * s ** 2 * _series(records, "hartree"))
    acc = sint.cumulative_trapezoid(4 * s * _series(records, "theta"), t, initial=0.0)
    return B - (B[0] - acc)


def blowup_time_upper_bound(u, ws):
    """``J(0) / (4 y(0))``."""
    y0 = ws.virial_y(u)
    if not y0 > 0:
        raise NotApplicable("blowup-time bound needs y(0) > 0, got %g" % y0)
    return ws.moment2(np.abs(u) ** 2) / (4.0 * y0)


def interpolation_check(u, ws, p1, p2):
    """Both sides of ``∫|u|^p₂ ≤ (∫|u|²)^((p₁−p₂)/(p₁−2)) (∫|u|^p₁)^((p₂−2)/(p₁−2))``."""
    if not p1 > p2 > 2:
        raise ValueError("need p1 > p2 > 2")
    a = np.abs(u)
    lhs = ws.integrate(a ** p2)
    rhs = (ws.integrate(a ** 2) ** ((p1 - p2) / (p1 - 2))
           * ws.integrate(a ** p1) ** ((p2 - 2) / (p1 - 2)))
    return lhs, rhs


# ---------------------------------------------------------------------------
# Sobolev constant
# ---------------------------------------------------------------------------

def sobolev_ratio(profile, dprofile, N, scale=1.0):
    """``∫|w|^{2*} / (∫|∇w|²)^{2*/2}`` for radial ``w(r) = profile(r/scale)``."""
    s = sobolev_star(N)
    om = sphere_area(N)
    num = om * sint.quad(lambda r: abs(profile(r / scale)) ** s * r ** (N - 1), 0, np.inf,
                         limit=400, epsabs=0, epsrel=1e-12)[0]
    den = om * sint.quad(lambda r: (dprofile(r / scale) / scale) ** 2 * r ** (N - 1), 0, np.inf,
                         limit=400, epsabs=0, epsrel=1e-12)[0]
    return num / den ** (s / 2.0)


def _talenti(c, N):
    e = (N - 2) / 2.0
    return (lambda r: (c + r * r) ** (-e)), (lambda r: -2 * e * r * (c + r * r) ** (-e - 1))


def sobolev_constant_estimate(N, bracket=(0.05, 20.0), iters=40):
    """Best Sobolev constant ``C_s`` from the family ``(c + r²)^(-(N-2)/2)``.

    The ratio is maximized over ``log c`` by golden-section search on
    ``bracket``.
    """
    if N < 3:
        raise UnsupportedDimension("Sobolev constant requires N >= 3, got N=%d" % N)
    f = lambda lc: sobolev_ratio(*_talenti(math.exp(lc), N), N)
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(bracket[0]), math.log(bracket[1])
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    best = max(fc, fd)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
        best = max(best, fc, fd)
    return float(best)


def sobolev_constant_exact(N):
    """Closed-form ``C_s = S^{2*}`` with the sharp constant ``S``."""
    S = (math.pi * N * (N - 2)) ** -0.5 * (math.gamma(N) / math.gamma(N / 2.0)) ** (1.0 / N)
    return S ** sobolev_star(N)


# ---------------------------------------------------------------------------
# d_I
# ---------------------------------------------------------------------------

@dataclass
class ScalingPieces:
    """Functionals of ``w_λ = λ^{N/2} w(λx)`` from the pieces of ``w``.

    ``G ∝ λ²``, ``H, K ∝ λ^γ`` with ``γ = 2Nα + 2 − N``; the Hartree terms are
    supplied as functions of λ.
    """

    N: int
    M: float
    G: float
    H: float
    K: float
    gamma: float
    hartree: Callable[[float], float]
    xgrad: Callable[[float], float]

    def Q(self, lam):
        return (2 * lam ** 2 * self.G + lam ** self.gamma * ((self.N + 2) * self.H + 8 * self.N * self.K)
                + 0.5 * self.xgrad(lam))

    def Q_scale(self, lam):
        return (2 * lam ** 2 * self.G + lam ** self.gamma * ((self.N + 2) * self.H + 8 * self.N * abs(self.K))
                + 0.5 * abs(self.xgrad(lam)))

    def energy(self, lam):
        return 0.5 * (lam ** 2 * self.G + lam ** self.gamma * self.H) - 0.25 * self.hartree(lam)


def _gamma(nl, N):
    return 2 * N * nl.alpha_eff + 2 - N


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def gaussian_scaling_pieces(model, N, A, sigma):
    """Free-space pieces of ``A exp(-r²/σ²)`` by radial quadrature.

    Uses ``ρ∗ρ(r) = A⁴ (πσ²/4)^{N/2} exp(-r²/σ²)`` for ``ρ = A² exp(-2r²/σ²)``.
    """
    nl, W = model.nl, model.W
    om = sphere_area(N)
    rq = lambda f, hi=np.inf: om * sint.quad(lambda r: f(r) * r ** (N - 1), 0, hi, limit=400)[0]
    rho = lambda r: A * A * np.exp(-2 * r * r / sigma ** 2)
    dabs2 = lambda r: (2 * r / sigma ** 2) ** 2 * rho(r)  # |∇|w||²
    M = A * A * (math.pi * sigma ** 2 / 2) ** (N / 2.0)
    G = rq(dabs2)
    if nl.is_zero:
        H = K = 0.0
    else:
        H = rq(lambda r: nl.dh(rho(r)) ** 2 * (4 * r / sigma ** 2 * rho(r)) ** 2)
        K = rq(lambda r: nl.d2h(rho(r)) * nl.dh(rho(r)) * rho(r) ** 2 * dabs2(r))
    cc = A ** 4 * (math.pi * sigma ** 2 / 4) ** (N / 2.0)

    def conv_integral(fun, lam):
        # ∫ fun(z) (ρ_λ∗ρ_λ)(z) dz = om cc ∫ fun(s/λ) e^{-s²/σ²} s^{N-1} ds  (s = λ|z|),
        # integrated in log s on pieces split at the scaled kernel breakpoints
        lo, hi = math.log(1e-40 * sigma), math.log(12.0 * sigma)
        cuts = [math.log(lam * b) for b in W.breakpoints if lo < math.log(lam * b) < hi]
        edges = [lo] + sorted(cuts) + [hi]
        xs, ws_ = [], []
        for e0, e1 in zip(edges[:-1], edges[1:]):
            n = max(1, int(math.ceil((e1 - e0) / 0.5)))
            sub = np.linspace(e0, e1, n + 1)
            mid, half = 0.5 * (sub[1:] + sub[:-1]), 0.5 * np.diff(sub)
            xs.append((mid[:, None] + half[:, None] * _GL_X[None, :]).ravel())
            ws_.append((half[:, None] * _GL_W[None, :]).ravel())
        sr = np.exp(np.concatenate(xs))
        vals = fun(sr / lam) * np.exp(-(sr / sigma) ** 2) * sr ** N
        return float(om * cc * np.sum(np.concatenate(ws_) * vals))

    if W.is_none:
        hart = xg = lambda lam: 0.0
    else:
        if isinstance(W, PowerLawPotential) and W.p >= N:
            raise ValueError("r^-p with p >= N has no finite Hartree energy")
        hart = lambda lam: conv_integral(W.value, lam)
        xg = lambda lam: conv_integral(W.r_dW, lam)
    return ScalingPieces(N, M, G, H, K, _gamma(nl, N), hart, xg)


def grid_scaling_pieces(model, ws, w):
    """Pieces of a sampled profile ``w``; Hartree terms use the rescaled kernel ``W(|z|/λ)``."""
    p = _pieces(w, model, ws)
    N = ws.grid.N
    rho_p = ws.project(p.rho)

    def conv(which):
        def f(lam):
            if model.W.is_none:
                return 0.0
            spec = ws.kernel_spectrum(model.W, scale=lam)[which]
            return ws.integrate(ws.convolve(spec, rho_p) * rho_p)
        return f

    return ScalingPieces(N, p.mass, p.G, p.H, p.K, _gamma(model.nl, N), conv(0), conv(1))


@dataclass
class DIEstimate:
    omega: float
    d_I_value: float
    params: dict
    lambda_star: float
    converged: bool
    Q_at_root: float = 0.0
    family: str = "gaussian"
    note: str = "minimum over a finite trial family: an upper bound on the true infimum"

    def as_dict(self):
        return asdict(self)


def constrained_value(pieces, omega, log_lam_range=(-3 * math.log(10), 3 * math.log(10)), n_scan=61):
    """``min (ω/2 M + E(w_λ))`` over roots λ of ``Q(w_λ) = 0``.

    Returns ``(value, λ*, Q(λ*), scale)`` or ``None`` without a sign change.
    """
    ll = np.linspace(*log_lam_range, n_scan)
    qs = np.array([pieces.Q(math.exp(v)) for v in ll])
    best = None
    for i in range(n_scan - 1):
        if qs[i] == 0.0 or np.sign(qs[i]) != np.sign(qs[i + 1]):
            root = optimize.brentq(lambda v: pieces.Q(math.exp(v)), ll[i], ll[i + 1],
                                   xtol=1e-14, rtol=4 * np.finfo(float).eps)
            lam = math.exp(root)
            val = 0.5 * omega * pieces.M + pieces.energy(lam)
            if best is None or val < best[0]:
                best = (val, lam, pieces.Q(lam), pieces.Q_scale(lam))
    return best


class TrialFamily:
    """Parametrized chirp-free profiles; parameters are optimized in log space."""

    names: Sequence[str] = ()

    def pieces(self, model, ws, params):
        raise NotImplementedError


class GaussianFamily(TrialFamily):
    """``A exp(-r²/σ²)`` evaluated in free space by radial quadrature."""

    names = ("A", "sigma")

    def __init__(self, N):
        self.N = N

    def pieces(self, model, ws, params):
        return gaussian_scaling_pieces(model, self.N, params["A"], params["sigma"])


class RingFamily(TrialFamily):
    """``A exp(-(r-r0)²/width²)`` sampled on the workspace grid."""

    names = ("A", "r0", "width")

    def pieces(self, model, ws, params):
        u = RingRecipe(params["A"], params["r0"], params["width"]).sample(ws.grid)
        return grid_scaling_pieces(model, ws, u)


def d_I_estimate(model, ws, omega, family=None, start=None, restarts=3, seed=0, fixed=None,
                 maxiter=200):
    """Estimate ``d_I = inf{ω/2‖w‖² + E(w) : Q(w) = 0}`` over a trial family.

    Each family point is dilated mass-preservingly to the root of ``Q``; the
    best root value is minimized over the family parameters with Nelder-Mead
    from ``restarts`` seeded starting points. ``fixed`` evaluates a single
    family point without optimizing.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    N = ws.grid.N if ws is not None else 3
    family = family or GaussianFamily(N)
    names = list(family.names)

    def evaluate(params):
        return constrained_value(family.pieces(model, ws, params), omega)

    if fixed is not None:
        res = evaluate(dict(fixed))
        if res is None:
            raise NoConstraintCrossing("Q does not change sign along the scaling path")
        val, lam, q, sc = res
        return DIEstimate(omega, val, dict(fixed), lam, abs(q) < 1e-6 * sc, q,
                          type(family).__name__)

    start = dict(start or {n: 1.0 for n in names})
    x0 = np.log([start[n] for n in names])
    rng = np.random.default_rng(seed)
    cache = {}

    def objective(x):
        key = tuple(np.round(x, 12))
        if key not in cache:
            res = evaluate(dict(zip(names, np.exp(x))))
            cache[key] = res
        res = cache[key]
        return 1e300 if res is None else res[0]

    best = None
    any_crossing = False
    for k in range(restarts):
        xs = x0 if k == 0 else x0 + rng.normal(scale=0.5, size=x0.size)
        opt = optimize.minimize(objective, xs, method="Nelder-Mead",
                                options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": maxiter})
        res = cache.get(tuple(np.round(opt.x, 12))) or evaluate(dict(zip(names, np.exp(opt.x))))
        if res is None:
            continue
        any_crossing = True
        if best is None or res[0] < best[0][0]:
            best = (res, opt)
    if not any_crossing:
        raise NoConstraintCrossing("Q does not change sign along the scaling path for any family point")
    (val, lam, q, sc), opt = best
    params = dict(zip(names, (float(v) for v in np.exp(opt.x))))
    return DIEstimate(omega, float(val), params, lam, bool(abs(q) < 1e-6 * sc), q,
                      type(family).__name__)


def classify_K(u, model, ws, omega, d_I):
    """``"K_plus"`` / ``"K_minus"`` below the cap ``ω/2 M + E < d_I``, else ``"neither"``."""
    if not np.any(u):
        return "neither"
    p = _pieces(u, model, ws)
    cap = 0.5 * omega * p.mass + 0.5 * (p.G + p.H) - 0.25 * p.hartree
    if not cap < d_I:
        return "neither"
    q = _Q_from(p, ws.grid.N)
    if q > 0:
        return "K_plus"
    if q < 0:
        return "K_minus"
    return "neither"
