"""Domain types for the quasilinear Hartree equation and closed-form thresholds.

The equation evolved throughout the package is::

    i u_t = Δu + 2 u h'(|u|²) Δh(|u|²) + (W ∗ |u|²) u

with a power (or zero) quasilinear function ``h`` and a radial, even
convolution kernel ``W``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate


class UnsupportedDimension(ValueError):
    pass


class DegenerateExponent(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class BoxTooSmall(ValueError):
    pass


def sphere_area(N):
    """Surface area of the unit sphere in R^N."""
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


def sobolev_star(N):
    if N < 3:
        raise UnsupportedDimension("2* = 2N/(N-2) requires N >= 3, got N=%d" % N)
    return 2.0 * N / (N - 2.0)


# ---------------------------------------------------------------------------
# nonlinearity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NonlinearitySpec:
    """The quasilinear function ``h(s) = b s**alpha`` (or ``h ≡ 0``).

    ``a`` is the growth constant of ``max(s^½, s^α) ≤ a[h(s) + s^½]`` and
    ``k`` the constant in ``s h''(s) ≤ k h'(s)``; both are stored, not
    inferred. ``eps_floor`` regularizes ``h'`` and ``h''`` at vacuum when
    their exponent is negative.
    """

    kind: str = "zero"
    b: float = 0.0
    alpha: float = 0.5
    eps_floor: float = 1e-30
    a: Optional[float] = None
    k: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("zero", "power"):
            raise ValueError("unknown nonlinearity kind %r" % (self.kind,))
        if self.eps_floor < 0:
            raise ValueError("eps_floor must be nonnegative")
        if self.kind == "power":
            if self.b < 0 or not self.alpha > 0:
                raise ValueError("power nonlinearity needs b >= 0 and alpha > 0")
            k = self.alpha - 1.0
            a = max(1.0, 1.0 / self.b) if self.b > 0 else 1.0
        else:
            k = -0.5
            a = 1.0
        if self.k is None:
            object.__setattr__(self, "k", k)
        if self.a is None:
            object.__setattr__(self, "a", a)
        if not self.a > 0:
            raise ValueError("growth constant a must be positive")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def power(cls, b, alpha, eps_floor=1e-30, a=None):
        """Power family; ``b == 0`` collapses to the zero nonlinearity."""
        if b == 0:
            return cls("zero", eps_floor=eps_floor)
        return cls("power", b=float(b), alpha=float(alpha), eps_floor=eps_floor, a=a)

    @property
    def is_zero(self):
        return self.kind == "zero" or self.b == 0.0

    @property
    def alpha_eff(self):
        """Exponent used by the threshold formulas (½ for h ≡ 0)."""
        return 0.5 if self.is_zero else self.alpha

    @property
    def coeffs(self):
        """``(b, alpha)`` as consumed by the pointwise kernels."""
        if self.is_zero:
            return 0.0, 0.5
        return self.b, self.alpha

    def _floored(self, s, exponent):
        s = np.asarray(s, dtype=float)
        return np.maximum(s, self.eps_floor) if exponent < 0 else s

    def h(self, s):
        s = np.asarray(s, dtype=float)
        if self.is_zero:
            return np.zeros_like(s)
        return self.b * s ** self.alpha

    def dh(self, s):
        s = np.asarray(s, dtype=float)
        if self.is_zero:
            return np.zeros_like(s)
        e = self.alpha - 1.0
        return self.b * self.alpha * self._floored(s, e) ** e

    def d2h(self, s):
        s = np.asarray(s, dtype=float)
        if self.is_zero:
            return np.zeros_like(s)
        e = self.alpha - 2.0
        return self.b * self.alpha * (self.alpha - 1.0) * self._floored(s, e) ** e

    def k_condition_holds(self, s=None, rtol=1e-12):
        """Sampled check of ``s h'' ≤ k h'`` where ``h' ≥ 0``."""
        if s is None:
            s = np.logspace(-12, 12, 481)
        s = np.asarray(s, dtype=float)
        s = s[s > self.eps_floor]
        lhs = s * self.d2h(s)
        rhs = self.k * self.dh(s)
        scale = np.abs(lhs) + np.abs(rhs)
        pos = self.dh(s) >= 0
        ok_pos = lhs[pos] <= rhs[pos] + rtol * scale[pos]
        ok_neg = lhs[~pos] >= rhs[~pos] - rtol * scale[~pos]
        return bool(np.all(ok_pos) and np.all(ok_neg))

    def growth_condition_holds(self, s=None):
        """Sampled check of ``max(s^½, s^α) ≤ a[h(s) + s^½]`` on ``s ≥ 1``."""
        if s is None:
            s = np.logspace(0, 6, 301)
        s = np.asarray(s, dtype=float)
        lhs = np.maximum(np.sqrt(s), s ** self.alpha_eff)
        rhs = self.a * (self.h(s) + np.sqrt(s))
        return bool(np.all(lhs <= rhs * (1 + 1e-12)))

    def sharp_threshold_condition(self, N, l_low, s=None):
        """Sampled ``(2-l)+4(N+2-l)h'(s)²s+8N h''(s)h'(s)s² ≥ 0``."""
        if s is None:
            s = np.logspace(-12, 12, 481)
        s = np.asarray(s, dtype=float)
        dh, d2h = self.dh(s), self.d2h(s)
        val = (2 - l_low) + 4 * (N + 2 - l_low) * dh ** 2 * s + 8 * N * d2h * dh * s ** 2
        return bool(np.all(val >= -1e-12 * (1 + np.abs(val))))

    def preset_string(self):
        if self.is_zero:
            return "zero"
        return "power:b=%r,alpha=%r" % (self.b, self.alpha)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

class PotentialSpec:
    """Radial even convolution kernel ``W(r)`` together with ``x·∇W = r W'(r)``."""

    kind = "abstract"
    L: Optional[float] = None
    upper: Optional[float] = None

    def value(self, r):
        raise NotImplementedError

    def r_dW(self, r):
        raise NotImplementedError

    @property
    def breakpoints(self):
        return ()

    @property
    def sign(self):
        raise NotImplementedError

    @property
    def is_none(self):
        return False

    def origin_values(self, N, a):
        """Grid value of ``W`` and ``x·∇W`` in the origin cell (ball radius ``a``)."""
        return float(self.value(0.0)), float(self.r_dW(0.0))

    def kernel_arrays(self, grid, scale=1.0):
        """Sample ``W(|z|/scale)`` and ``(x·∇W)(|z|/scale)`` in FFT order.

        ``z`` runs over minimal-image offsets of the periodic box, so the
        arrays are even and their transforms real.
        """
        r = grid.fft_order_radius()
        rs = r / scale
        W = np.zeros_like(r)
        X = np.zeros_like(r)
        nz = r > 0
        W[nz] = self.value(rs[nz])
        X[nz] = self.r_dW(rs[nz])
        w0, x0 = self.origin_values(grid.N, 0.5 * grid.dx / scale)
        origin = (0,) * grid.N
        W[origin] = w0
        X[origin] = x0
        return W, X

    def preset_string(self):
        return self.kind


class NoPotential(PotentialSpec):
    kind = "none"

    def value(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def r_dW(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    @property
    def sign(self):
        return "nonneg"

    @property
    def is_none(self):
        return True

    def __repr__(self):
        return "NoPotential()"


def _loglog_bridge(C):
    """Log-log interpolation between ``r^-p`` at 1 and ``r^-C`` at 2: ``f = r^-C``."""
    return (lambda r: np.asarray(r, dtype=float) ** (-C),
            lambda r: -C * np.asarray(r, dtype=float) ** (-C))


class PowerLawPotential(PotentialSpec):
    """``±r^-p`` on (0,1], a bridge on [1,2], ``±r^-C`` on [2,∞).

    ``negative=False`` is the nonnegative family with ``p f + r f' ≤ 0 ≤ C f + r f'``
    on the bridge; ``negative=True`` the nonpositive family with
    ``m g + r g' ≥ 0 ≥ M g + r g'``. The default bridge interpolates the two
    power laws linearly in log-log coordinates.
    """

    def __init__(self, p, C, negative=False, bridge=None, L=None, upper=None):
        self.p = float(p)
        self.C = float(C)
        self.negative = bool(negative)
        if not (self.p > 0 and self.C > 0):
            raise ValueError("power-law exponents must be positive")
        if self.C <= self.p:
            raise ValueError("tail exponent must exceed the inner exponent (C > p)")
        self.kind = "negative_powerlaw" if negative else "powerlaw_piecewise"
        self._sgn = -1.0 if negative else 1.0
        if bridge is None:
            f, rf = _loglog_bridge(self.C)
        else:
            f, rf = bridge
        self._f, self._rf = f, rf
        self.L = L
        self.upper = upper
        self._validate_bridge()

    def _validate_bridge(self):
        r = np.linspace(1.0, 2.0, 401)
        f = np.asarray(self._f(r), dtype=float)
        rf = np.asarray(self._rf(r), dtype=float)
        if not (abs(f[0] - 1.0) < 1e-9 and abs(f[-1] - 2.0 ** (-self.C)) < 1e-9 * 2.0 ** (-self.C) + 1e-15):
            raise ValueError("bridge must join r^-p at r=1 and r^-C at r=2 continuously")
        tol = 1e-10 * np.abs(f).max()
        if np.any(f <= 0):
            raise ValueError("bridge must be positive on [1,2]")
        # both families reduce to p f + r f' ≤ 0 ≤ C f + r f' for the magnitude
        if np.any(self.p * f + rf > tol) or np.any(self.C * f + rf < -tol):
            raise ValueError("bridge violates p f + r f' <= 0 <= C f + r f' on [1,2]")

    @property
    def sign(self):
        return "nonpos" if self.negative else "nonneg"

    @property
    def breakpoints(self):
        return (1.0, 2.0)

    def _magnitude(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inner = r <= 1.0
        outer = r >= 2.0
        mid = ~(inner | outer)
        with np.errstate(divide="ignore"):
            out[inner] = r[inner] ** (-self.p)
        out[outer] = r[outer] ** (-self.C)
        out[mid] = self._f(r[mid])
        return out

    def _r_dmag(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inner = r <= 1.0
        outer = r >= 2.0
        mid = ~(inner | outer)
        with np.errstate(divide="ignore"):
            out[inner] = -self.p * r[inner] ** (-self.p)
        out[outer] = -self.C * r[outer] ** (-self.C)
        out[mid] = self._rf(r[mid])
        return out

    def value(self, r):
        return self._sgn * self._magnitude(r)

    def r_dW(self, r):
        return self._sgn * self._r_dmag(r)

    def ball_average(self, N, a):
        """Average of ``W`` over the ball of radius ``a`` (``p < N`` only)."""
        if self.p >= N:
            raise ValueError("r^-p is not locally integrable for p >= N")
        inner = 1.0 / (N - self.p)
        if a <= 1.0:
            return self._sgn * N / (N - self.p) * a ** (-self.p)
        rest = 0.0
        for lo, hi in ((1.0, min(a, 2.0)), (2.0, a)):
            if hi > lo:
                rest += integrate.quad(lambda r: self._magnitude(r) * r ** (N - 1), lo, hi)[0]
        return self._sgn * N / a ** N * (inner + rest)

    def origin_values(self, N, a):
        if self.p < N:
            avg = self.ball_average(N, a)
            # ball average of r W'(r) by parts: N (W(a) - avg W)
            return avg, N * (float(self.value(a)) - avg)
        # not locally integrable: cap at the ball-edge value, keep the r^-p ratio
        w0 = float(self.value(a))
        return w0, -self.p * w0

    def preset_string(self):
        if self.negative:
            return "neg_plaw:m=%r,M=%r" % (self.p, self.C)
        return "plaw:p=%r,C=%r" % (self.p, self.C)

    def __repr__(self):
        return "PowerLawPotential(p=%r, C=%r, negative=%r)" % (self.p, self.C, self.negative)


class GaussianPotential(PotentialSpec):
    kind = "gaussian"

    def __init__(self, A, sigma, L=None, upper=None):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.A = float(A)
        self.sigma = float(sigma)
        self.L = L
        self.upper = upper

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return self.A * np.exp(-(r / self.sigma) ** 2)

    def r_dW(self, r):
        r = np.asarray(r, dtype=float)
        return -2.0 * (r / self.sigma) ** 2 * self.value(r)

    @property
    def sign(self):
        if self.A > 0:
            return "nonneg"
        if self.A < 0:
            return "nonpos"
        return "nonneg"

    def l1_norm(self, N):
        return abs(self.A) * math.pi ** (N / 2.0) * self.sigma ** N

    def preset_string(self):
        return "gaussian:A=%r,sigma=%r" % (self.A, self.sigma)

    def __repr__(self):
        return "GaussianPotential(A=%r, sigma=%r)" % (self.A, self.sigma)


class TablePotential(PotentialSpec):
    """Radial samples ``(r_i, W_i)``; ``x·∇W`` from centered differences.

    Beyond the last sample ``W`` is taken to vanish.
    """

    kind = "radial_table"

    def __init__(self, r, w, L=None, upper=None):
        r = np.asarray(r, dtype=float)
        w = np.asarray(w, dtype=float)
        if r.ndim != 1 or r.shape != w.shape or r.size < 3:
            raise ValueError("radial table needs matching 1-D arrays with >= 3 samples")
        if np.any(np.diff(r) <= 0) or r[0] < 0:
            raise ValueError("radial samples must be increasing and nonnegative")
        self.r = r
        self.w = w
        self.dw = np.gradient(w, r)
        self.L = L
        self.upper = upper

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return np.interp(r, self.r, self.w, left=self.w[0], right=0.0)

    def r_dW(self, r):
        r = np.asarray(r, dtype=float)
        return r * np.interp(r, self.r, self.dw, left=0.0, right=0.0)

    @property
    def sign(self):
        if np.all(self.w >= 0):
            return "nonneg"
        if np.all(self.w <= 0):
            return "nonpos"
        return "mixed"

    @property
    def breakpoints(self):
        return (float(self.r[-1]),)

    def __repr__(self):
        return "TablePotential(n=%d)" % self.r.size


def remark51_potential(alpha, N=3, eps=0.1, tail_factor=2.0):
    """Nonnegative power-law kernel of the sharp-threshold example.

    Inner exponent ``P = (2α-1)N + 2 + eps``; tail exponent ``tail_factor·P``.
    ``L = P/2`` and the upper constant ``tail_factor·P/2`` bound
    ``-x·∇W/2`` from below and above.
    """
    P = (2 * alpha - 1) * N + 2 + eps
    C = tail_factor * P
    if C <= max(N, P):
        raise ValueError("tail exponent must exceed max(N, P)")
    return PowerLawPotential(P, C, L=P / 2.0, upper=C / 2.0)


# ---------------------------------------------------------------------------
# grid and field
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Periodic box ``[-extent, extent)^N`` with ``points`` nodes per axis.

    With ``radial=True`` (``N = 3`` only) the grid is a single symmetric line
    ``r ∈ [-extent, extent)`` carrying radially symmetric fields; the
    workspace then acts on the odd extension of ``r·u``.
    """

    N: int
    extent: float
    points: int
    radial: bool = False

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise ValueError("grid dimension must be 1, 2 or 3")
        if self.radial and self.N != 3:
            raise ValueError("radial grids are implemented for N = 3 only")
        if not self.extent > 0:
            raise ValueError("extent must be positive")
        if self.points < 4 or self.points % 2:
            raise ValueError("points per axis must be an even integer >= 4")

    @property
    def axes(self):
        """Number of array axes (1 for radial grids)."""
        return 1 if self.radial else self.N

    @property
    def dx(self):
        return 2.0 * self.extent / self.points

    @property
    def shape(self):
        return (self.points,) * self.axes

    @property
    def size(self):
        return self.points ** self.axes

    @property
    def cell(self):
        return self.dx ** self.axes

    @property
    def volume(self):
        if self.radial:
            return 4.0 * math.pi * self.extent ** 3 / 3.0
        return (2.0 * self.extent) ** self.N

    def axis(self):
        return -self.extent + self.dx * np.arange(self.points)

    def coords(self):
        """Broadcastable (sparse) coordinate arrays, one per array axis."""
        x = self.axis()
        out = []
        for d in range(self.axes):
            shp = [1] * self.axes
            shp[d] = self.points
            out.append(x.reshape(shp))
        return out

    def r2(self):
        return sum(c * c for c in self.coords())

    def wavenumbers(self):
        """Broadcastable wavenumber arrays (integer lattice scaled by π/extent)."""
        k = 2.0 * math.pi * np.fft.fftfreq(self.points, d=self.dx)
        out = []
        for d in range(self.axes):
            shp = [1] * self.axes
            shp[d] = self.points
            out.append(k.reshape(shp))
        return out

    def fft_order_radius(self):
        m = np.fft.fftfreq(self.points, d=1.0 / self.points)
        z = np.abs(m) * self.dx
        r2 = np.zeros(self.shape)
        for d in range(self.axes):
            shp = [1] * self.axes
            shp[d] = self.points
            r2 = r2 + (z * z).reshape(shp)
        return np.sqrt(r2)

    def boundary_mask(self, frac=0.1):
        """Nodes within ``frac·extent`` of the box faces (of ``|r| = extent`` when radial)."""
        lim = (1.0 - frac) * self.extent
        mask = np.zeros(self.shape, dtype=bool)
        for c in self.coords():
            mask = mask | (np.abs(c) >= lim)
        return mask


@dataclass
class FieldState:
    grid: GridSpec
    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=complex)
        if self.u.shape != self.grid.shape:
            raise ValueError("field shape %s does not match grid %s" % (self.u.shape, self.grid.shape))
        if self.t < 0:
            raise ValueError("time must be nonnegative")

    @property
    def valid(self):
        return bool(np.all(np.isfinite(self.u)))

    def copy(self):
        return FieldState(self.grid, self.u.copy(), self.t)


def boundary_ratio(u, grid, frac=0.1):
    """``max |u|`` near the box faces relative to ``max |u|``."""
    a = np.abs(u)
    top = a.max()
    if top == 0:
        return 0.0
    return float(a[grid.boundary_mask(frac)].max() / top)


# ---------------------------------------------------------------------------
# exponents and thresholds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentReport:
    N: int
    alpha: float
    two_star: float
    q_c: float
    q_s: float
    p_c: float
    p_s: float
    k: float
    q: float
    tau1: float
    tau2: float
    critical_mass: Optional[float] = None

    def as_dict(self):
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def exponents(N, nl, q=None, C_s=None, normWq=None):
    """Watershed exponents ``q_c, p_c`` and Sobolev-like ``q_s, p_s``.

    ``tau1``/``tau2`` are the Hölder pair attached to ``q`` (default ``q_c``).
    For ``h ≡ 0`` the unclipped ``q_s = N/4``, ``p_s = 4`` values are
    reported; for the power family ``q_s`` and ``p_s`` are clipped at 1 and
    ``N``.
    """
    two_star = sobolev_star(N)
    alpha = nl.alpha_eff
    D = max(2 * alpha, 1.0) * two_star - 2.0
    m = max(alpha, 0.5)
    q_c = two_star / D
    p_c = N * D / two_star
    if nl.is_zero:
        q_s = m * two_star / D
        p_s = N * D / (m * two_star)
    else:
        q_s = max(m * two_star / D, 1.0)
        p_s = N * min(D / (m * two_star), 1.0)
    if q is None:
        q = q_c
    A = (2 * q - 1) * D
    tau2 = A / 2.0
    tau1 = A / (A - 2.0) if A != 2.0 else math.inf
    cm = None
    if C_s is not None and normWq is not None:
        cm = critical_mass(nl, q, N, C_s, normWq)
    return ExponentReport(N=N, alpha=alpha, two_star=two_star, q_c=q_c, q_s=q_s, p_c=p_c,
                          p_s=p_s, k=nl.k, q=q, tau1=tau1, tau2=tau2, critical_mass=cm)


def critical_mass(nl, q, N, C_s, normWq):
    """``‖u₀‖₂`` at which ``a² 2^((q-1)N+2q)/(qN) C_s^(2/2*) ‖W‖_q ‖u₀‖₂^e = 1``.

    ``e = min(4-4α, 2)``; smaller masses give global existence at ``q = q_c``.
    """
    two_star = sobolev_star(N)
    alpha = nl.alpha_eff
    e = min(4 - 4 * alpha, 2.0)
    if e <= 0:
        raise DegenerateExponent("min(4-4alpha, 2) = %g <= 0" % e)
    D = max(2 * alpha, 1.0) * two_star - 2.0
    if not math.isclose(q, two_star / D, rel_tol=1e-9):
        warnings.warn("critical mass evaluated at q=%g != q_c=%g" % (q, two_star / D))
    if not 0 < alpha < (N - 1) / N:
        warnings.warn("critical mass formula assumes 0 < alpha < (N-1)/N")
    coef = nl.a ** 2 * 2.0 ** (((q - 1) * N + 2 * q) / (q * N)) * C_s ** (2.0 / two_star) * normWq
    return coef ** (-1.0 / e)


def global_by_critical_mass(nl, q, N, C_s, normWq, mass_norm):
    """Verdict at ``q = q_c``: ``"global"`` below the critical mass (strict),
    ``"watershed"`` at equality, ``"undetermined"`` above."""
    m = critical_mass(nl, q, N, C_s, normWq)
    if math.isclose(mass_norm, m, rel_tol=1e-12):
        return "watershed"
    return "global" if mass_norm < m else "undetermined"


@dataclass(frozen=True)
class C1Report:
    in_L1: bool
    normL1: float
    normLq_inner: float
    supnorm_outer: float
    q: float
    split_radius: float


def _radial_integral(fun, N, lo, hi, points=()):
    pts = [p for p in points if lo < p < hi]
    edges = [lo] + sorted(pts) + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if math.isinf(b):
            val = integrate.quad(lambda r: fun(r) * r ** (N - 1), a, b, limit=200)[0]
        else:
            val = integrate.quad(lambda r: fun(r) * r ** (N - 1), a, b, limit=200,
                                 epsabs=0, epsrel=1e-12)[0]
        total += val
    return total


def check_C1(W, q, N, split_radius=1.0):
    """Integrability report for ``W = W₁ + W₂ ∈ L¹ ∩ (L^q + L^∞)``.

    ``W₁ = W·1_{r<split_radius}``; the norms come from adaptive radial
    quadrature, with divergence decided analytically for power laws.
    """
    if not q > 1:
        raise ValueError("q must exceed 1")
    omega = sphere_area(N)
    if isinstance(W, NoPotential):
        return C1Report(True, 0.0, 0.0, 0.0, q, split_radius)
    if isinstance(W, PowerLawPotential):
        in_l1 = W.p < N and W.C > N
        lq_ok = W.p * q < N
        mag = W._magnitude

        def inner_integral(power):
            # ∫_0^min(1,split) r^(N-1-p·power) dr analytically, rest by quadrature
            e = N - W.p * power
            a = min(1.0, split_radius)
            if e <= 0:
                return math.inf
            val = a ** e / e
            if split_radius > 1.0:
                val += _radial_integral(lambda r: mag(r) ** power, N, 1.0, split_radius, (2.0,))
            return val

        if in_l1:
            l1 = inner_integral(1.0) + _radial_integral(mag, N, max(split_radius, 0.0), math.inf, (1.0, 2.0))
            if split_radius < 1.0:
                l1 = 1.0 / (N - W.p) + _radial_integral(mag, N, 1.0, math.inf, (2.0,))
            normL1 = omega * l1
        else:
            normL1 = math.inf
        normLq = (omega * inner_integral(q)) ** (1.0 / q) if lq_ok else math.inf
        sup_outer = float(mag(np.array([split_radius]))[0])
        return C1Report(bool(in_l1), normL1, normLq, sup_outer, q, split_radius)
    if isinstance(W, GaussianPotential):
        f = lambda r: abs(W.value(r))
        normL1 = omega * _radial_integral(f, N, 0.0, math.inf)
        normLq = (omega * _radial_integral(lambda r: f(r) ** q, N, 0.0, split_radius)) ** (1.0 / q)
        sup_outer = float(f(split_radius))
        return C1Report(True, normL1, normLq, sup_outer, q, split_radius)
    if isinstance(W, TablePotential):
        if W.r[0] > 1e-2 * W.r[-1] or np.count_nonzero(W.r < 0.1 * W.r[-1]) < 3:
            raise InsufficientData("radial table needs >= 3 samples near r = 0")
        f = lambda r: abs(float(W.value(r)))
        knots = tuple(W.r[1:-1][:: max(1, W.r.size // 50)])
        normL1 = omega * _radial_integral(f, N, 0.0, float(W.r[-1]), knots)
        normLq = (omega * _radial_integral(lambda r: f(r) ** q, N, 0.0,
                                           min(split_radius, float(W.r[-1])), knots)) ** (1.0 / q)
        outer = W.r[W.r >= split_radius]
        sup_outer = float(np.abs(W.value(outer)).max()) if outer.size else 0.0
        return C1Report(True, normL1, normLq, sup_outer, q, split_radius)
    raise TypeError("unsupported potential %r" % (W,))


@dataclass(frozen=True)
class C2Report:
    holds: bool
    worst_r: float
    worst_value: float
    coefficient: float


def _radial_sample(W):
    r = np.logspace(-6, 6, 1201)
    extra = []
    for b in W.breakpoints:
        extra += [b * (1 - 1e-12), b, b * (1 + 1e-12)]
    return np.unique(np.concatenate([r, extra]))


def check_C2(W, k, N):
    """Sampled ``[max((2k+1)N,0)+2] W + x·∇W ≤ 0``."""
    coef = max((2 * k + 1) * N, 0.0) + 2.0
    r = _radial_sample(W)
    w = W.value(r)
    xg = W.r_dW(r)
    val = coef * w + xg
    scale = np.abs(coef * w) + np.abs(xg)
    excess = val - 1e-12 * scale
    i = int(np.argmax(excess))
    return C2Report(bool(np.all(excess <= 0)), float(r[i]), float(val[i]), coef)


def decay_case_conditions(W, N, c=None):
    """Sign flags for ``2W + x·∇W`` used by the decay theorem cases."""
    r = _radial_sample(W)
    w = W.value(r)
    v = 2 * w + W.r_dW(r)
    tol = 1e-12 * (np.abs(2 * w) + np.abs(W.r_dW(r)))
    out = {"nonneg": bool(np.all(v >= -tol)), "nonpos": bool(np.all(v <= tol))}
    if c is not None:
        out["lower_c"] = bool(np.all(v >= -c * np.abs(w) - tol))
    return out


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianRecipe:
    """``A exp(-|x|²/σ²) exp(iβ|x|²)``."""

    A: float = 1.0
    sigma: float = 1.0
    beta: float = 0.0

    def sample(self, grid):
        r2 = grid.r2()
        return self.A * np.exp(-r2 / self.sigma ** 2) * np.exp(1j * self.beta * r2)

    def preset_string(self):
        return "gaussian:A=%r,sigma=%r,beta=%r" % (self.A, self.sigma, self.beta)


@dataclass(frozen=True)
class RingRecipe:
    """``A exp(-(|x|-r0)²/width²)``."""

    A: float = 1.0
    r0: float = 1.0
    width: float = 0.5

    def sample(self, grid):
        r = np.sqrt(grid.r2())
        return self.A * np.exp(-((r - self.r0) / self.width) ** 2) + 0j

    def preset_string(self):
        return "ring:A=%r,r0=%r,width=%r" % (self.A, self.r0, self.width)


@dataclass(frozen=True)
class CustomRecipe:
    samples: np.ndarray = field(repr=False, default=None)

    def sample(self, grid):
        u = np.asarray(self.samples, dtype=complex)
        if u.shape != grid.shape:
            raise ValueError("custom samples do not match the grid")
        return u.copy()


@dataclass(frozen=True)
class InitialDiagnostics:
    l2: float
    grad_l2: float
    grad_h_sq: float
    moment2: float
    y0: float
    boundary_ratio: float

    @property
    def admissible(self):
        return all(math.isfinite(v) for v in (self.l2, self.grad_l2, self.grad_h_sq,
                                              self.moment2, self.y0))


def make_initial_data(grid, recipe, nl=None, boundary_tol=1e-8):
    """Sample ``recipe`` on ``grid`` and report energy-space diagnostics.

    Raises :class:`BoxTooSmall` if ``|u|`` within 10% of the faces exceeds
    ``boundary_tol·max|u|``.
    """
    from . import spectral

    u = recipe.sample(grid)
    if not np.all(np.isfinite(u)):
        raise ValueError("initial amplitude is not finite")
    ratio = boundary_ratio(u, grid)
    if ratio > boundary_tol:
        raise BoxTooSmall("|u| near boundary is %.3e of max (limit %.0e)" % (ratio, boundary_tol))
    ws = spectral.make_workspace(grid)
    nl = nl or NonlinearitySpec.zero()
    rho = np.abs(u) ** 2
    diag = InitialDiagnostics(
        l2=math.sqrt(ws.integrate(rho)),
        grad_l2=math.sqrt(ws.grad_sq_integral(u)),
        grad_h_sq=ws.grad_sq_integral(nl.h(rho)),
        moment2=ws.moment2(rho),
        y0=ws.virial_y(u),
        boundary_ratio=ratio,
    )
    return FieldState(grid, u, 0.0), diag


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _parse_kv(body):
    out = {}
    if not body:
        return out
    for part in body.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError("expected key=value, got %r" % part)
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _split_preset(text):
    text = text.strip()
    name, _, body = text.partition(":")
    return name.strip(), _parse_kv(body)


def _floats(kv, names, required=()):
    out = {}
    for k, v in kv.items():
        if k not in names:
            raise ValueError("unexpected parameter %r (allowed: %s)" % (k, ", ".join(names)))
        out[k] = float(v)
    for r in required:
        if r not in out:
            raise ValueError("missing parameter %r" % r)
    return out


def parse_nonlinearity(text):
    """``zero`` or ``power:b=1,alpha=0.6[,eps=..,a=..]``."""
    name, kv = _split_preset(text)
    if name == "zero":
        _floats(kv, ())
        return NonlinearitySpec.zero()
    if name == "power":
        f = _floats(kv, ("b", "alpha", "eps", "a"), ("b", "alpha"))
        return NonlinearitySpec.power(f["b"], f["alpha"], eps_floor=f.get("eps", 1e-30), a=f.get("a"))
    raise ValueError("unknown nonlinearity preset %r" % name)


def parse_potential(text):
    """``none``, ``plaw:p=,C=``, ``neg_plaw:m=,M=``, ``gaussian:A=,sigma=``,
    ``remark51:alpha=[,eps=,tail=]`` or ``table:file=path``."""
    name, kv = _split_preset(text)
    if name == "none":
        return NoPotential()
    if name == "plaw":
        f = _floats(kv, ("p", "C", "L", "upper"), ("p", "C"))
        return PowerLawPotential(f["p"], f["C"], L=f.get("L"), upper=f.get("upper"))
    if name == "neg_plaw":
        f = _floats(kv, ("m", "M"), ("m", "M"))
        return PowerLawPotential(f["m"], f["M"], negative=True)
    if name == "gaussian":
        f = _floats(kv, ("A", "sigma"), ("A", "sigma"))
        return GaussianPotential(f["A"], f["sigma"])
    if name == "remark51":
        f = _floats(kv, ("alpha", "N", "eps", "tail"), ("alpha",))
        return remark51_potential(f["alpha"], int(f.get("N", 3)), f.get("eps", 0.1), f.get("tail", 2.0))
    if name == "table":
        if set(kv) != {"file"}:
            raise ValueError("table preset takes exactly file=<path>")
        data = np.loadtxt(kv["file"], ndmin=2)
        return TablePotential(data[:, 0], data[:, 1])
    raise ValueError("unknown potential preset %r" % name)


def parse_initial(text):
    """``gaussian:A=,sigma=,beta=`` or ``ring:A=,r0=,width=``."""
    name, kv = _split_preset(text)
    if name == "gaussian":
        f = _floats(kv, ("A", "sigma", "beta"))
        return GaussianRecipe(f.get("A", 1.0), f.get("sigma", 1.0), f.get("beta", 0.0))
    if name == "ring":
        f = _floats(kv, ("A", "r0", "width"))
        return RingRecipe(f.get("A", 1.0), f.get("r0", 1.0), f.get("width", 0.5))
    raise ValueError("unknown initial-data preset %r" % name)


@dataclass(frozen=True)
class Model:
    """The PDE ingredients: quasilinear function and convolution kernel."""

    nl: NonlinearitySpec = field(default_factory=NonlinearitySpec.zero)
    W: PotentialSpec = field(default_factory=NoPotential)
