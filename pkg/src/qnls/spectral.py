"""Periodic pseudo-spectral engine: transforms, derivatives, convolution, quadrature."""
from __future__ import annotations

import math

import numpy as np
import scipy.fft as sfft
from scipy import integrate as sint

from . import _kernels
from .model import GridSpec, NoPotential, PotentialSpec

ORACLE_MAX_POINTS = 4096


class GridMismatch(ValueError):
    pass


class SpectralWorkspace:
    """Frequency lattice, cached kernel spectra and FFT helpers for one grid.

    The workspace is read-only after construction; every method allocates its
    own output so concurrent calls are safe.

    :param grid: periodic grid
    :param W: convolution kernel; ``None`` means no Hartree term
    :param dealias: apply a 2/3-rule projection to ``|u|²`` and ``h(|u|²)``
    :param workers: FFT worker threads passed to :mod:`scipy.fft`
    """

    def __init__(self, grid: GridSpec, W: PotentialSpec | None = None, dealias: bool = False,
                 workers: int = 1):
        self.grid = grid
        self.workers = workers
        self.dealias = bool(dealias)
        self.k = grid.wavenumbers()
        k2 = np.zeros(grid.shape)
        for kd in self.k:
            k2 = k2 + kd * kd
        self.k2 = k2
        self.x = grid.coords()
        self.r2 = grid.r2()
        kmax = np.pi / grid.dx
        if self.dealias:
            mask = np.ones(grid.shape, dtype=bool)
            for kd in self.k:
                mask = mask & (np.abs(kd) < (2.0 / 3.0) * kmax)
            self.mask = mask
        else:
            self.mask = None
        self.W = W if W is not None else NoPotential()
        self.kernel_hat, self.xgrad_hat = self.kernel_spectrum(self.W)
        half = grid.shape[-1] // 2 + 1
        sl = (slice(None),) * (grid.N - 1) + (slice(0, half),)
        self._k2_half = self.k2[sl]
        self._kernel_half = self.kernel_hat[sl]
        self._mask_half = None if self.mask is None else self.mask[sl]

    # -- transforms ---------------------------------------------------------

    def fft(self, f):
        return sfft.fftn(f, workers=self.workers)

    def ifft(self, F):
        return sfft.ifftn(F, workers=self.workers)

    def to_modes(self, u):
        """Coordinates in which the linear flow is diagonal with symbol ``|ξ|²``."""
        return self.fft(u)

    def from_modes(self, U):
        return self.ifft(U)

    def nonlinear_fields(self, rho, h):
        """``(W∗Pρ, ΔPh)`` for the right-hand side, using real transforms.

        ``h`` may be ``None`` (no quasilinear term).
        """
        out = []
        if self.W.is_none:
            out.append(None)
        else:
            R = sfft.rfftn(rho, workers=self.workers)
            if self._mask_half is not None:
                R *= self._mask_half
            out.append(sfft.irfftn(R * self._kernel_half, s=self.grid.shape, workers=self.workers))
        if h is None:
            out.append(None)
        else:
            Hh = sfft.rfftn(h, workers=self.workers)
            if self._mask_half is not None:
                Hh *= self._mask_half
            out.append(sfft.irfftn(-self._k2_half * Hh, s=self.grid.shape, workers=self.workers))
        return tuple(out)

    def _check(self, f):
        if np.shape(f) != self.grid.shape:
            raise GridMismatch("field shape %s does not match grid %s" % (np.shape(f), self.grid.shape))

    def kernel_spectrum(self, W: PotentialSpec, scale: float = 1.0):
        """Real transforms of the sampled ``W(|z|/scale)`` and ``x·∇W``, times the cell volume."""
        if W.is_none:
            z = np.zeros(self.grid.shape)
            return z, z.copy()
        w, xw = W.kernel_arrays(self.grid, scale)
        return (self.fft(w).real * self.grid.cell, self.fft(xw).real * self.grid.cell)

    def project(self, f):
        """2/3-rule projection of a real field (identity when dealiasing is off)."""
        if self.mask is None:
            return f
        return self.ifft(self.fft(f) * self.mask).real

    # -- derivatives --------------------------------------------------------

    def laplacian(self, f):
        self._check(f)
        out = self.ifft(-self.k2 * self.fft(f))
        return out.real if np.isrealobj(f) else out

    def gradient(self, f):
        """Per-axis spectral derivatives (complex, Nyquist mode kept)."""
        self._check(f)
        F = self.fft(f)
        return [self.ifft(1j * kd * F) for kd in self.k]

    def gradient_sq(self, f):
        """Pointwise ``|∇f|²``."""
        out = np.zeros(self.grid.shape)
        for g in self.gradient(f):
            out += g.real * g.real + g.imag * g.imag
        return out

    def grad_sq_integral(self, f):
        """``∫|∇f|²`` evaluated on the spectral side."""
        self._check(f)
        F = self.fft(f)
        return float(np.sum(self.k2 * (F.real ** 2 + F.imag ** 2)) * self.grid.cell / self.grid.size)

    # -- convolution --------------------------------------------------------

    def convolve(self, spectrum, rho):
        self._check(rho)
        if not np.all(np.isfinite(rho)):
            raise ValueError("density contains non-finite values")
        out = self.ifft(spectrum * self.fft(rho))
        return out.real

    def hartree_convolution(self, rho):
        """``W ∗ ρ`` with the cached kernel spectrum."""
        return self.convolve(self.kernel_hat, rho)

    def xgrad_convolution(self, rho):
        """``(x·∇W) ∗ ρ``."""
        return self.convolve(self.xgrad_hat, rho)

    # -- quadrature ---------------------------------------------------------

    def integrate(self, f):
        return float(np.sum(f) * self.grid.cell)

    def moment2(self, f):
        """``∫|x|² f`` with box-centred coordinates."""
        return float(np.sum(self.r2 * f) * self.grid.cell)

    def virial_y(self, u):
        """``Im ∫ ū (x·∇u)``."""
        xg = np.zeros(self.grid.shape, dtype=complex)
        for xd, g in zip(self.x, self.gradient(u)):
            xg += xd * g
        return float(np.sum((np.conj(u) * xg).imag) * self.grid.cell)

    def parseval_sum(self, f):
        """``∫|f|²`` from the transform side."""
        F = self.fft(f)
        return float(np.sum(F.real ** 2 + F.imag ** 2) * self.grid.cell / self.grid.size)


class RadialWorkspace(SpectralWorkspace):
    """Radially symmetric fields in three dimensions.

    Fields are even functions sampled on the symmetric line of a radial
    :class:`GridSpec`. Every operator acts on the odd function ``r·f``, for
    which ``Δf = (r f)''/r``; the linear flow is diagonal in the transform of
    ``r·u`` and ``∫|∇f|² = 2π∫|(r f)'|² dr``, so the discrete energy and the
    discrete Laplacian stay adjoint. Volume integrals of even ``f`` use
    ``∫_{R³} f = 2π∫_{-R}^{R} r² f dr``.
    """

    def __init__(self, grid: GridSpec, W: PotentialSpec | None = None, dealias: bool = False,
                 workers: int = 1):
        if not grid.radial:
            raise GridMismatch("RadialWorkspace needs a radial grid")
        self.grid = grid
        self.workers = workers
        self.dealias = bool(dealias)
        self.k = grid.wavenumbers()
        self.k2 = self.k[0] ** 2
        self.r = grid.axis()
        self.x = [self.r]
        self.r2 = self.r ** 2
        self._center = grid.points // 2
        self._w = 2.0 * math.pi * grid.dx
        kmax = np.pi / grid.dx
        self.mask = (np.abs(self.k[0]) < (2.0 / 3.0) * kmax) if self.dealias else None
        self.W = W if W is not None else NoPotential()
        self.kernel_hat, self.xgrad_hat = self.kernel_spectrum(self.W)

    # -- odd extension helpers ---------------------------------------------

    def _div_r(self, g):
        """``g/r`` for an odd ``g``; the value at ``r = 0`` is the spectral ``g'(0)``."""
        out = np.empty_like(g)
        nz = self.r != 0.0
        out[nz] = g[nz] / self.r[nz]
        c = self._center
        # g'(0) = (1/n) Σ_k i k G_k e^{ik·0} with the transform taken in natural order
        G = sfft.fft(g, workers=self.workers)
        phase = np.exp(1j * self.k[0] * (self.r[c] - self.r[0]))
        d0 = np.sum(1j * self.k[0] * G * phase) / self.grid.points
        out[c] = d0 if np.iscomplexobj(g) else d0.real
        return out

    def to_modes(self, u):
        return self.fft(self.r * u)

    def from_modes(self, U):
        return self._div_r(self.ifft(U))

    def kernel_spectrum(self, W: PotentialSpec, scale: float = 1.0):
        """Multipliers mapping the transform of ``r·ρ`` to that of ``r·(W∗ρ)``.

        With ``g = r·ρ`` and the even antiderivative
        ``Φ(t) = -∫_|t|^∞ τ W(τ) dτ`` one has ``r(W∗ρ)(r) = -2π (Φ ⋆ g)(r)``,
        so the multiplier is ``-2π Φ̂``. ``Φ`` is integrable wherever ``W`` is
        locally integrable in three dimensions; near the origin it is replaced
        by exact cell averages. The ``x·∇W`` kernel uses ``Φ_X = t²W − 2Φ``.
        """
        n = self.grid.points
        if W.is_none:
            z = np.zeros(n, dtype=complex)
            return z, z.copy()
        phi, phix = _radial_antiderivatives(W, scale, self.grid.dx, n // 2)
        pre = -2.0 * math.pi * self.grid.dx
        # even sequences with t = 0 at index 0
        ev = lambda a: np.concatenate([a, a[1:n // 2][::-1]])
        return pre * sfft.fft(ev(phi)).real + 0j, pre * sfft.fft(ev(phix)).real + 0j

    def project(self, f):
        if self.mask is None:
            return f
        return self._div_r(self.ifft(self.fft(self.r * f) * self.mask).real)

    # -- derivatives --------------------------------------------------------

    def laplacian(self, f):
        self._check(f)
        out = self._div_r(self.ifft(-self.k2 * self.fft(self.r * f)))
        return out.real if np.isrealobj(f) else out

    def gradient(self, f):
        """Radial derivative ``∂_r f`` as a one-element list."""
        self._check(f)
        return [self.ifft(1j * self.k[0] * self.fft(f))]

    def grad_sq_integral(self, f):
        self._check(f)
        F = self.fft(self.r * f)
        return float(np.sum(self.k2 * (F.real ** 2 + F.imag ** 2)) * self._w / self.grid.points)

    # -- convolution --------------------------------------------------------

    def convolve(self, spectrum, rho):
        self._check(rho)
        if not np.all(np.isfinite(rho)):
            raise ValueError("density contains non-finite values")
        G = sfft.fft(np.fft.ifftshift(self.r * rho), workers=self.workers)
        g = np.fft.fftshift(sfft.ifft(spectrum * G, workers=self.workers).real)
        return self._div_r(g)

    def nonlinear_fields(self, rho, h):
        if self.mask is not None:
            rho = self.project(rho)
        conv = None if self.W.is_none else self.convolve(self.kernel_hat, rho)
        lap = None
        if h is not None:
            H = self.fft(self.r * h)
            if self.mask is not None:
                H *= self.mask
            lap = self._div_r(self.ifft(-self.k2 * H).real)
        return conv, lap

    # -- quadrature ---------------------------------------------------------

    def integrate(self, f):
        return float(np.sum(self.r2 * f) * self._w)

    def moment2(self, f):
        return float(np.sum(self.r2 * self.r2 * f) * self._w)

    def virial_y(self, u):
        g = self.gradient(u)[0]
        return float(np.sum((np.conj(u) * g).imag * self.r2 * self.r) * self._w)

    def parseval_sum(self, f):
        F = self.fft(self.r * f)
        return float(np.sum(F.real ** 2 + F.imag ** 2) * self._w / self.grid.points)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _gl(f, lo, hi):
    """Fixed-order Gauss-Legendre integral of a vectorized ``f`` over each ``[lo_i, hi_i]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    t = mid[:, None] + half[:, None] * _GL_X[None, :]
    return half * np.sum(_GL_W[None, :] * f(t), axis=1)


def _radial_antiderivatives(W, scale, dr, half, near=None):
    """Node values of ``Φ`` and ``Φ_X`` for ``W(·/scale)``.

    For kernels singular at the origin, nodes ``|j| <= near`` (all when ``None``)
    hold cell averages.
    """
    tw = lambda t: t * W.value(t / scale)
    t2w = lambda t: t * t * W.value(t / scale)
    nodes = dr * np.arange(half + 1)
    # Φ at half-nodes s_i = i·dr/2, i = 1..2·half, accumulated inward from the tail
    s = 0.5 * dr * np.arange(1, 2 * half + 1)
    seg = _gl(tw, s[:-1], s[1:])
    tail = sint.quad(lambda t: float(tw(np.asarray([t]))[0]), s[-1], np.inf, limit=400)[0]
    phi_s = np.empty_like(s)
    phi_s[-1] = -tail
    phi_s[:-1] = -tail - np.cumsum(seg[::-1])[::-1]
    phi = np.empty(half + 1)
    phi[1:] = phi_s[1::2]
    wn = W.value(nodes[1:] / scale)
    phix = np.empty(half + 1)
    phix[1:] = nodes[1:] ** 2 * wn - 2.0 * phi[1:]
    # cell averages: ∫_a^b Φ = bΦ(b) − aΦ(a) − ∫_a^b t²W, and ∫_a^b Φ_X = ∫_a^b t²W − 2∫_a^b Φ
    a = 0.5 * dr
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w0 = W.value(np.zeros(1))[0]
    if np.isfinite(w0):
        phi[0] = phi_s[0] - sint.quad(lambda t: float(tw(np.asarray([t]))[0]), 0.0, a)[0]
        phix[0] = -2.0 * phi[0]
        return phi, phix
    inner = sint.quad(lambda t: float(t2w(np.asarray([t]))[0]), 0.0, a, limit=400)[0]
    if not math.isfinite(inner):
        raise ValueError("kernel is not locally integrable in three dimensions")
    int_phi = a * phi_s[0] - inner
    phi[0] = int_phi / a
    phix[0] = (inner - 2.0 * int_phi) / a
    j = np.arange(1, (half if near is None else min(near, half - 1)) + 1)
    lo, hi = (j - 0.5) * dr, (j + 0.5) * dr
    m2 = _gl(t2w, lo, hi)
    ip = hi * phi_s[np.minimum(2 * j, 2 * half - 1)] - lo * phi_s[2 * j - 2] - m2
    phi[j] = ip / dr
    phix[j] = (m2 - 2.0 * ip) / dr
    return phi, phix


def make_workspace(grid: GridSpec, W: PotentialSpec | None = None, dealias: bool = False,
                   workers: int = 1):
    """Workspace matching the grid geometry."""
    cls = RadialWorkspace if grid.radial else SpectralWorkspace
    return cls(grid, W, dealias=dealias, workers=workers)


def direct_convolution_oracle(kernel, rho, cell, backend=None):
    """Exact periodic discrete convolution ``Σ_j kernel[i-j] rho[j] · cell`` by direct summation.

    ``kernel`` is sampled in FFT order (offset 0 first). Limited to
    ``ORACLE_MAX_POINTS`` points.
    """
    kernel = np.asarray(kernel, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if kernel.shape != rho.shape:
        raise GridMismatch("kernel and density shapes differ")
    if rho.size > ORACLE_MAX_POINTS:
        raise ValueError("direct convolution limited to %d points, got %d" % (ORACLE_MAX_POINTS, rho.size))
    shape = rho.shape
    k3 = kernel.reshape(shape + (1,) * (3 - rho.ndim))
    r3 = rho.reshape(k3.shape)
    impl = backend or _kernels.active
    return np.asarray(impl.direct_convolution(np.ascontiguousarray(k3), np.ascontiguousarray(r3),
                                              float(cell))).reshape(shape)
