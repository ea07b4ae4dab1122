"""Pointwise and direct-sum kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``QNLS_NUMBA`` is not ``0``.
Both paths are always importable (``numba_impl`` / ``numpy_impl``) so tests
and the benchmark can compare them directly.
"""
import os
import types

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("QNLS_NUMBA", "1") != "0"


# --------------------------------------------------------------------------
# pure numpy
# --------------------------------------------------------------------------

def _np_density_terms(u, b, alpha, eps):
    s = u.real * u.real + u.imag * u.imag
    if b == 0.0:
        return s, np.zeros_like(s), np.zeros_like(s)
    h = b * s ** alpha
    if alpha < 1.0:
        hp = (b * alpha) * np.maximum(s, eps) ** (alpha - 1.0)
    else:
        hp = (b * alpha) * s ** (alpha - 1.0)
    return s, h, hp


def _np_apply_potential(u, conv, lap_h, hp):
    # -i * [(W*rho) + 2 h'(rho) lap h(rho)] * u
    return -1j * ((conv + 2.0 * hp * lap_h) * u)


def _np_quasilinear_weights(s, b, alpha, eps):
    """Return (h''h' s^2, (2h''h' s + h'^2) s) for h = b s^alpha."""
    if b == 0.0:
        z = np.zeros_like(s)
        return z, z.copy()
    sf = np.maximum(s, eps)
    c = b * b * alpha * alpha
    # h'' h' s^2 = c (alpha-1) s^(2 alpha - 1); the bracket is c (2alpha-1) s^(2alpha-1)
    p = c * sf ** (2.0 * alpha - 1.0)
    if 2.0 * alpha - 1.0 > 0.0:
        p = np.where(s > 0.0, p, 0.0)
    return (alpha - 1.0) * p, (2.0 * alpha - 1.0) * p


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------

if numba is not None:
    _jit = numba.njit(cache=True, fastmath=False, error_model="numpy")

    @_jit
    def _nb_density_terms(u, b, alpha, eps):
        flat = u.ravel()
        n = flat.size
        s = np.empty(n)
        h = np.zeros(n)
        hp = np.zeros(n)
        for i in range(n):
            z = flat[i]
            si = z.real * z.real + z.imag * z.imag
            s[i] = si
            if b != 0.0:
                if alpha < 1.0:
                    # one pow per node: s^a = s * s^(a-1) wherever the floor is inactive
                    sf = max(si, eps)
                    q = sf ** (alpha - 1.0)
                    hp[i] = b * alpha * q
                    h[i] = b * si * q if si >= eps and si > 0.0 else b * si ** alpha
                else:
                    q = si ** (alpha - 1.0)
                    hp[i] = b * alpha * q
                    h[i] = b * si * q
        return s.reshape(u.shape), h.reshape(u.shape), hp.reshape(u.shape)

    @_jit
    def _nb_apply_potential(u, conv, lap_h, hp):
        fu = u.ravel()
        fc = conv.ravel()
        fl = lap_h.ravel()
        fh = hp.ravel()
        out = np.empty(fu.size, dtype=np.complex128)
        for i in range(fu.size):
            v = fc[i] + 2.0 * fh[i] * fl[i]
            z = fu[i]
            out[i] = complex(v * z.imag, -v * z.real)
        return out.reshape(u.shape)

    @_jit
    def _nb_quasilinear_weights(s, b, alpha, eps):
        fs = s.ravel()
        n = fs.size
        a = np.zeros(n)
        c2 = np.zeros(n)
        if b == 0.0:
            return a.reshape(s.shape), c2.reshape(s.shape)
        c = b * b * alpha * alpha
        e = 2.0 * alpha - 1.0
        for i in range(n):
            si = fs[i]
            if e > 0.0 and si <= 0.0:
                continue
            p = c * max(si, eps) ** e
            a[i] = (alpha - 1.0) * p
            c2[i] = e * p
        return a.reshape(s.shape), c2.reshape(s.shape)

    @_jit
    def _nb_direct_convolution(kernel, rho, cell):
        n0, n1, n2 = rho.shape
        out = np.zeros_like(rho)
        for i0 in range(n0):
            for i1 in range(n1):
                for i2 in range(n2):
                    acc = 0.0
                    for j0 in range(n0):
                        m0 = (i0 - j0) % n0
                        for j1 in range(n1):
                            m1 = (i1 - j1) % n1
                            for j2 in range(n2):
                                acc += kernel[m0, m1, (i2 - j2) % n2] * rho[j0, j1, j2]
                    out[i0, i1, i2] = acc * cell
        return out


def _np_direct_convolution(kernel, rho, cell):
    idx = [np.arange(m) for m in rho.shape]
    n0, n1, n2 = rho.shape
    out = np.empty_like(rho)
    for i0 in range(n0):
        k0 = kernel[(i0 - idx[0]) % n0]
        for i1 in range(n1):
            k01 = k0[:, (i1 - idx[1]) % n1]
            for i2 in range(n2):
                out[i0, i1, i2] = np.sum(k01[:, :, (i2 - idx[2]) % n2] * rho)
    return out * cell


numpy_impl = types.SimpleNamespace(
    density_terms=_np_density_terms,
    apply_potential=_np_apply_potential,
    quasilinear_weights=_np_quasilinear_weights,
    direct_convolution=_np_direct_convolution,
)

if numba is not None:
    numba_impl = types.SimpleNamespace(
        density_terms=_nb_density_terms,
        apply_potential=_nb_apply_potential,
        quasilinear_weights=_nb_quasilinear_weights,
        direct_convolution=_nb_direct_convolution,
    )
else:  # pragma: no cover
    numba_impl = None

active = numba_impl if USE_NUMBA else numpy_impl


def backend_name():
    return "numba" if active is numba_impl and numba_impl is not None else "numpy"
