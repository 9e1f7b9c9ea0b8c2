"""Periodic grids on the square complex torus and spectral calculus on them.

Fields are plain numpy arrays whose trailing ``2n`` axes are the grid axes,
ordered ``x1, y1, x2, y2``. Any leading axes are tensor indices, so every
operator here acts componentwise on stacked tensor fields.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft

from .errors import ConfigInvalid, ShapeMismatch

_WORKERS = 1


def set_threads(k):
    """Number of FFT worker threads. Results do not depend on it."""
    global _WORKERS
    if k < 1:
        raise ConfigInvalid(f"thread count must be >= 1, got {k}")
    _WORKERS = int(k)


@dataclass(frozen=True)
class Grid:
    n: int
    N: int
    L: float = 1.0

    @property
    def h(self):
        return self.L / self.N

    @property
    def ndim(self):
        return 2 * self.n

    @property
    def shape(self):
        return (self.N,) * self.ndim

    @property
    def size(self):
        return self.N**self.ndim

    @property
    def axes(self):
        return tuple(range(-self.ndim, 0))

    @cached_property
    def coords(self):
        """Real coordinates ``[x1, y1, (x2, y2)]`` as broadcastable arrays."""
        x = np.arange(self.N) * self.h
        return np.meshgrid(*([x] * self.ndim), indexing="ij")

    def x(self, alpha):
        return self.coords[2 * alpha]

    def y(self, alpha):
        return self.coords[2 * alpha + 1]

    @cached_property
    def wavenumbers(self):
        """Integer mode indices in ``{-N/2, ..., N/2-1}`` per axis."""
        return np.fft.fftfreq(self.N, d=1.0 / self.N).round().astype(int)

    @cached_property
    def _dz_symbols(self):
        # Nyquist derivative coefficient is zeroed.
        m = self.wavenumbers
        k = 2 * np.pi / self.L * np.where(m == -self.N // 2, 0, m)
        dz, dzbar = [], []
        for alpha in range(self.n):
            kx = _along(k, 2 * alpha, self.ndim)
            ky = _along(k, 2 * alpha + 1, self.ndim)
            dz.append(0.5 * (1j * kx + ky))
            dzbar.append(0.5 * (1j * kx - ky))
        return dz, dzbar

    @cached_property
    def dealias_mask(self):
        keep = np.abs(self.wavenumbers) <= self.N // 3
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.ndim):
            mask = mask & _along(keep, ax, self.ndim)
        return mask

    def check(self, f):
        if np.shape(f)[-self.ndim:] != self.shape or np.ndim(f) < self.ndim:
            raise ShapeMismatch(
                f"field of shape {np.shape(f)} does not live on grid {self.shape}"
            )
        return f


def _along(v, ax, ndim):
    shape = [1] * ndim
    shape[ax] = -1
    return v.reshape(shape)


def make_grid(n, N, L=1.0):
    """Build a grid on ``R^{2n} / (L Z)^{2n}`` with ``N`` points per real axis."""
    if n not in (1, 2):
        raise ConfigInvalid(f"complex dimension must be 1 or 2, got {n}")
    if not isinstance(N, (int, np.integer)) or N < 8 or N & (N - 1):
        raise ConfigInvalid(f"N must be a power of two >= 8, got {N}")
    if not L > 0:
        raise ConfigInvalid(f"period L must be positive, got {L}")
    return Grid(int(n), int(N), float(L))


def fft(grid, f):
    return scipy.fft.fftn(f, axes=grid.axes, workers=_WORKERS)


def ifft(grid, fhat):
    return scipy.fft.ifftn(fhat, axes=grid.axes, workers=_WORKERS)


def _check_axis(grid, alpha):
    if not 0 <= alpha < grid.n:
        raise ConfigInvalid(f"axis {alpha} out of range for n={grid.n}")


def d_dz(grid, f, alpha):
    """Holomorphic derivative along ``z^alpha``, ``(d/dx - i d/dy) / 2``."""
    _check_axis(grid, alpha)
    grid.check(f)
    return ifft(grid, grid._dz_symbols[0][alpha] * fft(grid, f))


def d_dzbar(grid, f, alpha):
    """Antiholomorphic derivative along ``z^alpha``, ``(d/dx + i d/dy) / 2``."""
    _check_axis(grid, alpha)
    grid.check(f)
    return ifft(grid, grid._dz_symbols[1][alpha] * fft(grid, f))


def ddbar(grid, f):
    """Complex Hessian ``d^2 f / dz^a dzbar^b`` stacked as ``[a, b, ...]``.

    Built from repeated first derivatives. One forward transform is shared.
    """
    grid.check(f)
    dz, dzbar = grid._dz_symbols
    fhat = fft(grid, f)
    out = np.empty((grid.n, grid.n) + np.shape(f), dtype=complex)
    for a in range(grid.n):
        for b in range(grid.n):
            out[a, b] = ifft(grid, dz[a] * dzbar[b] * fhat)
    return out


def gradient(grid, f, holomorphic=True):
    """All first derivatives of ``f`` stacked as a new trailing index axis.

    The derivative index is inserted just before the grid axes.
    """
    grid.check(f)
    sym = grid._dz_symbols[0 if holomorphic else 1]
    fhat = fft(grid, f)
    lead = np.ndim(f) - grid.ndim
    out = np.empty(np.shape(f)[:lead] + (grid.n,) + grid.shape, dtype=complex)
    for a in range(grid.n):
        out[(Ellipsis, a) + (slice(None),) * grid.ndim] = ifft(grid, sym[a] * fhat)
    return out


def integrate(grid, f, density=None):
    """Trapezoid (spectrally exact) integral of ``f * density`` over the torus."""
    grid.check(f)
    if density is not None:
        grid.check(density)
        f = f * density
    return np.sum(f, axis=grid.axes) * grid.h**grid.ndim


def mean(grid, f):
    grid.check(f)
    return np.mean(f, axis=grid.axes)


def dealias(grid, f):
    """Two-thirds rule: zero every mode with an axis index above ``N // 3``."""
    grid.check(f)
    out = ifft(grid, np.where(grid.dealias_mask, fft(grid, f), 0))
    if np.isrealobj(f):
        return out.real
    return out


def fourier_mode(grid, k, amplitude=1.0, kind="cos"):
    """Real single-mode field ``A cos(2 pi k.x / L)`` (or ``sin``).

    ``k`` has one integer entry per real axis.
    """
    k = tuple(k)
    if len(k) != grid.ndim:
        raise ConfigInvalid(f"wavevector {k} needs {grid.ndim} entries")
    phase = sum(ki * xi for ki, xi in zip(k, grid.coords)) * (2 * np.pi / grid.L)
    if kind == "cos":
        return amplitude * np.cos(phase)
    if kind == "sin":
        return amplitude * np.sin(phase)
    raise ConfigInvalid(f"unknown mode kind {kind!r}")
