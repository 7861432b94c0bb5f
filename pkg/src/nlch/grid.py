"""Uniform periodic grids on the flat d-torus and their spectral calculus.

Fields are plain ``numpy`` arrays whose trailing ``d`` axes are the grid
axes (row-major); any leading axes (species, vector components) are batch
axes and are carried through every operator.

Transform convention (part of the snapshot contract): the forward transform
is unnormalized, the inverse divides by ``N**d``.  Internally the real
transforms of :mod:`scipy.fft` are used.

The Nyquist wavenumber is treated as having zero derivative, in every
operator.  This keeps odd derivatives real and makes
``divergence(gradient(f)) == laplacian(f)`` hold exactly, mode by mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

__all__ = ["TorusGrid", "GridMismatchError"]


class GridMismatchError(ValueError):
    """A field does not have the shape of the grid it is used on."""


@dataclass(frozen=True)
class TorusGrid:
    """The flat torus ``[0, extent)^d`` sampled with ``n_points`` per axis.

    ``workers`` is the thread count handed to the FFT backend; results are
    bit-identical for a fixed value.  ``dealias`` switches on 2/3-rule
    truncation of the quadratic products formed in flux evaluations.
    """

    d: int
    n_points: int
    extent: float = 1.0
    dealias: bool = False
    workers: int = field(default=1, compare=False)

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n_points < 4 or self.n_points % 2:
            raise ValueError(f"points per axis must be even and >= 4, got {self.n_points}")
        if not self.extent > 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    # geometry -----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_points,) * self.d

    @property
    def size(self) -> int:
        return self.n_points ** self.d

    @property
    def spacing(self) -> float:
        return self.extent / self.n_points

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.d

    @property
    def volume(self) -> float:
        return self.extent ** self.d

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.d, 0))

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Point coordinates, one broadcastable array per axis."""
        x = np.arange(self.n_points) * self.spacing
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij"))

    @cached_property
    def displacements(self) -> tuple[np.ndarray, ...]:
        """Minimum-image displacement of every grid point from the origin."""
        m = np.fft.fftfreq(self.n_points, 1.0 / self.n_points)
        z = m * self.spacing
        return tuple(np.meshgrid(*([z] * self.d), indexing="ij"))

    # wavenumbers ----------------------------------------------------------

    def wavenumbers(self, axis: int = 0) -> np.ndarray:
        """Wavenumbers ``2*pi*m/extent``, m in [-N/2, N/2), FFT ordering."""
        if not 0 <= axis < self.d:
            raise ValueError(f"axis {axis} out of range for d={self.d}")
        return 2 * np.pi * np.fft.fftfreq(self.n_points, 1.0 / self.n_points) / self.extent

    @cached_property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.n_points,) * (self.d - 1) + (self.n_points // 2 + 1,)

    @cached_property
    def _k(self) -> tuple[np.ndarray, ...]:
        n = self.n_points
        full = np.fft.fftfreq(n, 1.0 / n)
        half = np.fft.rfftfreq(n, 1.0 / n)
        full[n // 2] = 0.0
        half[-1] = 0.0
        out = []
        for a in range(self.d):
            m = half if a == self.d - 1 else full
            shp = [1] * self.d
            shp[a] = m.size
            out.append((2 * np.pi / self.extent) * m.reshape(shp))
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 on the half spectrum (Nyquist derivative zeroed)."""
        return sum(np.broadcast_to(k ** 2, self.spectral_shape) for k in self._k)

    @cached_property
    def h1_symbol(self) -> np.ndarray:
        return 1.0 + self.k2

    @cached_property
    def h2_symbol(self) -> np.ndarray:
        return 1.0 + self.k2 + self.k2 ** 2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        n = self.n_points
        full = np.abs(np.fft.fftfreq(n, 1.0 / n))
        half = np.fft.rfftfreq(n, 1.0 / n)
        keep = np.ones(self.spectral_shape, dtype=bool)
        for a in range(self.d):
            m = half if a == self.d - 1 else full
            shp = [1] * self.d
            shp[a] = m.size
            keep &= (m < n / 3.0).reshape(shp)
        return keep

    # transforms -----------------------------------------------------------

    def check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        if f.shape[f.ndim - self.d:] != self.shape or f.ndim < self.d:
            raise GridMismatchError(f"field of shape {f.shape} does not live on grid {self.shape}")
        return f

    def forward_transform(self, f: np.ndarray) -> np.ndarray:
        """Full complex spectrum, unnormalized (zero mode = sum of values)."""
        return sfft.fftn(self.check(f), axes=self.axes, workers=self.workers)

    def inverse_transform(self, coeffs: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`forward_transform`; returns the real part."""
        coeffs = np.asarray(coeffs)
        if coeffs.shape[coeffs.ndim - self.d:] != self.shape:
            raise GridMismatchError(f"spectrum of shape {coeffs.shape} does not match grid {self.shape}")
        return sfft.ifftn(coeffs, axes=self.axes, workers=self.workers).real

    def rfft(self, f: np.ndarray) -> np.ndarray:
        return sfft.rfftn(self.check(f), axes=self.axes, workers=self.workers)

    def irfft(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.irfftn(coeffs, s=self.shape, axes=self.axes, workers=self.workers)

    def apply_symbol(self, f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        """Apply a real Fourier multiplier given on the half spectrum."""
        return self.irfft(symbol * self.rfft(f))

    def truncate(self, f: np.ndarray) -> np.ndarray:
        """2/3-rule truncation; identity unless the grid has ``dealias`` set."""
        if not self.dealias:
            return f
        return self.irfft(self.dealias_mask * self.rfft(f))

    # differential operators -------------------------------------------------

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Gradient; the component axis is inserted just before the grid axes."""
        fh = self.rfft(f)
        return np.stack([self.irfft(1j * k * fh) for k in self._k], axis=-self.d - 1)

    def divergence(self, v: np.ndarray) -> np.ndarray:
        v = self.check(v)
        if v.ndim < self.d + 1 or v.shape[-self.d - 1] != self.d:
            raise GridMismatchError(f"vector field of shape {v.shape} needs {self.d} components")
        vh = self.rfft(v)
        acc = sum(1j * k * np.take(vh, a, axis=-self.d - 1) for a, k in enumerate(self._k))
        return self.irfft(acc)

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.apply_symbol(f, -self.k2)

    # quadrature and norms ---------------------------------------------------

    def integrate(self, f: np.ndarray) -> np.ndarray | float:
        """Rectangle rule, exact for trigonometric polynomials below Nyquist."""
        f = self.check(f)
        out = f.sum(axis=self.axes) * self.cell_volume
        return float(out) if np.ndim(out) == 0 else out

    def inner_l2(self, f: np.ndarray, g: np.ndarray) -> np.ndarray | float:
        return self.integrate(np.asarray(f) * np.asarray(g))

    def _sobolev(self, f: np.ndarray, symbol: np.ndarray):
        return np.sqrt(self.inner_l2(f, self.apply_symbol(f, symbol)))

    def norm_l2(self, f: np.ndarray):
        return np.sqrt(self.inner_l2(f, f))

    def norm_h1(self, f: np.ndarray):
        return self._sobolev(f, self.h1_symbol)

    def norm_h2(self, f: np.ndarray):
        return self._sobolev(f, self.h2_symbol)
