"""Mollifier profiles, the kernels K_eps(z) = rho_eps(|z|)/|z|^2 and the
nonlocal operator B_eps(v) = (K_eps * 1) v - K_eps * v.

The kernel is sampled at minimum-image grid displacements, so on the torus
``K_eps * 1`` is a single number (the kernel *mass*) and ``B_eps`` is a real,
nonnegative Fourier multiplier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .grid import GridMismatchError, TorusGrid

__all__ = [
    "KernelProfile",
    "NonlocalOperator",
    "LocalOperator",
    "ResolutionError",
    "sphere_factor",
    "sphere_area",
    "limit_coefficient",
    "make_profile",
    "build_operator",
    "apply_B",
]

DEFAULT_SUPPORT = (0.25, 0.75)
DEFAULT_MIN_ANNULUS_CELLS = 3.0


class ResolutionError(ValueError):
    """The grid cannot resolve the kernel annulus for the requested eps."""

    def __init__(self, message: str, required_points: int | None = None):
        super().__init__(message)
        self.required_points = required_points


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} (counting measure for d=1)."""
    return {1: 2.0, 2: 2 * math.pi, 3: 4 * math.pi}[_check_dim(d)]


def sphere_factor(d: int) -> float:
    """Target value of the radial moment int rho(r) r^(d-1) dr.

    Equals ``2 / int_{S^{d-1}} |sigma . e_1| dH^{d-1}``; the sphere integrals
    are 2, 4 and 2*pi for d = 1, 2, 3.
    """
    return {1: 1.0, 2: 0.5, 3: 1.0 / math.pi}[_check_dim(d)]


def limit_coefficient(d: int) -> float:
    """kappa_d with B_eps(v) -> -kappa_d * Laplacian(v) for smooth v.

    Second-order Taylor expansion of the kernel integral gives
    ``kappa_d = |S^{d-1}| / (2 d) * sphere_factor(d)``: 1 for d = 1,
    pi/4 for d = 2 and 2/3 for d = 3.
    """
    return sphere_area(d) / (2 * d) * sphere_factor(d)


def _check_dim(d: int) -> int:
    if d not in (1, 2, 3):
        raise ValueError(f"unsupported dimension {d}")
    return d


def bump(s, a: float, b: float):
    """The C-infinity bump exp(-1/((s-a)(b-s))) on (a, b), zero elsewhere."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > a) & (s < b)
    si = s[inside]
    out[inside] = np.exp(-1.0 / ((si - a) * (b - si)))
    return out


@dataclass(frozen=True)
class KernelProfile:
    """rho(r) = amplitude * bump(r) with support (a, b) inside (0, 1)."""

    d: int
    support: tuple[float, float]
    amplitude: float

    def rho(self, r):
        a, b = self.support
        return self.amplitude * bump(r, a, b)

    def rho_eps(self, r, eps: float):
        return self.rho(np.asarray(r, dtype=float) / eps) / eps ** self.d

    def radial_moment(self, power: int, eps: float = 1.0) -> float:
        """int_0^inf rho_eps(r) r^power dr by adaptive quadrature."""
        a, b = self.support
        val, _ = integrate.quad(lambda r: float(self.rho_eps(r, eps)) * r ** power,
                                a * eps, b * eps, epsabs=0.0, epsrel=1e-13, limit=200)
        return val


def make_profile(d: int, support: tuple[float, float] = DEFAULT_SUPPORT) -> KernelProfile:
    """Build the profile whose amplitude enforces the radial normalization."""
    target = sphere_factor(d)
    a, b = (float(x) for x in support)
    if not 0 < a < b < 1:
        raise ValueError(f"support must satisfy 0 < a < b < 1, got ({a}, {b})")
    val, err = integrate.quad(lambda r: float(bump(r, a, b)) * r ** (d - 1), a, b,
                              epsabs=0.0, epsrel=1e-13, limit=200)
    if not (val > 0 and err <= 1e-10 * val):
        raise ArithmeticError(f"normalization quadrature did not converge (value {val}, error {err})")
    return KernelProfile(d=d, support=(a, b), amplitude=target / val)


@dataclass(frozen=True, eq=False)
class NonlocalOperator:
    """Spectral representation of B_eps on one grid.

    ``kernel_hat`` is the symbol of the continuous convolution with the
    sampled kernel (forward transform times cell volume), so its zero mode
    is the kernel mass.  ``symbol`` is the multiplier of B_eps.
    """

    grid: TorusGrid
    profile: KernelProfile
    eps: float
    samples: np.ndarray = field(repr=False)
    kernel_hat: np.ndarray = field(repr=False)
    symbol: np.ndarray = field(repr=False)
    mass: float

    def apply(self, v: np.ndarray) -> np.ndarray:
        return apply_B(self, v)

    @property
    def direct_mass(self) -> float:
        """Kernel mass as a plain sum over samples (consistency check)."""
        return float(self.samples.sum() * self.grid.cell_volume)

    @property
    def discrete_limit_coefficient(self) -> float:
        """Grid counterpart of :func:`limit_coefficient`; reported, not corrected."""
        r2 = sum(z ** 2 for z in self.grid.displacements)
        return float((self.samples * r2).sum() * self.grid.cell_volume / (2 * self.grid.d))


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """-kappa * Laplacian, the local counterpart of B_eps."""

    grid: TorusGrid
    coefficient: float = 1.0

    @property
    def symbol(self) -> np.ndarray:
        return self.coefficient * self.grid.k2

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.grid.apply_symbol(v, self.symbol)


def build_operator(grid: TorusGrid, profile: KernelProfile, eps: float,
                   min_annulus_cells: float = DEFAULT_MIN_ANNULUS_CELLS) -> NonlocalOperator:
    """Sample and transform K_eps on ``grid``.

    The annulus [a*eps, b*eps] must span at least ``min_annulus_cells`` grid
    spacings, and eps must stay below half the extent so the minimum-image
    periodization of the support never overlaps itself.
    """
    if profile.d != grid.d:
        raise ValueError(f"profile is for d={profile.d}, grid has d={grid.d}")
    if not 0 < eps < grid.extent / 2:
        raise ValueError(f"eps must lie in (0, extent/2) = (0, {grid.extent / 2}), got {eps}")
    a, b = profile.support
    width = (b - a) * eps
    if width < min_annulus_cells * grid.spacing:
        need = math.ceil(min_annulus_cells * grid.extent / width)
        need += need % 2
        raise ResolutionError(
            f"kernel annulus {width:.4g} spans {width / grid.spacing:.3g} cells, "
            f"needs {min_annulus_cells:g}; use at least N={need}", required_points=need)

    r = np.sqrt(sum(z ** 2 for z in grid.displacements))
    samples = np.zeros(grid.shape)
    pos = r > 0
    samples[pos] = profile.rho_eps(r[pos], eps) / r[pos] ** 2
    kernel_hat = grid.rfft(samples).real * grid.cell_volume
    mass = float(kernel_hat.flat[0])
    symbol = np.maximum(mass - kernel_hat, 0.0)
    symbol.flat[0] = 0.0
    op = NonlocalOperator(grid=grid, profile=profile, eps=float(eps), samples=samples,
                          kernel_hat=kernel_hat, symbol=symbol, mass=mass)
    if abs(op.direct_mass - mass) > 1e-10 * abs(mass):
        raise ArithmeticError("kernel mass and zero mode of its spectrum disagree")
    return op


def apply_B(op: NonlocalOperator, v: np.ndarray) -> np.ndarray:
    """B_eps(v) = mass * v - K_eps * v, batched over leading axes."""
    try:
        return op.grid.apply_symbol(v, op.symbol)
    except GridMismatchError as exc:
        raise GridMismatchError(f"apply_B: {exc}") from None
