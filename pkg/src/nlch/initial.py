"""Initial-data presets.

Every preset draws from its own named random stream: a PCG64 generator
seeded by ``SeedSequence(seed, spawn_key=<bytes of the preset name>)``,
so the same seed gives the same data on every platform and different
presets never share a stream.
"""
from __future__ import annotations

import numpy as np
from scipy.special import softmax

from .grid import TorusGrid
from .model import State

__all__ = ["PRESETS", "make_initial", "preset_rng", "uniform", "perturbed_uniform",
           "dirichlet_random", "tanh_interface"]


def preset_rng(name: str, seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=tuple(name.encode()))
    return np.random.Generator(np.random.PCG64(ss))


def _base_logits(grid, species, fractions):
    if fractions is None:
        fractions = np.full(species, 1.0 / species)
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (species,) or np.any(fractions <= 0):
        raise ValueError(f"fractions must be {species} positive numbers")
    fractions = fractions / fractions.sum()
    return np.log(fractions).reshape((species,) + (1,) * grid.d) * np.ones((1,) + grid.shape)


def uniform(grid: TorusGrid, species: int, fractions=None) -> np.ndarray:
    """Spatially constant fractions (equal shares unless ``fractions`` is given)."""
    return softmax(_base_logits(grid, species, fractions), axis=0)


def perturbed_uniform(grid: TorusGrid, species: int, amplitude: float = 0.1, seed: int = 0,
                      max_mode: int = 4, fractions=None) -> np.ndarray:
    """Constant logits plus random Fourier modes 1..max_mode along each axis, then softmax."""
    rng = preset_rng("perturbed_uniform", seed)
    logits = _base_logits(grid, species, fractions)
    for i in range(species):
        for axis in range(grid.d):
            x = grid.coords[axis] * (2 * np.pi / grid.extent)
            for m in range(1, max_mode + 1):
                a, phase = rng.standard_normal(), rng.uniform(0, 2 * np.pi)
                logits[i] += amplitude * a * np.cos(m * x + phase)
    return softmax(logits, axis=0)


def dirichlet_random(grid: TorusGrid, species: int, alpha: float = 1.0, seed: int = 0,
                     max_mode: int = 4) -> np.ndarray:
    """Pointwise Dirichlet(alpha) samples, logits low-pass filtered to |m| <= max_mode, then softmax."""
    rng = preset_rng("dirichlet_random", seed)
    sample = rng.dirichlet(np.full(species, alpha), size=grid.shape)
    logits = np.log(np.maximum(np.moveaxis(sample, -1, 0), 1e-300))
    keep = np.ones(grid.spectral_shape, dtype=bool)
    n = grid.n_points
    for axis in range(grid.d):
        m = np.abs(np.fft.rfftfreq(n, 1.0 / n) if axis == grid.d - 1 else np.fft.fftfreq(n, 1.0 / n))
        shp = [1] * grid.d
        shp[axis] = m.size
        keep &= (m <= max_mode).reshape(shp)
    return softmax(grid.irfft(keep * grid.rfft(logits)), axis=0)


def tanh_interface(grid: TorusGrid, species: int, width: float = 0.05) -> np.ndarray:
    """Two-species periodic slab: u_0 near 1 for |x_1 - extent/2| < extent/4, near 0 outside."""
    if species != 2 or grid.d > 2:
        raise ValueError("tanh_interface needs two species and d <= 2")
    if not width > 0:
        raise ValueError("width must be positive")
    x = grid.coords[0]
    u0 = 0.5 * (1 + np.tanh((grid.extent / 4 - np.abs(x - grid.extent / 2)) / width))
    u0 = np.clip(u0, 1e-6, 1 - 1e-6)
    return np.stack([u0, 1 - u0])


PRESETS = {
    "uniform": uniform,
    "perturbed_uniform": perturbed_uniform,
    "dirichlet_random": dirichlet_random,
    "tanh_interface": tanh_interface,
}


def make_initial(name: str, grid: TorusGrid, species: int, **options) -> State:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    u = PRESETS[name](grid, species, **options)
    if not u.min() > 0:
        raise ValueError(f"preset {name} produced a non-positive fraction")
    return State(grid, u).validate()
