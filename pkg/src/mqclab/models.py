"""One-dimensional two-state diabatic models and the spatial grid.

Three scenarios are shipped: a single avoided crossing, a dual avoided
crossing (two coupling windows, so transfer amplitudes from the first can
interfere at the second), and an atom-surface scattering model whose lower
adiabat reflects the incoming atom while the upper adiabat can trap it in
a well.  All potentials are real symmetric matrices at every point and all
quantities are in atomic units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ModelError(ValueError):
    """Invalid model parameters or topology."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid for the nuclear coordinate with its momentum dual.

    ``n_points`` must be a power of two (>= 64) for the transform-based
    kinetic step.  Momenta satisfy k*dx in (-pi, pi]: the Nyquist component
    is assigned +pi/dx, which is equivalent modulo 2*pi on the grid.
    """

    x_min: float
    x_max: float
    n_points: int
    x: np.ndarray = field(init=False, repr=False)
    k: np.ndarray = field(init=False, repr=False)
    dx: float = field(init=False)

    def __post_init__(self):
        n = int(self.n_points)
        if n < 64 or (n & (n - 1)) != 0:
            raise ModelError(f"n_points must be a power of two >= 64, got {n}")
        if not self.x_max > self.x_min:
            raise ModelError(f"empty domain [{self.x_min}, {self.x_max}]")
        dx = (self.x_max - self.x_min) / n
        x = self.x_min + dx * np.arange(n)
        k = 2.0 * np.pi * np.fft.fftfreq(n, d=dx)
        k[n // 2] = abs(k[n // 2])
        x.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "k", k)


@dataclass(frozen=True)
class DiabaticModel:
    """n-state diabatic potential matrix V(x) plus the nuclear mass.

    ``potential`` and ``gradient`` accept a scalar or an array of positions
    and return matrices of shape (..., n, n); the gradient is analytic.
    """

    name: str
    mass: float
    n_states: int
    parameters: dict
    _potential: Callable[[np.ndarray], np.ndarray]
    _gradient: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.mass <= 0:
            raise ModelError(f"mass must be positive, got {self.mass}")

    def potential(self, x) -> np.ndarray:
        xa = np.asarray(x, dtype=float)
        v = self._potential(np.atleast_1d(xa))
        return v[0] if xa.ndim == 0 else v

    def gradient(self, x) -> np.ndarray:
        xa = np.asarray(x, dtype=float)
        g = self._gradient(np.atleast_1d(xa))
        return g[0] if xa.ndim == 0 else g


def _require_positive(**kwargs):
    for name, value in kwargs.items():
        if not value > 0:
            raise ModelError(f"parameter {name} must be positive, got {value}")


def single_crossing(a: float = 0.01, b: float = 1.6, c: float = 0.005,
                    d: float = 1.0, mass: float = 2000.0) -> DiabaticModel:
    """Single avoided crossing: odd-sigmoidal diabats with a Gaussian coupling.

    V11 = sign(x) * a * (1 - exp(-b|x|)), V22 = -V11, V12 = c * exp(-d x^2).
    The diabats cross at the origin where the adiabatic gap equals 2c.
    """
    _require_positive(a=a, b=b, c=c, d=d, mass=mass)

    def pot(x):
        v11 = np.sign(x) * a * (1.0 - np.exp(-b * np.abs(x)))
        v12 = c * np.exp(-d * x * x)
        out = np.empty(x.shape + (2, 2))
        out[..., 0, 0] = v11
        out[..., 1, 1] = -v11
        out[..., 0, 1] = out[..., 1, 0] = v12
        return out

    def grad(x):
        dv11 = a * b * np.exp(-b * np.abs(x))
        dv12 = -2.0 * c * d * x * np.exp(-d * x * x)
        out = np.empty(x.shape + (2, 2))
        out[..., 0, 0] = dv11
        out[..., 1, 1] = -dv11
        out[..., 0, 1] = out[..., 1, 0] = dv12
        return out

    return DiabaticModel("single_crossing", mass, 2,
                         {"a": a, "b": b, "c": c, "d": d, "mass": mass}, pot, grad)


def dual_crossing(a: float = 0.1, b: float = 0.28, c: float = 0.015,
                  d: float = 0.06, e0: float = 0.05, mass: float = 2000.0) -> DiabaticModel:
    """Dual avoided crossing: flat diabat crossed twice by a Gaussian dip.

    V11 = 0, V22 = -a * exp(-b x^2) + e0, V12 = c * exp(-d x^2).  The two
    coupling windows sit symmetrically where V22 crosses zero.
    """
    _require_positive(a=a, b=b, c=c, d=d, e0=e0, mass=mass)
    if e0 >= a:
        raise ModelError("need e0 < a so the dipping diabat crosses the flat one")

    def pot(x):
        v22 = -a * np.exp(-b * x * x) + e0
        v12 = c * np.exp(-d * x * x)
        out = np.empty(x.shape + (2, 2))
        out[..., 0, 0] = 0.0
        out[..., 1, 1] = v22
        out[..., 0, 1] = out[..., 1, 0] = v12
        return out

    def grad(x):
        dv22 = 2.0 * a * b * x * np.exp(-b * x * x)
        dv12 = -2.0 * c * d * x * np.exp(-d * x * x)
        out = np.empty(x.shape + (2, 2))
        out[..., 0, 0] = 0.0
        out[..., 1, 1] = dv22
        out[..., 0, 1] = out[..., 1, 0] = dv12
        return out

    return DiabaticModel("dual_crossing", mass, 2,
                         {"a": a, "b": b, "c": c, "d": d, "e0": e0, "mass": mass}, pot, grad)


def surface_scattering(wall_height: float = 1.0, wall_range: float = 1.0,
                       excitation: float = 0.04, well_depth: float = 0.02,
                       well_center: float = 5.0, well_width: float = 1.5,
                       coupling: float = 0.002, coupling_center: float = 3.6,
                       coupling_width: float = 1.0, mass: float = 2000.0) -> DiabaticModel:
    """Atom-surface scattering: reflective lower adiabat, trapping upper adiabat.

    The ground diabat is an exponential wall decaying to zero; the excited
    diabat sits ``excitation`` higher asymptotically with a Gaussian well of
    depth ``well_depth`` at ``well_center``.  A localized Gaussian coupling
    near the diabatic crossing lets an incoming atom on the lower surface
    either reflect or transfer and (below the asymptote) stay trapped in the
    well.  Parameter sets that fail this topology are rejected.
    """
    _require_positive(wall_height=wall_height, wall_range=wall_range,
                      excitation=excitation, well_depth=well_depth,
                      well_width=well_width, coupling=coupling,
                      coupling_width=coupling_width, mass=mass)
    if well_depth >= excitation:
        raise ModelError("well must stay above the ground-state asymptote "
                         "(well_depth < excitation)")

    def pot(x):
        v11 = wall_height * np.exp(-x / wall_range)
        v22 = excitation - well_depth * np.exp(-((x - well_center) / well_width) ** 2 / 2.0)
        v12 = coupling * np.exp(-((x - coupling_center) / coupling_width) ** 2 / 2.0)
        out = np.empty(x.shape + (2, 2))
        out[..., 0, 0] = v11
        out[..., 1, 1] = v22
        out[..., 0, 1] = out[..., 1, 0] = v12
        return out

    def grad(x):
        dv11 = -wall_height / wall_range * np.exp(-x / wall_range)
        u = (x - well_center) / well_width
        dv22 = well_depth * u / well_width * np.exp(-u * u / 2.0)
        w = (x - coupling_center) / coupling_width
        dv12 = -coupling * w / coupling_width * np.exp(-w * w / 2.0)
        out = np.empty(x.shape + (2, 2))
        out[..., 0, 0] = dv11
        out[..., 1, 1] = dv22
        out[..., 0, 1] = out[..., 1, 0] = dv12
        return out

    model = DiabaticModel(
        "surface_scattering", mass, 2,
        {"wall_height": wall_height, "wall_range": wall_range,
         "excitation": excitation, "well_depth": well_depth,
         "well_center": well_center, "well_width": well_width,
         "coupling": coupling, "coupling_center": coupling_center,
         "coupling_width": coupling_width, "mass": mass},
        pot, grad)
    _check_scattering_topology(model)
    return model


def _check_scattering_topology(model: DiabaticModel):
    probe = np.linspace(0.5, 30.0, 1200)
    energies = np.linalg.eigvalsh(model.potential(probe))
    lower, upper = energies[:, 0], energies[:, 1]
    i_min = int(np.argmin(upper))
    if i_min in (0, len(probe) - 1):
        raise ModelError("upper adiabat has no interior well")
    curv = upper[i_min - 1] - 2.0 * upper[i_min] + upper[i_min + 1]
    if curv <= 0:
        raise ModelError("upper adiabat minimum is not a well (non-positive curvature)")
    if np.any(np.diff(lower) > 1e-12):
        raise ModelError("lower adiabat is not monotonically repulsive")
    gap = upper[-1] - lower[-1]
    vmax = float(np.max(np.abs(model.potential(probe)[:, 0, 1])))
    if gap < 5.0 * vmax:
        raise ModelError(f"asymptotic gap {gap:.3e} is not large against "
                         f"the coupling {vmax:.3e}")


MODELS: dict[str, Callable[..., DiabaticModel]] = {
    "single_crossing": single_crossing,
    "dual_crossing": dual_crossing,
    "surface_scattering": surface_scattering,
}

# (x_min, x_max, n_points) defaults keeping test-horizon wavepackets > 5 sigma
# away from the boundaries.
DEFAULT_GRIDS: dict[str, tuple[float, float, int]] = {
    "single_crossing": (-40.0, 40.0, 1024),
    "dual_crossing": (-32.0, 32.0, 2048),
    "surface_scattering": (-2.0, 46.0, 1024),
}


def make_model(name: str, **overrides) -> DiabaticModel:
    """Instantiate a registered model by name with parameter overrides."""
    try:
        factory = MODELS[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None
    return factory(**overrides)


def default_grid(name: str) -> SpatialGrid:
    x_min, x_max, n = DEFAULT_GRIDS[name]
    return SpatialGrid(x_min, x_max, n)
