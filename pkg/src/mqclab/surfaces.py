"""Born-Oppenheimer surfaces: per-point diagonalization and derivative couplings.

The diabatic potential matrix is diagonalized exactly at every grid point;
eigenvector signs are fixed by continuity along the grid so that the first-
and second-derivative couplings obtained by finite differences are smooth.
Representation transforms between the diabatic and adiabatic pictures and
the coupling-free mask used to delimit branching windows live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .models import DiabaticModel, SpatialGrid

DEGENERACY_FLAG = 1e-12


@dataclass(frozen=True)
class AdiabaticSurfaces:
    """Adiabatic energies, gauge-fixed frames, and derivative couplings on a grid.

    ``energies[n, i]`` is the n-th surface at grid point i (ascending in n);
    ``frames[i]`` is the orthogonal matrix whose columns are the adiabatic
    states in the diabatic basis; ``d1[n, m, i]`` / ``d2[n, m, i]`` are the
    first/second derivative couplings (None until computed).  ``mass`` is
    carried along from the generating model for kinetic-energy bookkeeping.
    """

    grid: SpatialGrid
    mass: float
    energies: np.ndarray
    frames: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    degenerate: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return self.energies.shape[0]


def diagonalize(model: DiabaticModel, grid: SpatialGrid) -> AdiabaticSurfaces:
    """Eigendecompose V(x) at every grid point with sign-continuous gauge.

    The first point's eigenvectors get their largest-magnitude component made
    positive; every later point is sign-aligned with its left neighbour.
    Gaps below 1e-12 are flagged: sign continuity is unreliable there.
    """
    v = model.potential(grid.x)                       # (N, n, n)
    evals, evecs = np.linalg.eigh(v)                  # ascending eigenvalues
    n = evals.shape[1]
    for col in range(n):
        lead = np.argmax(np.abs(evecs[0, :, col]))
        if evecs[0, lead, col] < 0:
            evecs[0, :, col] = -evecs[0, :, col]
    # continuity: cumulative sign of consecutive overlaps per column
    overlaps = np.einsum("iac,iac->ic", evecs[:-1], evecs[1:])
    signs = np.cumprod(np.where(overlaps < 0, -1.0, 1.0), axis=0)
    evecs[1:] *= signs[:, None, :]
    gaps = np.min(np.diff(evals, axis=1), axis=1) if n > 1 else np.full(len(grid.x), np.inf)
    degenerate = gaps < DEGENERACY_FLAG
    energies = np.ascontiguousarray(evals.T)
    for arr in (energies, evecs, degenerate):
        arr.setflags(write=False)
    return AdiabaticSurfaces(grid=grid, mass=model.mass, energies=energies,
                             frames=evecs, degenerate=degenerate)


def _fd_weights(offsets: Sequence[int], order: int) -> np.ndarray:
    """Finite-difference weights for the given derivative order (unit spacing)."""
    offs = np.asarray(offsets, dtype=float)
    p = len(offs)
    a = np.vander(offs, p, increasing=True).T          # a[k, j] = offs[j]**k
    rhs = np.zeros(p)
    rhs[order] = float(math.factorial(order))
    return np.linalg.solve(a, rhs)


def _derivative(frames: np.ndarray, dx: float, order: int) -> np.ndarray:
    """Per-point derivative of the eigenvector field along the grid axis.

    Fourth-order central stencils in the interior, one-sided five-point
    stencils at the two points on each edge.
    """
    n_pts = frames.shape[0]
    out = np.zeros_like(frames)
    central = _fd_weights((-2, -1, 0, 1, 2), order)
    for w, off in zip(central, (-2, -1, 0, 1, 2)):
        if w != 0.0:
            out[2:n_pts - 2] += w * frames[2 + off:n_pts - 2 + off]
    for i, offsets in ((0, (0, 1, 2, 3, 4)), (1, (-1, 0, 1, 2, 3)),
                       (n_pts - 2, (-3, -2, -1, 0, 1)), (n_pts - 1, (-4, -3, -2, -1, 0))):
        w = _fd_weights(offsets, order)
        out[i] = np.tensordot(w, frames[[i + o for o in offsets]], axes=(0, 0))
    return out / dx ** order


def couplings(surfaces: AdiabaticSurfaces) -> AdiabaticSurfaces:
    """Fill in first- and second-order derivative couplings.

    d1[n, m, i] = <phi_n | d/dx phi_m> and d2[n, m, i] = <phi_n | d2/dx2 phi_m>,
    computed by differentiating the gauge-fixed eigenvector field.
    """
    dphi = _derivative(surfaces.frames, surfaces.grid.dx, 1)
    d2phi = _derivative(surfaces.frames, surfaces.grid.dx, 2)
    d1 = np.einsum("ian,iam->nmi", surfaces.frames, dphi)
    d2 = np.einsum("ian,iam->nmi", surfaces.frames, d2phi)
    d1.setflags(write=False)
    d2.setflags(write=False)
    return replace(surfaces, d1=d1, d2=d2)


def hellmann_feynman_d1(model: DiabaticModel, surfaces: AdiabaticSurfaces) -> np.ndarray:
    """Off-diagonal d1 from <phi_n|dV/dx|phi_m> / (e_m - e_n); cross-check route."""
    dv = model.gradient(surfaces.grid.x)
    num = np.einsum("ian,iab,ibm->nmi", surfaces.frames, dv, surfaces.frames)
    n = surfaces.n_states
    out = np.zeros_like(num)
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            out[a, b] = num[a, b] / (surfaces.energies[b] - surfaces.energies[a])
    return out


def to_adiabatic(psi: "np.ndarray | object", surfaces: AdiabaticSurfaces):
    """Transform a vibronic wavefunction from the diabatic to the adiabatic picture."""
    from .exact import VibronicWavefunction
    if not isinstance(psi, VibronicWavefunction):
        raise TypeError("expected a VibronicWavefunction")
    if psi.grid is not surfaces.grid and not _grids_match(psi.grid, surfaces.grid):
        raise ValueError("wavefunction and surfaces live on different grids")
    if psi.rep == "adiabatic":
        return psi
    amp = np.einsum("ian,ai->ni", surfaces.frames, psi.psi)
    return VibronicWavefunction(grid=psi.grid, rep="adiabatic", psi=amp, time=psi.time)


def to_diabatic(psi, surfaces: AdiabaticSurfaces):
    """Inverse of :func:`to_adiabatic` (frames are orthogonal per point)."""
    from .exact import VibronicWavefunction
    if not isinstance(psi, VibronicWavefunction):
        raise TypeError("expected a VibronicWavefunction")
    if psi.grid is not surfaces.grid and not _grids_match(psi.grid, surfaces.grid):
        raise ValueError("wavefunction and surfaces live on different grids")
    if psi.rep == "diabatic":
        return psi
    amp = np.einsum("ian,ni->ai", surfaces.frames, psi.psi)
    return VibronicWavefunction(grid=psi.grid, rep="diabatic", psi=amp, time=psi.time)


def _grids_match(a: SpatialGrid, b: SpatialGrid) -> bool:
    return (a.n_points == b.n_points and a.x_min == b.x_min and a.x_max == b.x_max)


def coupling_free_mask(surfaces: AdiabaticSurfaces, threshold: float | None = None) -> np.ndarray:
    """Boolean mask: True where off-diagonal derivative couplings are negligible.

    ``threshold`` bounds |d1| directly; |d2| is bounded by threshold**2, which
    matches how the two couplings scale against each other across an avoided
    crossing.  Default threshold: 1e-3 of the peak off-diagonal |d1|.
    """
    if surfaces.d1 is None or surfaces.d2 is None:
        raise ValueError("couplings not computed; call couplings() first")
    n = surfaces.n_states
    off = ~np.eye(n, dtype=bool)
    d1_off = np.max(np.abs(surfaces.d1[off]), axis=0)
    d2_off = np.max(np.abs(surfaces.d2[off]), axis=0)
    if threshold is None:
        threshold = 1e-3 * float(np.max(d1_off))
    return (d1_off < threshold) & (d2_off < threshold ** 2)


def mask_windows(grid: SpatialGrid, mask: np.ndarray,
                 margin: float = 0.0) -> list[tuple[float, float]]:
    """Contiguous False-regions of a mask as (x_lo, x_hi) intervals, dilated."""
    intervals: list[list[float]] = []
    inside = False
    for i, free in enumerate(mask):
        if not free and not inside:
            intervals.append([grid.x[i], grid.x[i]])
            inside = True
        elif not free:
            intervals[-1][1] = grid.x[i]
        else:
            inside = False
    dilated = [(lo - margin, hi + margin) for lo, hi in intervals]
    merged: list[tuple[float, float]] = []
    for lo, hi in dilated:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(hi, merged[-1][1]))
        else:
            merged.append((lo, hi))
    return merged


def surfaces_to_csv(surfaces: AdiabaticSurfaces, path) -> None:
    """Plot-ready CSV: x, adiabatic energies, and the 0-1 couplings."""
    if surfaces.d1 is None:
        raise ValueError("couplings not computed; call couplings() first")
    cols = [surfaces.grid.x] + [surfaces.energies[n] for n in range(surfaces.n_states)]
    header = ["x"] + [f"eps_{n}" for n in range(surfaces.n_states)]
    cols += [surfaces.d1[0, 1], surfaces.d2[0, 1]]
    header += ["d1_01", "d2_01"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")
