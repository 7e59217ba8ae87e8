"""Exact grid propagation of the coupled vibronic wavefunction.

Split-operator stepping in the diabatic representation: half kinetic step in
momentum space, full potential step by per-point matrix exponential, half
kinetic step.  The propagator validates its own step size against an energy
drift gate before committing to a run and serves as the accuracy oracle for
every trajectory-based engine in the package.

The branch machinery splits a wavefunction in the adiabatic picture into
electronic weights and unit-normalized conditional nuclear waves, with the
convention that the per-branch coefficient is the nonnegative branch norm
and all phase information rides on the conditional wave.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .models import DiabaticModel, SpatialGrid
from .surfaces import AdiabaticSurfaces, to_adiabatic
from .units import HBAR

EMPTY_BRANCH = 1e-8


class PropagationError(RuntimeError):
    pass


class SupportError(ValueError):
    """Initial packet too close to the grid boundary or too narrow."""


@dataclass
class VibronicWavefunction:
    """Per-electronic-state complex amplitudes on the spatial grid.

    Normalized so that sum_n integral |psi[n]|^2 dx = 1.  ``rep`` records
    whether the electronic axis refers to the diabatic or adiabatic basis.
    """

    grid: SpatialGrid
    rep: str
    psi: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.rep not in ("diabatic", "adiabatic"):
            raise ValueError(f"rep must be 'diabatic' or 'adiabatic', got {self.rep!r}")
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.ndim != 2 or self.psi.shape[1] != self.grid.n_points:
            raise ValueError(f"psi must have shape (n_states, {self.grid.n_points})")
        norm = self.norm()
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"wavefunction norm {norm:.17g}, expected 1")

    @property
    def n_states(self) -> int:
        return self.psi.shape[0]

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2) * self.grid.dx))

    def branch_weights(self) -> np.ndarray:
        return np.sum(np.abs(self.psi) ** 2, axis=1) * self.grid.dx

    def copy(self) -> "VibronicWavefunction":
        return VibronicWavefunction(self.grid, self.rep, self.psi.copy(), self.time)


def gaussian_packet(grid: SpatialGrid, x0: float, k0: float, sigma: float,
                    state: int = 0, n_states: int = 2,
                    rep: str = "diabatic") -> VibronicWavefunction:
    """Normalized Gaussian exp(-(x-x0)^2/ (4 sigma^2) + i k0 x) on one state.

    Position variance of |psi|^2 is sigma^2.  The packet must sit more than
    5 sigma from both boundaries and be resolved by the grid (sigma > 2 dx).
    """
    if sigma <= 2.0 * grid.dx:
        raise SupportError(f"sigma {sigma} must exceed 2 dx = {2 * grid.dx}")
    if x0 - 5.0 * sigma < grid.x_min or x0 + 5.0 * sigma > grid.x_max:
        raise SupportError(f"packet at x0={x0}, sigma={sigma} is within 5 sigma "
                           f"of the boundary [{grid.x_min}, {grid.x_max}]")
    if not 0 <= state < n_states:
        raise ValueError(f"state {state} out of range for {n_states} states")
    psi = np.zeros((n_states, grid.n_points), dtype=complex)
    envelope = np.exp(-((grid.x - x0) ** 2) / (4.0 * sigma ** 2) + 1j * k0 * grid.x)
    psi[state] = envelope / np.sqrt(np.sum(np.abs(envelope) ** 2) * grid.dx)
    return VibronicWavefunction(grid=grid, rep=rep, psi=psi)


def _potential_propagator(model: DiabaticModel, grid: SpatialGrid, dt: float) -> np.ndarray:
    """exp(-i V(x) dt / hbar) at every grid point via eigendecomposition."""
    v = model.potential(grid.x)
    evals, evecs = np.linalg.eigh(v)
    phases = np.exp(-1j * evals * dt / HBAR)
    return np.einsum("iab,ib,icb->iac", evecs, phases, evecs.conj())


def kinetic_energy(psi: VibronicWavefunction, mass: float) -> float:
    """<T> with T diagonal in momentum space."""
    psi_k = np.fft.fft(psi.psi, axis=1)
    weights = np.sum(np.abs(psi_k) ** 2, axis=0)
    t_k = (HBAR * psi.grid.k) ** 2 / (2.0 * mass)
    return float(np.sum(t_k * weights) / np.sum(np.abs(psi_k) ** 2))


def potential_energy(psi: VibronicWavefunction, model: DiabaticModel) -> float:
    if psi.rep != "diabatic":
        raise ValueError("potential energy is evaluated in the diabatic picture")
    v = model.potential(psi.grid.x)
    dens = np.einsum("ai,iab,bi->", psi.psi.conj(), v, psi.psi) * psi.grid.dx
    return float(np.real(dens))


def total_energy(psi: VibronicWavefunction, model: DiabaticModel) -> float:
    return kinetic_energy(psi, model.mass) + potential_energy(psi, model)


@dataclass
class ObservationSeries:
    """Time series of named observables sampled during a propagation."""

    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)

    def append(self, row: Sequence[float]):
        self.rows.append([float(v) for v in row])

    def as_dict(self) -> dict[str, np.ndarray]:
        arr = np.asarray(self.rows)
        return {name: arr[:, j] for j, name in enumerate(self.columns)}

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.rows)[:, self.columns.index(name)]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")


@dataclass
class PropagationResult:
    psi: VibronicWavefunction
    series: ObservationSeries
    dt: float                      # effective step after gate halvings
    n_steps: int
    halvings: int
    norm_drift: float
    energy_drift: float
    boundary_warning_step: int | None
    snapshots: list[VibronicWavefunction] = field(default_factory=list)


def _standard_columns(n_states: int, with_surfaces: bool) -> list[str]:
    cols = ["t", "norm", "energy"]
    if with_surfaces:
        cols += [f"weight_{n}" for n in range(n_states)]
        cols += [f"x_mean_{n}" for n in range(n_states)]
        cols += [f"p_mean_{n}" for n in range(n_states)]
        cols += ["entropy"]
        cols += [f"branch_energy_{n}" for n in range(n_states)]
        for a in range(n_states):
            for b in range(a + 1, n_states):
                cols += [f"coh_re_{a}{b}", f"coh_im_{a}{b}"]
    else:
        cols += [f"pop_dia_{n}" for n in range(n_states)]
    return cols


def electronic_density(psi_ad: VibronicWavefunction) -> np.ndarray:
    """Electronic reduced density rho[n, m] = integral psi_n psi_m^* dx."""
    return psi_ad.psi @ psi_ad.psi.conj().T * psi_ad.grid.dx


def _entropy_of_density(rho: np.ndarray) -> float:
    evals = np.clip(np.linalg.eigvalsh(rho), 0.0, None)
    evals = evals[evals > 1e-15]
    return float(-np.sum(evals * np.log(evals)))


def _branch_means(psi_ad: VibronicWavefunction, mass: float):
    grid = psi_ad.grid
    weights = psi_ad.branch_weights()
    x_mean = np.zeros(psi_ad.n_states)
    p_mean = np.zeros(psi_ad.n_states)
    for n in range(psi_ad.n_states):
        w = weights[n]
        if w < EMPTY_BRANCH ** 2:
            continue
        dens = np.abs(psi_ad.psi[n]) ** 2
        x_mean[n] = float(np.sum(grid.x * dens) * grid.dx / w)
        chi_k = np.fft.fft(psi_ad.psi[n])
        wk = np.abs(chi_k) ** 2
        p_mean[n] = float(np.sum(HBAR * grid.k * wk) / np.sum(wk))
    return weights, x_mean, p_mean


def _observe(psi: VibronicWavefunction, model: DiabaticModel,
             surfaces: AdiabaticSurfaces | None, columns: list[str]) -> list[float]:
    row = [psi.time, psi.norm(), total_energy(psi, model)]
    if surfaces is not None:
        psi_ad = to_adiabatic(psi, surfaces)
        weights, x_mean, p_mean = _branch_means(psi_ad, model.mass)
        rho = electronic_density(psi_ad)
        dec = decompose(psi_ad, surfaces)
        row += list(weights) + list(x_mean) + list(p_mean)
        row += [_entropy_of_density(rho)]
        row += list(dec.energies)
        for a in range(psi.n_states):
            for b in range(a + 1, psi.n_states):
                row += [float(np.real(rho[a, b])), float(np.imag(rho[a, b]))]
    else:
        row += list(psi.branch_weights())
    return row


def propagate(psi: VibronicWavefunction, model: DiabaticModel, dt: float, n_steps: int,
              surfaces: AdiabaticSurfaces | None = None, observer_stride: int = 10,
              observers: Sequence[tuple[str, Callable[[VibronicWavefunction], float]]] = (),
              drift_gate: float = 1e-9, max_halvings: int = 8,
              boundary_gate: float = 1e-6, keep_snapshots: bool = False,
              absorber: np.ndarray | None = None) -> PropagationResult:
    """Propagate under the time-independent vibronic Hamiltonian.

    The step size is validated first: a short trial run must show per-step
    relative energy drift below ``drift_gate``, otherwise dt is halved (and
    n_steps/stride doubled) up to ``max_halvings`` times.  Norm is conserved
    by construction; energy and boundary leakage are monitored at sampling
    times.  ``absorber`` (values in [0, 1], applied each step) breaks norm
    conservation deliberately and disables the norm gate.
    """
    if psi.rep != "diabatic":
        raise ValueError("propagation runs in the diabatic representation; "
                         "transform with to_diabatic() first")
    halvings = 0
    while True:
        if _trial_drift(psi, model, dt) <= drift_gate or absorber is not None:
            break
        if halvings >= max_halvings:
            raise PropagationError(
                f"energy drift gate {drift_gate:g} not met after {max_halvings} halvings")
        dt *= 0.5
        n_steps *= 2
        observer_stride *= 2
        halvings += 1

    grid = psi.grid
    kin_half = np.exp(-1j * (HBAR * grid.k) ** 2 * (dt / 2.0) / (2.0 * model.mass * HBAR))
    pot = _potential_propagator(model, grid, dt)
    edge = max(2, grid.n_points // 64)

    work = psi.copy()
    columns = _standard_columns(psi.n_states, surfaces is not None)
    columns += [name for name, _ in observers]
    series = ObservationSeries(columns=columns)
    snapshots: list[VibronicWavefunction] = []

    def sample(step: int):
        row = _observe(work, model, surfaces, columns)
        for _, fn in observers:
            row.append(float(fn(work)))
        series.append(row)
        if keep_snapshots:
            snapshots.append(work.copy())

    e0 = total_energy(work, model)
    norm0 = work.norm()
    sample(0)
    boundary_step = None
    max_energy_dev = 0.0
    max_norm_dev = 0.0
    for step in range(1, n_steps + 1):
        amp = work.psi
        amp = np.fft.ifft(kin_half * np.fft.fft(amp, axis=1), axis=1)
        amp = np.einsum("iac,ci->ai", pot, amp)
        amp = np.fft.ifft(kin_half * np.fft.fft(amp, axis=1), axis=1)
        if absorber is not None:
            amp = amp * absorber
        work.psi = amp
        work.time += dt
        if step % observer_stride == 0 or step == n_steps:
            if not np.all(np.isfinite(amp)):
                raise PropagationError(f"non-finite amplitude at step {step}")
            if boundary_step is None:
                edge_density = (np.sum(np.abs(amp[:, :edge]) ** 2)
                                + np.sum(np.abs(amp[:, -edge:]) ** 2)) * grid.dx
                if edge_density > boundary_gate:
                    boundary_step = step
            if absorber is None:
                max_norm_dev = max(max_norm_dev, abs(work.norm() - norm0))
                max_energy_dev = max(max_energy_dev,
                                     abs(total_energy(work, model) - e0))
            sample(step)

    scale = max(abs(e0), 1e-30)
    return PropagationResult(psi=work, series=series, dt=dt, n_steps=n_steps,
                             halvings=halvings, norm_drift=max_norm_dev,
                             energy_drift=max_energy_dev / scale,
                             boundary_warning_step=boundary_step,
                             snapshots=snapshots)


def _trial_drift(psi: VibronicWavefunction, model: DiabaticModel, dt: float,
                 n_trial: int = 16) -> float:
    grid = psi.grid
    kin_half = np.exp(-1j * (HBAR * grid.k) ** 2 * (dt / 2.0) / (2.0 * model.mass * HBAR))
    pot = _potential_propagator(model, grid, dt)
    work = psi.copy()
    energies = [total_energy(work, model)]
    for _ in range(n_trial):
        amp = np.fft.ifft(kin_half * np.fft.fft(work.psi, axis=1), axis=1)
        amp = np.einsum("iac,ci->ai", pot, amp)
        work.psi = np.fft.ifft(kin_half * np.fft.fft(amp, axis=1), axis=1)
        energies.append(total_energy(work, model))
    scale = max(abs(energies[0]), 1e-30)
    return float(np.max(np.abs(np.diff(energies)))) / scale


def propagate_on_surface(chi: np.ndarray, grid: SpatialGrid, potential: np.ndarray,
                         mass: float, dt: float, n_steps: int) -> np.ndarray:
    """Split-operator propagation of a scalar wave on a single surface."""
    kin_half = np.exp(-1j * (HBAR * grid.k) ** 2 * (dt / 2.0) / (2.0 * mass * HBAR))
    pot_phase = np.exp(-1j * potential * dt / HBAR)
    work = np.asarray(chi, dtype=complex).copy()
    for _ in range(n_steps):
        work = np.fft.ifft(kin_half * np.fft.fft(work))
        work = pot_phase * work
        work = np.fft.ifft(kin_half * np.fft.fft(work))
    return work


@dataclass
class BranchDecomposition:
    """Electronic weights and conditional nuclear waves of a vibronic state.

    ``branch_norms[n]`` is the nonnegative norm of the n-th adiabatic
    component; the conditional wave carries all the phase.  Branches with
    negligible norm are flagged empty instead of being renormalized.
    """

    weights: np.ndarray
    branch_norms: np.ndarray
    conditional: np.ndarray
    energies: np.ndarray
    empty_flags: np.ndarray


def decompose(psi: VibronicWavefunction, surfaces: AdiabaticSurfaces) -> BranchDecomposition:
    """Split an adiabatic-picture wavefunction into branch data.

    Per-branch energy is <chi_n | T + eps_n | chi_n> over the unit-normalized
    conditional wave.
    """
    if psi.rep != "adiabatic":
        raise ValueError("decompose expects the adiabatic representation")
    grid = psi.grid
    n_states = psi.n_states
    norms = np.sqrt(np.sum(np.abs(psi.psi) ** 2, axis=1) * grid.dx)
    empty = norms < EMPTY_BRANCH
    conditional = np.zeros_like(psi.psi)
    energies = np.zeros(n_states)
    t_k = (HBAR * grid.k) ** 2 / (2.0 * surfaces.mass)
    for n in range(n_states):
        if empty[n]:
            continue
        chi = psi.psi[n] / norms[n]
        conditional[n] = chi
        chi_k = np.fft.fft(chi)
        kin = np.sum(t_k * np.abs(chi_k) ** 2) / np.sum(np.abs(chi_k) ** 2)
        pot = np.sum(surfaces.energies[n] * np.abs(chi) ** 2) * grid.dx
        energies[n] = float(kin + pot)
    return BranchDecomposition(weights=norms ** 2, branch_norms=norms,
                               conditional=conditional, energies=energies,
                               empty_flags=empty)


@dataclass
class ReducedEquationsReport:
    """Outcome of the decoupled-branch consistency check on a coupling-free interval."""

    applicable: bool
    reason: str
    max_weight_drift: float
    phase_rate_residual: float
    conditional_fidelity: float
    per_branch_fidelity: np.ndarray | None = None


def check_reduced_equations(snapshots: Sequence[VibronicWavefunction],
                            surfaces: AdiabaticSurfaces, mask: np.ndarray,
                            support_gate: float = 1e-6) -> ReducedEquationsReport:
    """Verify decoupled branch evolution between coupling regions.

    Over an interval where every occupied branch is supported inside the
    coupling-free mask, (a) branch weights must stay constant, (b) the global
    phase rate of each conditional wave must match minus its branch energy,
    and (c) each conditional wave must match an independent single-surface
    propagation of its own initial snapshot.
    """
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    snaps = [to_adiabatic(s, surfaces) for s in snapshots]
    grid = snaps[0].grid
    n_states = snaps[0].n_states
    weights0 = snaps[0].branch_weights()
    occupied = [n for n in range(n_states) if weights0[n] > EMPTY_BRANCH ** 2]

    inside = mask.astype(float)
    for s in snaps:
        for n in occupied:
            dens = np.abs(s.psi[n]) ** 2 * grid.dx
            w = float(np.sum(dens))
            if w > EMPTY_BRANCH ** 2 and float(np.sum(dens * inside)) / w < 1.0 - support_gate:
                return ReducedEquationsReport(
                    applicable=False,
                    reason=f"branch {n} leaves the coupling-free region at t={s.time:g}",
                    max_weight_drift=np.nan, phase_rate_residual=np.nan,
                    conditional_fidelity=np.nan)

    weight_drift = max(float(np.max(np.abs(s.branch_weights() - weights0)))
                       for s in snaps)

    dt_sample = snaps[1].time - snaps[0].time
    sub = max(1, int(np.ceil(dt_sample / 0.05)))
    dt_ss = dt_sample / sub
    dec0 = decompose(snaps[0], surfaces)

    fidelities = np.ones(n_states)
    phase_residual = 0.0
    for n in occupied:
        chi_ref = dec0.conditional[n].copy()
        for j in range(1, len(snaps)):
            chi_ref = propagate_on_surface(chi_ref, grid, surfaces.energies[n],
                                           surfaces.mass, dt_ss, sub)
            dec_j = decompose(snaps[j], surfaces)
            if dec_j.empty_flags[n]:
                continue
            overlap = np.vdot(chi_ref, dec_j.conditional[n]) * grid.dx
            fidelities[n] = min(fidelities[n], abs(overlap))
            # phase rate of the full-propagation conditional wave vs -E_n/hbar
            dec_prev = decompose(snaps[j - 1], surfaces)
            ov = np.vdot(dec_prev.conditional[n], dec_j.conditional[n]) * grid.dx
            rate = float(np.angle(ov)) / dt_sample
            expected = -0.5 * (dec_prev.energies[n] + dec_j.energies[n]) / HBAR
            scale = max(abs(expected), 1e-12)
            phase_residual = max(phase_residual, abs(rate - expected) / scale)

    return ReducedEquationsReport(
        applicable=True, reason="",
        max_weight_drift=weight_drift,
        phase_rate_residual=phase_residual,
        conditional_fidelity=float(np.min(fidelities[occupied])),
        per_branch_fidelity=fidelities)


@dataclass(frozen=True)
class Channel:
    """Declared outcome channel: electronic state plus a position interval."""

    name: str
    state: int
    x_lo: float
    x_hi: float
    is_well: bool = False


class ChannelError(ValueError):
    pass


def branch_overlap(psi_ad: VibronicWavefunction, n: int = 0, m: int = 1) -> float:
    """Magnitude overlap integral |chi_n| |chi_m| dx of unit-normalized branches."""
    dec_norms = np.sqrt(np.sum(np.abs(psi_ad.psi) ** 2, axis=1) * psi_ad.grid.dx)
    if dec_norms[n] < EMPTY_BRANCH or dec_norms[m] < EMPTY_BRANCH:
        return 0.0
    a = np.abs(psi_ad.psi[n]) / dec_norms[n]
    b = np.abs(psi_ad.psi[m]) / dec_norms[m]
    return float(np.sum(a * b) * psi_ad.grid.dx)


def scattering_outcomes(psi: VibronicWavefunction, channels: Sequence[Channel],
                        overlap_gate: float = 1e-3,
                        leak_gate: float = 1e-3) -> dict[str, float]:
    """Integrate |psi_n|^2 over each declared channel region.

    Requires the branches to be asymptotically separated (magnitude overlap
    below ``overlap_gate``) unless a channel is declared as a trapping well.
    Probability not claimed by any channel beyond ``leak_gate`` is an error
    naming the offending state and location.
    """
    if psi.rep != "adiabatic":
        raise ValueError("scattering outcomes are defined over adiabatic branches")
    grid = psi.grid
    if not any(ch.is_well for ch in channels):
        ov = branch_overlap(psi)
        if ov >= overlap_gate:
            raise ChannelError(f"branches not separated: overlap {ov:.3e} >= {overlap_gate:g}")
    dens = np.abs(psi.psi) ** 2 * grid.dx
    claimed = np.zeros_like(dens, dtype=bool)
    probs: dict[str, float] = {}
    for ch in channels:
        sel = (grid.x >= ch.x_lo) & (grid.x <= ch.x_hi)
        probs[ch.name] = float(np.sum(dens[ch.state][sel]))
        claimed[ch.state] |= sel
    residual = float(np.sum(dens[~claimed]))
    if residual > leak_gate:
        unclaimed = dens * ~claimed
        state, idx = np.unravel_index(np.argmax(unclaimed), unclaimed.shape)
        raise ChannelError(
            f"unassigned probability {residual:.3e} (peak on state {state} "
            f"near x = {grid.x[idx]:.3f})")
    return probs


def inject_branch_phase(psi: VibronicWavefunction, surfaces: AdiabaticSurfaces,
                        branch: int, phase: float) -> VibronicWavefunction:
    """Multiply one adiabatic branch by exp(i phase); returns a diabatic state."""
    from .surfaces import to_diabatic
    psi_ad = to_adiabatic(psi, surfaces)
    amp = psi_ad.psi.copy()
    amp[branch] = amp[branch] * np.exp(1j * phase)
    shifted = VibronicWavefunction(grid=psi.grid, rep="adiabatic", psi=amp, time=psi.time)
    return to_diabatic(shifted, surfaces)
