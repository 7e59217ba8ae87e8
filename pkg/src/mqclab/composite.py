"""Finite-dimensional subsystem-environment algebra.

Dense linear algebra for bipartite Hilbert spaces small enough to treat
exactly (a few levels per factor).  The module provides product/entangled
state containers, Schmidt analysis, partial traces, and two families of
synthesized unitaries:

* pointer evolutions, which act block-diagonally on a fixed subsystem
  frame so each frame vector stays separable from the environment while
  imprinting a conditional environment record;
* preferred evolutions, where the special subsystem vectors depend
  parametrically on an environment label and each sector evolves without
  mixing into the others.

Every evolution is assembled as an explicit dense unitary so that all
structural claims (record formation, sector conservation, diagonal
equivalence of pure states and dephased mixtures) can be checked by
brute-force matrix arithmetic with no shortcuts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NORM_TOL = 1e-10
UNITARY_TOL = 1e-12
ZERO_BRANCH = 1e-14


class DimensionMismatchError(ValueError):
    """Operands live on incompatible spaces."""


class NotNormalizedError(ValueError):
    def __init__(self, norm: float, what: str = "state"):
        self.norm = float(norm)
        super().__init__(f"{what} has norm {self.norm:.17g}, expected 1 within {NORM_TOL:g}")


class NotUnitaryError(ValueError):
    def __init__(self, defect: float, what: str = "matrix"):
        self.defect = float(defect)
        super().__init__(f"{what} deviates from unitarity by {self.defect:.3e}")


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected a matrix, got shape {a.shape}")
    return a


def unitarity_defect(u: np.ndarray) -> float:
    u = _as_matrix(u)
    if u.shape[0] != u.shape[1]:
        return np.inf
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def require_unitary(u, tol: float = NORM_TOL, what: str = "matrix") -> np.ndarray:
    u = _as_matrix(u)
    defect = unitarity_defect(u)
    if defect > tol:
        raise NotUnitaryError(defect, what)
    return u


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-like unitary from the QR of a seeded complex Gaussian matrix."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


@dataclass(frozen=True)
class CompositeState:
    """Pure state of a subsystem (rows) tensored with an environment (columns).

    ``amp[a, e]`` is the amplitude on subsystem basis vector ``a`` and
    environment basis vector ``e``.  The stored amplitude matrix is
    renormalized to machine precision after an input-tolerance check.
    """

    amp: np.ndarray
    labels: tuple[str, str] | None = None

    def __post_init__(self):
        amp = _as_matrix(self.amp)
        if amp.shape[0] < 1 or amp.shape[1] < 1:
            raise DimensionMismatchError(f"amplitude matrix has empty axis: {amp.shape}")
        norm = float(np.linalg.norm(amp))
        if abs(norm - 1.0) > NORM_TOL:
            raise NotNormalizedError(norm, "composite state")
        amp = amp / norm
        amp.setflags(write=False)
        object.__setattr__(self, "amp", amp)

    @property
    def dim_A(self) -> int:
        return self.amp.shape[0]

    @property
    def dim_E(self) -> int:
        return self.amp.shape[1]

    def vector(self) -> np.ndarray:
        """Flatten to a state vector with index (a, e) -> a * dim_E + e."""
        return self.amp.reshape(-1)

    def density(self) -> "DensityOperator":
        v = self.vector()
        return DensityOperator(np.outer(v, v.conj()))


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian, unit-trace, positive-semidefinite operator."""

    mat: np.ndarray

    def __post_init__(self):
        m = _as_matrix(self.mat)
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatchError(f"density operator must be square, got {m.shape}")
        herm = float(np.max(np.abs(m - m.conj().T)))
        if herm > 1e-12:
            raise ValueError(f"density operator not Hermitian: defect {herm:.3e}")
        tr = complex(np.trace(m))
        if abs(tr - 1.0) > 1e-12:
            raise ValueError(f"density operator trace {tr!r}, expected 1")
        m = 0.5 * (m + m.conj().T)
        evals = np.linalg.eigvalsh(m)
        if evals.min() < -1e-10:
            raise ValueError(f"density operator has negative eigenvalue {evals.min():.3e}")
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def purity(self) -> float:
        return float(np.real(np.trace(self.mat @ self.mat)))

    def entropy(self) -> float:
        """Von Neumann entropy in nats."""
        evals = np.clip(np.linalg.eigvalsh(self.mat), 0.0, None)
        evals = evals[evals > 1e-15]
        return float(-np.sum(evals * np.log(evals)))


def compose(sub: Sequence[complex], env: Sequence[complex]) -> CompositeState:
    """Product state from normalized subsystem and environment vectors."""
    s = np.asarray(sub, dtype=complex).reshape(-1)
    e = np.asarray(env, dtype=complex).reshape(-1)
    for name, v in (("subsystem", s), ("environment", e)):
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > NORM_TOL:
            raise NotNormalizedError(norm, f"{name} factor")
    return CompositeState(np.outer(s / np.linalg.norm(s), e / np.linalg.norm(e)))


@dataclass(frozen=True)
class RebasisBranch:
    """One row of a subsystem re-expansion: coefficient and environment record.

    ``record`` is None (and ``defined`` False) when the branch amplitude is
    below the zero-branch threshold; renormalizing noise would be meaningless.
    """

    coeff: complex
    record: np.ndarray | None

    @property
    def defined(self) -> bool:
        return self.record is not None


def rebasis_subsystem(state: CompositeState, new_frame: np.ndarray) -> list[RebasisBranch]:
    """Re-expand a bipartite state over the columns of a new subsystem frame.

    For each new subsystem vector the environment part is split into a
    complex coefficient ``b_l`` and a unit-norm record, with
    ``b_l * record_l`` equal to the projection of the state onto that vector.
    Records of different branches are generally not orthogonal.
    """
    frame = require_unitary(new_frame, NORM_TOL, "subsystem frame")
    if frame.shape[0] != state.dim_A:
        raise DimensionMismatchError(
            f"frame dimension {frame.shape[0]} != subsystem dimension {state.dim_A}")
    rows = frame.conj().T @ state.amp
    branches = []
    for l in range(state.dim_A):
        b = np.linalg.norm(rows[l])
        if b < ZERO_BRANCH:
            branches.append(RebasisBranch(coeff=0.0 + 0.0j, record=None))
        else:
            rec = rows[l] / b
            rec.setflags(write=False)
            branches.append(RebasisBranch(coeff=complex(b), record=rec))
    return branches


def rebasis_reconstruct(frame: np.ndarray, branches: Sequence[RebasisBranch],
                        dim_E: int) -> np.ndarray:
    """Recombine rebasis branches; inverse of :func:`rebasis_subsystem`."""
    frame = _as_matrix(frame)
    amp = np.zeros((frame.shape[0], dim_E), dtype=complex)
    for l, br in enumerate(branches):
        if br.defined:
            amp += br.coeff * np.outer(frame[:, l], br.record)
    return amp


@dataclass(frozen=True)
class SchmidtDecomposition:
    coefficients: np.ndarray      # descending, nonnegative
    sub_basis: np.ndarray         # columns
    env_basis: np.ndarray         # columns

    def rank(self, eps: float = 1e-10) -> int:
        return int(np.sum(self.coefficients > eps))


def schmidt(state: CompositeState) -> SchmidtDecomposition:
    """Schmidt decomposition via SVD of the amplitude matrix."""
    u, s, vh = np.linalg.svd(state.amp, full_matrices=False)
    # amp = sum_k s_k * outer(sub_basis[:, k], env_basis[:, k])
    return SchmidtDecomposition(coefficients=s, sub_basis=u, env_basis=vh.T)


def product_factors(state: CompositeState, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Factor a separable state as sub x env; raises if Schmidt rank > 1."""
    u, s, vh = np.linalg.svd(state.amp, full_matrices=False)
    if len(s) > 1 and s[1] > tol:
        raise ValueError(f"state is not a product state (second Schmidt value {s[1]:.3e})")
    return u[:, 0] * s[0], vh[0, :]


def partial_trace(rho: DensityOperator, dim_A: int, dim_E: int,
                  keep: str = "subsystem") -> DensityOperator:
    """Trace out one factor of a composite density operator."""
    if dim_A * dim_E != rho.dim:
        raise DimensionMismatchError(
            f"cannot factor dimension {rho.dim} as {dim_A} x {dim_E}")
    t = rho.mat.reshape(dim_A, dim_E, dim_A, dim_E)
    if keep == "subsystem":
        reduced = np.einsum("aebe->ab", t)
    elif keep == "environment":
        reduced = np.einsum("aeaf->ef", t)
    else:
        raise ValueError(f"keep must be 'subsystem' or 'environment', got {keep!r}")
    return DensityOperator(reduced)


@dataclass(frozen=True)
class PointerEvolution:
    """Unitary acting block-diagonally on a fixed subsystem frame.

    Column ``n`` of ``pointer_frame`` is immune to entanglement-free
    distortion: the assembled unitary maps (frame vector n) x v to
    (frame vector n) x (env_unitaries[n] @ v), so a frame vector only
    imprints a record on the environment, while superpositions of frame
    vectors become entangled with the diverging records.
    """

    pointer_frame: np.ndarray
    env_unitaries: tuple[np.ndarray, ...]
    total: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        frame = require_unitary(self.pointer_frame, NORM_TOL, "pointer frame")
        dim_a = frame.shape[0]
        if len(self.env_unitaries) != dim_a:
            raise DimensionMismatchError(
                f"need {dim_a} environment unitaries, got {len(self.env_unitaries)}")
        env = tuple(require_unitary(u, NORM_TOL, f"environment unitary {n}")
                    for n, u in enumerate(self.env_unitaries))
        dim_e = env[0].shape[0]
        if any(u.shape != (dim_e, dim_e) for u in env):
            raise DimensionMismatchError("environment unitaries differ in dimension")
        total = np.zeros((dim_a * dim_e, dim_a * dim_e), dtype=complex)
        for n in range(dim_a):
            p = frame[:, n]
            total += np.kron(np.outer(p, p.conj()), env[n])
        defect = unitarity_defect(total)
        if defect > UNITARY_TOL:
            raise NotUnitaryError(defect, "assembled pointer evolution")
        frame.setflags(write=False)
        total.setflags(write=False)
        object.__setattr__(self, "pointer_frame", frame)
        object.__setattr__(self, "env_unitaries", env)
        object.__setattr__(self, "total", total)

    @property
    def dim_A(self) -> int:
        return self.pointer_frame.shape[0]

    @property
    def dim_E(self) -> int:
        return self.env_unitaries[0].shape[0]

    def records(self, env0: np.ndarray, steps: int) -> np.ndarray:
        """Conditional environment records after ``steps`` applications.

        Returns array of shape (dim_A, dim_E): row n is the environment
        state produced when the subsystem starts in frame vector n.
        """
        recs = np.tile(np.asarray(env0, dtype=complex), (self.dim_A, 1))
        for n in range(self.dim_A):
            for _ in range(steps):
                recs[n] = self.env_unitaries[n] @ recs[n]
        return recs


@dataclass(frozen=True)
class PreferredEvolution:
    """Sector-preserving unitary with environment-dependent subsystem frames.

    ``frames[i][:, n]`` is the n-th preferred subsystem vector attached to
    environment label ``i``; ``sector_unitaries[n][j, i]`` is the amplitude
    for label i -> j within sector n.  The assembled unitary never mixes
    different n-sectors.
    """

    frames: tuple[np.ndarray, ...]
    sector_unitaries: tuple[np.ndarray, ...]
    total: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        frames = tuple(require_unitary(w, NORM_TOL, f"frame {i}")
                       for i, w in enumerate(self.frames))
        dim_a = frames[0].shape[0]
        dim_e = len(frames)
        if any(w.shape != (dim_a, dim_a) for w in frames):
            raise DimensionMismatchError("frames differ in dimension")
        if len(self.sector_unitaries) != dim_a:
            raise DimensionMismatchError(
                f"need {dim_a} sector unitaries, got {len(self.sector_unitaries)}")
        sectors = tuple(require_unitary(u, NORM_TOL, f"sector unitary {n}")
                        for n, u in enumerate(self.sector_unitaries))
        if any(u.shape != (dim_e, dim_e) for u in sectors):
            raise DimensionMismatchError(
                f"sector unitaries must be {dim_e} x {dim_e} (one row per environment label)")
        total = np.zeros((dim_a * dim_e, dim_a * dim_e), dtype=complex)
        for n in range(dim_a):
            basis = _sector_basis(frames, n)            # (dim_a*dim_e, dim_e)
            total += basis @ sectors[n] @ basis.conj().T
        defect = unitarity_defect(total)
        if defect > UNITARY_TOL:
            raise NotUnitaryError(defect, "assembled preferred evolution")
        for w in frames:
            w.setflags(write=False)
        total.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "sector_unitaries", sectors)
        object.__setattr__(self, "total", total)

    @property
    def dim_A(self) -> int:
        return self.frames[0].shape[0]

    @property
    def dim_E(self) -> int:
        return len(self.frames)

    def sector_basis(self, n: int) -> np.ndarray:
        """Orthonormal columns spanning sector n, indexed by environment label."""
        return _sector_basis(self.frames, n)

    def sector_populations(self, state: CompositeState) -> np.ndarray:
        vec = state.vector()
        return np.array([float(np.sum(np.abs(self.sector_basis(n).conj().T @ vec) ** 2))
                         for n in range(self.dim_A)])


def _sector_basis(frames: Sequence[np.ndarray], n: int) -> np.ndarray:
    dim_a = frames[0].shape[0]
    dim_e = len(frames)
    basis = np.zeros((dim_a * dim_e, dim_e), dtype=complex)
    for i in range(dim_e):
        vec = np.zeros((dim_a, dim_e), dtype=complex)
        vec[:, i] = frames[i][:, n]
        basis[:, i] = vec.reshape(-1)
    return basis


def synthesize_pointer_evolution(pointer_frame, env_unitaries) -> PointerEvolution:
    return PointerEvolution(np.asarray(pointer_frame, dtype=complex),
                            tuple(np.asarray(u, dtype=complex) for u in env_unitaries))


def synthesize_preferred_evolution(frames, sector_unitaries) -> PreferredEvolution:
    return PreferredEvolution(tuple(np.asarray(w, dtype=complex) for w in frames),
                              tuple(np.asarray(u, dtype=complex) for u in sector_unitaries))


def _total_unitary(evolution) -> np.ndarray:
    if isinstance(evolution, (PointerEvolution, PreferredEvolution)):
        return evolution.total
    return require_unitary(evolution, NORM_TOL, "evolution unitary")


def evolve(obj, evolution, steps: int = 1):
    """Apply an evolution ``steps`` times to a state or density operator."""
    u = _total_unitary(evolution)
    if isinstance(obj, CompositeState):
        if obj.dim_A * obj.dim_E != u.shape[0]:
            raise DimensionMismatchError(
                f"state dimension {obj.dim_A * obj.dim_E} != evolution dimension {u.shape[0]}")
        vec = obj.vector()
        for _ in range(steps):
            vec = u @ vec
        return CompositeState(vec.reshape(obj.dim_A, obj.dim_E), labels=obj.labels)
    if isinstance(obj, DensityOperator):
        if obj.dim != u.shape[0]:
            raise DimensionMismatchError(
                f"density dimension {obj.dim} != evolution dimension {u.shape[0]}")
        mat = obj.mat
        for _ in range(steps):
            mat = u @ mat @ u.conj().T
        return DensityOperator(mat)
    raise TypeError(f"cannot evolve object of type {type(obj).__name__}")


def _frames_per_label(frame, dim_A: int, dim_E: int) -> list[np.ndarray]:
    if isinstance(frame, np.ndarray) and frame.ndim == 2:
        f = require_unitary(frame, NORM_TOL, "subsystem frame")
        if f.shape[0] != dim_A:
            raise DimensionMismatchError(
                f"frame dimension {f.shape[0]} != subsystem dimension {dim_A}")
        return [f] * dim_E
    frames = [require_unitary(w, NORM_TOL, f"frame {i}") for i, w in enumerate(frame)]
    if len(frames) != dim_E:
        raise DimensionMismatchError(f"need {dim_E} frames, got {len(frames)}")
    return frames


def build_mixture(state: CompositeState, frame, mode: str = "pointer") -> DensityOperator:
    """Dephase a pure state into a classical mixture over a subsystem frame.

    mode='pointer' keeps only terms diagonal in both the subsystem frame
    index and the environment label: the fully dephased ensemble a
    trajectory picture samples from.  mode='preferred' removes only the
    coherences between different subsystem-frame sectors, retaining the
    environment superposition inside each sector.
    """
    if mode not in ("pointer", "preferred"):
        raise ValueError(f"mode must be 'pointer' or 'preferred', got {mode!r}")
    frames = _frames_per_label(frame, state.dim_A, state.dim_E)
    dim_a, dim_e = state.dim_A, state.dim_E
    # coeffs[n, i]: amplitude on (frame vector n given label i) x (label i)
    coeffs = np.stack([frames[i].conj().T @ state.amp[:, i] for i in range(dim_e)], axis=1)
    rho = np.zeros((dim_a * dim_e, dim_a * dim_e), dtype=complex)
    for n in range(dim_a):
        basis = _sector_basis(frames, n)
        if mode == "pointer":
            for i in range(dim_e):
                v = basis[:, i]
                rho += np.abs(coeffs[n, i]) ** 2 * np.outer(v, v.conj())
        else:
            u = basis @ coeffs[n]
            rho += np.outer(u, u.conj())
    return DensityOperator(rho)


@dataclass(frozen=True)
class DiagonalComparison:
    """Pure-state vs dephased-mixture diagonal dynamics under one evolution."""

    max_abs_deviation: float
    per_step: np.ndarray            # deviation of resolved diagonals per step
    traced_max: float
    traced_per_step: np.ndarray     # deviation of frame populations per step
    resolved: bool                  # whether record-resolved diagonals were available


def compare_diagonal_dynamics(pure0: CompositeState, frame, evolution,
                              horizon: int, mode: str | None = None) -> DiagonalComparison:
    """Evolve a pure state and its frame-dephased mixture side by side.

    At every step the diagonal blocks in the comparison frame are compared:
    resolved over the environment (conditional records for a pointer-type
    evolution, environment labels for a preferred-type one) and traced over
    it (frame populations).  Returns the running deviations and their maxima.
    """
    if mode is None:
        mode = "preferred" if isinstance(evolution, PreferredEvolution) else "pointer"
    if frame is None:
        if isinstance(evolution, PointerEvolution):
            frame = evolution.pointer_frame
        elif isinstance(evolution, PreferredEvolution):
            frame = list(evolution.frames)
        else:
            raise ValueError("an explicit frame is required for a bare unitary evolution")
    u = _total_unitary(evolution)
    dim_a, dim_e = pure0.dim_A, pure0.dim_E
    frames = _frames_per_label(frame, dim_a, dim_e)

    rho_pure = pure0.density().mat
    rho_mix = build_mixture(pure0, frames, mode=mode).mat

    env0 = None
    if mode == "pointer" and isinstance(evolution, PointerEvolution):
        try:
            _, env0 = product_factors(pure0)
        except ValueError:
            env0 = None
    resolved_available = (mode == "preferred") or env0 is not None

    sector_bases = [_sector_basis(frames, n) for n in range(dim_a)]
    # projector basis for traced populations: columns of each sector basis
    resolved_dev = np.zeros(horizon + 1)
    traced_dev = np.zeros(horizon + 1)
    records = np.tile(env0, (dim_a, 1)) if env0 is not None else None

    for step in range(horizon + 1):
        if step > 0:
            rho_pure = u @ rho_pure @ u.conj().T
            rho_mix = u @ rho_mix @ u.conj().T
            if records is not None and isinstance(evolution, PointerEvolution):
                for n in range(dim_a):
                    records[n] = evolution.env_unitaries[n] @ records[n]
        pops_pure = np.empty(dim_a)
        pops_mix = np.empty(dim_a)
        res = 0.0
        for n in range(dim_a):
            basis = sector_bases[n]
            block_pure = basis.conj().T @ rho_pure @ basis
            block_mix = basis.conj().T @ rho_mix @ basis
            pops_pure[n] = float(np.real(np.trace(block_pure)))
            pops_mix[n] = float(np.real(np.trace(block_mix)))
            if mode == "preferred":
                res = max(res, float(np.max(np.abs(np.diagonal(block_pure)
                                                   - np.diagonal(block_mix)))))
            elif records is not None:
                # resolve the n-th frame block on every conditional record
                for m in range(dim_a):
                    proj = np.kron(frames[0][:, n], records[m])
                    d_pure = float(np.real(proj.conj() @ rho_pure @ proj))
                    d_mix = float(np.real(proj.conj() @ rho_mix @ proj))
                    res = max(res, abs(d_pure - d_mix))
        resolved_dev[step] = res
        traced_dev[step] = float(np.max(np.abs(pops_pure - pops_mix)))

    primary = resolved_dev if resolved_available else traced_dev
    return DiagonalComparison(
        max_abs_deviation=float(np.max(np.maximum(primary, traced_dev))),
        per_step=resolved_dev,
        traced_max=float(np.max(traced_dev)),
        traced_per_step=traced_dev,
        resolved=resolved_available,
    )


@dataclass(frozen=True)
class NonpointerExpansion:
    """Cross-coupling table of an evolved state over a non-pointer frame.

    ``coeffs[l, n]`` is the amplitude with which the unit initial term built
    on initial-frame vector n arrives at final-frame vector l; ``records[l][n]``
    is the matching unit-norm environment state (None for zero branches).
    """

    coeffs: np.ndarray
    records: list[list[np.ndarray | None]]
    initial_coeffs: np.ndarray
    reconstruction_error: float


def nonpointer_expansion(state: CompositeState, evolution, frame_t: np.ndarray,
                         steps: int = 1, frame_0: np.ndarray | None = None) -> NonpointerExpansion:
    """Propagate each initial-frame term separately and re-expand at time t.

    The input must be a product state so the shared environment factor is
    well defined.  The coherent recombination of all terms is checked against
    the directly evolved state.
    """
    frame_t = require_unitary(frame_t, NORM_TOL, "final frame")
    frame_0 = frame_t if frame_0 is None else require_unitary(frame_0, NORM_TOL, "initial frame")
    sub, env = product_factors(state)
    dim_a, dim_e = state.dim_A, state.dim_E
    initial = frame_0.conj().T @ sub

    coeffs = np.zeros((dim_a, dim_a), dtype=complex)
    records: list[list[np.ndarray | None]] = [[None] * dim_a for _ in range(dim_a)]
    recombined = np.zeros((dim_a, dim_e), dtype=complex)
    for n in range(dim_a):
        term = compose(frame_0[:, n], env)
        evolved = evolve(term, evolution, steps)
        recombined += initial[n] * evolved.amp
        for l, br in enumerate(rebasis_subsystem(evolved, frame_t)):
            coeffs[l, n] = br.coeff
            records[l][n] = br.record
    direct = evolve(state, evolution, steps).amp
    err = float(np.max(np.abs(recombined - direct)))
    return NonpointerExpansion(coeffs=coeffs, records=records,
                               initial_coeffs=initial, reconstruction_error=err)
