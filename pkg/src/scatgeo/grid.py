"""Split-step Fourier dynamics in clustered Jacobi coordinates (nu = 1, N <= 3).

The wavefunction lives on a periodic grid over the N-1 coordinates of one
clustered Jacobi frame.  The kinetic energy is sum_k p_k^2 / (2 w_k) with the
frame weights w_k, applied exactly in Fourier space; pair potentials are
evaluated pointwise at the physical separations r_i - r_j.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import NumericError, ParameterError
from .geometry import JacobiFrame, MassSpec, build_frame, change_frame, pair_coordinate
from .lattice import ClusterDecomposition, PairIndex, decompositions_of_size, pair_leq

POTENTIAL_KINDS = ("long_range_power", "poschl_teller", "zero")


@dataclass(frozen=True)
class GridSpec:
    dim: int
    extent: float
    points: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ParameterError(f"grid dimension must be 1 or 2, got {self.dim}")
        if not (self.extent > 0 and math.isfinite(self.extent)):
            raise ParameterError(f"half-width must be positive, got {self.extent}")
        m = self.points
        if m < 16 or m & (m - 1):
            raise ParameterError(f"points per axis must be a power of two >= 16, got {m}")

    @property
    def spacing(self) -> float:
        return 2 * self.extent / self.points

    @property
    def axis(self) -> np.ndarray:
        return -self.extent + self.spacing * np.arange(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def cell(self) -> float:
        return self.spacing**self.dim

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.axis] * self.dim), indexing="ij")

    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points, d=self.spacing)


@dataclass(frozen=True)
class PairPotential:
    i: int
    j: int
    kind: str = "zero"
    strength: float = 0.0
    epsilon: float = 0.5

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ParameterError(f"unknown potential kind {self.kind!r}")
        if self.kind == "long_range_power" and not 0 < self.epsilon < 1:
            raise ParameterError("long-range exponent must lie in (0, 1)")
        PairIndex(self.i, self.j)

    @property
    def pair(self) -> PairIndex:
        return PairIndex(self.i, self.j)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "poschl_teller":
            return self.strength / np.cosh(x) ** 2
        return self.strength * (1 + x * x) ** (-self.epsilon / 2)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Kinetic energy of ``frame`` plus the listed pair potentials."""

    frame: JacobiFrame
    grid: GridSpec
    pairs: tuple[PairPotential, ...] = ()

    def __post_init__(self):
        if self.frame.nu != 1:
            raise ParameterError("grid dynamics supports nu = 1 only")
        if self.frame.dim != self.grid.dim:
            raise ParameterError(
                f"frame has {self.frame.dim} coordinates but the grid is {self.grid.dim}-D"
            )
        for p in self.pairs:
            if p.j > self.frame.mass.n:
                raise ParameterError(f"pair ({p.i}, {p.j}) out of range")

    @property
    def hbar(self) -> float:
        return self.frame.mass.hbar

    def restricted(self, part: str, a: ClusterDecomposition | None = None) -> "HamiltonianSpec":
        """Keep all pairs, the pairs inside a (V_a), or the pairs across a (I_a)."""
        if part == "all":
            return self
        if a is None:
            raise ParameterError("restriction needs a decomposition")
        if part == "internal":
            keep = tuple(p for p in self.pairs if pair_leq(p.pair, a))
        elif part == "intercluster":
            keep = tuple(p for p in self.pairs if not pair_leq(p.pair, a))
        else:
            raise ParameterError(f"unknown restriction {part!r}")
        return replace(self, pairs=keep)

    def kinetic_symbol(self) -> np.ndarray:
        k = self.grid.wavenumbers()
        mesh = np.meshgrid(*([k] * self.grid.dim), indexing="ij")
        return sum(
            (self.hbar * kk) ** 2 / (2 * w) for kk, w in zip(mesh, self.frame.weights)
        )

    def potential(self) -> np.ndarray:
        mesh = self.grid.mesh()
        v = np.zeros(self.grid.shape)
        for p in self.pairs:
            row = pair_coordinate(p.pair, self.frame)
            v = v + p(sum(c * x for c, x in zip(row, mesh)))
        return v


@dataclass
class GridState:
    values: np.ndarray
    grid: GridSpec
    frame: JacobiFrame
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ParameterError(f"values of shape {self.values.shape} on grid {self.grid.shape}")

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.cell)

    def normalized(self) -> "GridState":
        return replace(self, values=self.values / math.sqrt(self.norm_sq()))

    def inner(self, other: "GridState") -> complex:
        return complex(np.vdot(self.values, other.values) * self.grid.cell)

    def copy(self) -> "GridState":
        return replace(self, values=self.values.copy())


def _check_state(psi: GridState, h: HamiltonianSpec) -> None:
    if psi.grid != h.grid or psi.values.shape != h.grid.shape:
        raise ParameterError("state grid does not match the Hamiltonian grid")


def apply_kinetic(psi: GridState, h: HamiltonianSpec) -> np.ndarray:
    return np.fft.ifftn(h.kinetic_symbol() * np.fft.fftn(psi.values))


def apply_hamiltonian(
    psi: GridState,
    h: HamiltonianSpec,
    part: str = "all",
    a: ClusterDecomposition | None = None,
    kinetic: bool = True,
) -> GridState:
    """H psi, or (H_0 +) V_a psi / I_a psi for a restriction to decomposition a."""
    _check_state(psi, h)
    hr = h.restricted(part, a)
    out = hr.potential() * psi.values
    if kinetic:
        out = out + apply_kinetic(psi, h)
    return replace(psi, values=out)


def energy(psi: GridState, h: HamiltonianSpec) -> float:
    hpsi = apply_hamiltonian(psi, h)
    return psi.inner(hpsi).real / psi.norm_sq()


class Propagator:
    """Strang splitting exp(-iV dt/2) exp(-iH_0 dt) exp(-iV dt/2), precomputed."""

    def __init__(self, h: HamiltonianSpec, dt: float, imaginary: bool = False):
        if not (dt > 0 and math.isfinite(dt)):
            raise ParameterError(f"time step must be positive, got {dt}")
        self.h, self.dt, self.imaginary = h, dt, imaginary
        factor = -dt / h.hbar if imaginary else -1j * dt / h.hbar
        self._half_v = np.exp(0.5 * factor * h.potential())
        self._kin = np.exp(factor * h.kinetic_symbol())

    def step(self, values: np.ndarray, backward: bool = False) -> np.ndarray:
        hv, kin = self._half_v, self._kin
        if backward:
            hv, kin = np.conj(hv), np.conj(kin)
        out = hv * values
        out = np.fft.ifftn(kin * np.fft.fftn(out))
        return hv * out


def propagate(
    psi: GridState,
    h: HamiltonianSpec,
    dt: float,
    steps: int,
    backward: bool = False,
    propagator: Propagator | None = None,
    check_every: int = 100,
) -> GridState:
    """Apply ``steps`` Strang steps of exp(-i dt H) (exp(+i dt H) if backward)."""
    _check_state(psi, h)
    if steps < 0:
        raise ParameterError("steps must be non-negative")
    if steps == 0:
        return psi.copy()
    prop = propagator or Propagator(h, dt)
    vals = psi.values
    for n in range(steps):
        vals = prop.step(vals, backward)
        if (n + 1) % check_every == 0 or n + 1 == steps:
            if not np.all(np.isfinite(vals)):
                raise NumericError(f"non-finite wavefunction at step {n + 1}")
    sign = -1 if backward else 1
    return replace(psi, values=vals, time=psi.time + sign * steps * dt)


def gaussian_state(
    grid: GridSpec,
    frame: JacobiFrame,
    centre: Sequence[float],
    width: Sequence[float],
    momentum: Sequence[float] | None = None,
) -> GridState:
    """Normalized product Gaussian with position standard deviation ``width`` per axis."""
    momentum = momentum if momentum is not None else [0.0] * grid.dim
    vals = np.ones(grid.shape, dtype=complex)
    for x, c, s, k in zip(grid.mesh(), centre, width, momentum):
        vals *= (2 * np.pi * s * s) ** -0.25 * np.exp(-((x - c) ** 2) / (4 * s * s) + 1j * k * x)
    return GridState(vals, grid, frame).normalized()


def position_moments(psi: GridState) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the coordinates under |psi|^2."""
    rho = np.abs(psi.values) ** 2 * psi.grid.cell
    total = rho.sum()
    mesh = psi.grid.mesh()
    mean = np.array([np.sum(rho * x) / total for x in mesh])
    cov = np.array(
        [[np.sum(rho * (x - mx) * (y - my)) / total for y, my in zip(mesh, mean)]
         for x, mx in zip(mesh, mean)]
    )
    return mean, cov


def edge_mass(psi: GridState, fraction: float = 0.1) -> float:
    """Probability within ``fraction`` of the half-width of the grid boundary."""
    L = psi.grid.extent
    inside = np.ones(psi.grid.shape, dtype=bool)
    for x in psi.grid.mesh():
        inside &= np.abs(x) < (1 - fraction) * L
    return float(np.sum(np.abs(psi.values[~inside]) ** 2) * psi.grid.cell)


# bound states ----------------------------------------------------------------

def kinetic_matrix(h: HamiltonianSpec) -> np.ndarray:
    """Dense matrix of the Fourier kinetic operator on a 1-D grid."""
    if h.grid.dim != 1:
        raise ParameterError("dense kinetic matrix is built for 1-D grids")
    sym = h.kinetic_symbol()
    M = h.grid.points
    # circulant: first column is the inverse transform of the symbol
    col = np.fft.ifft(sym).real
    idx = (np.arange(M)[:, None] - np.arange(M)[None, :]) % M
    return col[idx]


def solve_bound_states(h: HamiltonianSpec, count: int = 1) -> list[tuple[float, GridState]]:
    """Lowest ``count`` eigenpairs with negative energy of a 1-D Hamiltonian."""
    if h.grid.dim != 1:
        raise ParameterError("bound states are solved for 1-D subsystems")
    if count < 1:
        raise ParameterError("count must be positive")
    H = kinetic_matrix(h) + np.diag(h.potential())
    vals, vecs = scipy.linalg.eigh(H, subset_by_index=[0, min(count, H.shape[0]) - 1])
    out = []
    for e, v in zip(vals, vecs.T):
        # zero-energy modes of a free pair come out at rounding level
        if e >= -1e-10:
            break
        v = v / math.sqrt(np.sum(v * v) * h.grid.cell)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        out.append((float(e), GridState(v.astype(complex), h.grid, h.frame)))
    return out


def residual_norm(psi: GridState, e: float, h: HamiltonianSpec) -> float:
    r = apply_hamiltonian(psi, h).values - e * psi.values
    return float(math.sqrt(np.sum(np.abs(r) ** 2) * h.grid.cell))


def imaginary_time_ground_state(
    h: HamiltonianSpec,
    psi0: GridState | None = None,
    dtau: float = 1e-3,
    total: float = 30.0,
) -> tuple[float, GridState]:
    """Normalized imaginary-time Strang iteration; returns (<H>, state)."""
    if psi0 is None:
        width = [h.grid.extent / 8] * h.grid.dim
        psi0 = gaussian_state(h.grid, h.frame, [0.0] * h.grid.dim, width)
    prop = Propagator(h, dtau, imaginary=True)
    vals = psi0.values.copy()
    cell = h.grid.cell
    for n in range(int(round(total / dtau))):
        vals = prop.step(vals)
        vals /= math.sqrt(np.sum(np.abs(vals) ** 2) * cell)
        if not np.all(np.isfinite(vals[:1])):
            raise NumericError(f"imaginary-time iteration diverged at step {n + 1}")
    psi = GridState(vals, h.grid, h.frame)
    return energy(psi, h), psi


def lowest_eigenpairs(h: HamiltonianSpec, count: int, below: float | None = None):
    """Lowest eigenpairs of a 2-D Hamiltonian by sparse iteration on the spectral operator."""
    shape = h.grid.shape
    sym, pot = h.kinetic_symbol(), h.potential()
    n = int(np.prod(shape))

    def matvec(v):
        v = v.reshape(shape)
        return (np.fft.ifftn(sym * np.fft.fftn(v)) + pot * v).ravel()

    op = scipy.sparse.linalg.LinearOperator((n, n), matvec=matvec, dtype=complex)
    v0 = np.exp(-sum(x * x for x in h.grid.mesh()) / (2 * (h.grid.extent / 4) ** 2)).ravel()
    vals, vecs = scipy.sparse.linalg.eigsh(op, k=count, which="SA", v0=v0.astype(complex), tol=1e-12)
    order = np.argsort(vals)
    out = []
    for idx in order:
        if below is not None and vals[idx] >= below:
            continue
        v = vecs[:, idx].reshape(shape)
        v = v / math.sqrt(np.sum(np.abs(v) ** 2) * h.grid.cell)
        out.append((float(vals[idx]), GridState(v, h.grid, h.frame)))
    return out


# models ----------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Particles on a line with pair potentials, discretized on a periodic grid."""

    mass: MassSpec
    pairs: tuple[PairPotential, ...]
    grid_extent: float
    grid_points: int
    nu: int = 1
    pair_points: int | None = None

    def __post_init__(self):
        if self.nu != 1:
            raise ParameterError("grid dynamics supports nu = 1 only")
        if self.mass.n not in (2, 3):
            raise ParameterError("grid dynamics supports N = 2 or 3")
        seen = set()
        for p in self.pairs:
            if p.j > self.mass.n:
                raise ParameterError(f"pair ({p.i}, {p.j}) out of range for N={self.mass.n}")
            if p.pair in seen:
                raise ParameterError(f"pair ({p.i}, {p.j}) listed twice")
            seen.add(p.pair)

    @property
    def n(self) -> int:
        return self.mass.n

    def grid(self, dim: int | None = None) -> GridSpec:
        return GridSpec(dim or self.n - 1, self.grid_extent, self.grid_points)

    def pair_grid(self) -> GridSpec:
        # 1-D solves are cheap, so they default to four times the resolution
        points = self.pair_points or min(4 * self.grid_points, 2048)
        return GridSpec(1, self.grid_extent, max(points, self.grid_points))

    def hamiltonian(self, b: ClusterDecomposition | None = None) -> HamiltonianSpec:
        """Full Hamiltonian in the frame of b (all singletons by default)."""
        b = b or ClusterDecomposition.singletons(self.n)
        return HamiltonianSpec(build_frame(self.mass, b, 1), self.grid(), self.pairs)

    def pair_potential(self, alpha: PairIndex) -> PairPotential | None:
        for p in self.pairs:
            if p.pair == alpha:
                return p
        return None

    def pair_hamiltonian(self, alpha: PairIndex) -> HamiltonianSpec:
        """Internal Hamiltonian of the two-particle cluster alpha on a 1-D grid."""
        sub = MassSpec((self.mass.masses[alpha.i - 1], self.mass.masses[alpha.j - 1]), self.mass.hbar)
        frame = build_frame(sub, ClusterDecomposition.whole(2), 1)
        p = self.pair_potential(alpha)
        pairs = () if p is None else (replace(p, i=1, j=2),)
        return HamiltonianSpec(frame, self.pair_grid(), pairs)


def pair_bound_states(model: ModelSpec, count: int = 4) -> dict:
    """Negative-energy bound states of every interacting pair, keyed by pair."""
    out = {}
    for p in model.pairs:
        if p.kind == "zero":
            continue
        states = solve_bound_states(model.pair_hamiltonian(p.pair), count)
        if states:
            out[p.pair] = states
    return out


def thresholds(
    model: ModelSpec, include_three_body: bool = False, count: int = 4, margin: float = 1e-3
) -> list[float]:
    """Sorted threshold set: 0 together with all subsystem bound-state energies.

    Three-body eigenvalues count only if they lie ``margin`` below the lowest
    pair threshold; closer ones are the discretized continuum edge.
    """
    values = {0.0}
    for states in pair_bound_states(model, count).values():
        values.update(e for e, _ in states)
    if include_three_body and model.n == 3:
        h = model.hamiltonian()
        lowest = min(values)
        values.update(e for e, _ in lowest_eigenpairs(h, count, below=lowest - margin))
    return sorted(values)


# frames ----------------------------------------------------------------------

def spectral_evaluate(psi: GridState, points: np.ndarray) -> np.ndarray:
    """Trigonometric interpolant of psi at arbitrary points, shape (P, dim)."""
    grid = psi.grid
    coef = np.fft.fftn(psi.values) / grid.points**grid.dim
    k = grid.wavenumbers()
    pts = np.atleast_2d(points)
    shifted = pts + grid.extent
    out = np.empty(len(pts), dtype=complex)
    for start in range(0, len(pts), 4096):
        chunk = shifted[start : start + 4096]
        first = np.exp(1j * np.outer(chunk[:, 0], k)) @ coef
        if grid.dim == 2:
            first = np.sum(first * np.exp(1j * np.outer(chunk[:, 1], k)), axis=1)
        out[start : start + 4096] = first
    return out


def transform_state(psi: GridState, target: JacobiFrame) -> GridState:
    """The same physical state expressed on the grid of another clustered frame.

    Coordinates transform with the mass-orthogonal map U, and the L^2 density
    picks up |det U|^{-1/2}.  The state must be negligible near the boundary.
    """
    U = change_frame(psi.frame, target)
    pts_target = np.stack([x.ravel() for x in psi.grid.mesh()], axis=1)
    pts_source = pts_target @ np.linalg.inv(U).T
    L = psi.grid.extent
    vals = np.zeros(len(pts_source), dtype=complex)
    inside = np.all(np.abs(pts_source) < L, axis=1)
    vals[inside] = spectral_evaluate(psi, pts_source[inside])
    vals /= math.sqrt(abs(np.linalg.det(U)))
    return GridState(vals.reshape(psi.grid.shape), psi.grid, target, psi.time)


# snapshots -------------------------------------------------------------------

def save_state(path: str | Path, psi: GridState) -> None:
    header = {
        "dims": psi.grid.dim,
        "points": psi.grid.points,
        "extent": psi.grid.extent,
        "spacing": psi.grid.spacing,
        "time": psi.time,
        "decomposition": json.loads(psi.frame.decomposition.to_json()),
        "masses": list(psi.frame.mass.masses),
        "hbar": psi.frame.mass.hbar,
        "dtype": "complex128",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(psi.values, dtype=np.complex128).tobytes())


def load_state(path: str | Path) -> GridState:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype=np.complex128)
    grid = GridSpec(header["dims"], header["extent"], header["points"])
    mass = MassSpec(tuple(header["masses"]), header["hbar"])
    frame = build_frame(mass, ClusterDecomposition(header["decomposition"]), 1)
    return GridState(data.reshape(grid.shape).copy(), grid, frame, header["time"])
