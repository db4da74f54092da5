"""Finite-time scattering diagnostics on grid states.

A scattering region for decomposition b at time t keeps the part of a state
where every pair split by b is farther apart than sigma * t and the internal
size of the clusters stays below delta * t**r (or below R when r = 0).
Distances are mass-metric norms: |x_alpha|^2 = mu_alpha |r_i - r_j|^2 and
|x^b|^2 the internal part of the b-frame norm.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.fft

from .cutoffs import phi_greater, phi_less
from .errors import ParameterError
from .geometry import change_frame, pair_coordinate
from .grid import (
    GridState,
    HamiltonianSpec,
    ModelSpec,
    Propagator,
    lowest_eigenpairs,
    propagate,
    solve_bound_states,
    thresholds,
)
from .lattice import ClusterDecomposition, enumerate_decompositions


@dataclass(frozen=True)
class RegionParams:
    b: ClusterDecomposition
    r: float = 1.0
    sigma: float = 0.5
    delta: float | None = None
    R: float | None = None
    width: float | None = None
    sharp: bool = False

    def __post_init__(self):
        if not 0 <= self.r <= 1:
            raise ParameterError("r must lie in [0, 1]")
        if not self.sigma > 0:
            raise ParameterError("sigma must be positive")
        if self.r > 0 and not (self.delta is not None and self.delta > 0):
            raise ParameterError("r > 0 needs a positive delta")
        if self.r == 0 and not (self.R is not None and self.R > 0):
            raise ParameterError("r = 0 needs a positive R")
        if self.width is not None and not self.width > 0:
            raise ParameterError("mollification width must be positive")

    def internal_bound(self, t: float) -> float:
        return self.R if self.r == 0 else self.delta * t**self.r


def _coords(grid, frame) -> np.ndarray:
    return np.stack(grid.mesh(), axis=-1)


def default_width(psi: GridState) -> float:
    """Five grid spacings measured in the mass metric of the grid frame."""
    return 5 * psi.grid.spacing * math.sqrt(float(np.max(psi.frame.weights)))


def pair_distance(psi: GridState, alpha) -> np.ndarray:
    """|x_alpha| = sqrt(mu_alpha) |r_i - r_j| at every grid point."""
    row = pair_coordinate(alpha, psi.frame)
    sep = sum(c * x for c, x in zip(row, psi.grid.mesh()))
    mass = psi.frame.mass
    mu = mass.reduced_mass([alpha.i], [alpha.j])
    return math.sqrt(mu) * np.abs(sep)


def internal_size(psi: GridState, b: ClusterDecomposition) -> np.ndarray:
    """|x^b| in the mass metric at every grid point."""
    from .geometry import build_frame

    fb = build_frame(psi.frame.mass, b, psi.frame.nu)
    U = change_frame(psi.frame, fb)
    x = _coords(psi.grid, psi.frame)
    xb = x @ U.T
    w = fb.weights
    inner = xb[..., fb.n_outer :]
    return np.sqrt(np.sum(w[fb.n_outer :] * inner * inner, axis=-1))


def region_factor(psi: GridState, p: RegionParams, t: float) -> np.ndarray:
    """Product of the pair-separation and cluster-size cutoffs at time t."""
    if not t > 0:
        raise ParameterError("region time must be positive")
    if p.b.n != psi.frame.mass.n:
        raise ParameterError("decomposition and state describe different particle numbers")
    w = p.width or default_width(psi)
    out = np.ones(psi.grid.shape)
    threshold = p.sigma * t
    for alpha in p.b.crossing_pairs():
        d = pair_distance(psi, alpha)
        out = out * ((d >= threshold) if p.sharp else phi_greater(d, threshold + w, w))
    if p.b.size < p.b.n:
        size = internal_size(psi, p.b)
        bound = p.internal_bound(t)
        out = out * ((size <= bound) if p.sharp else phi_less(size, bound - w, w))
    return out


def region_project(psi: GridState, p: RegionParams, t: float) -> GridState:
    return replace(psi, values=region_factor(psi, p, t) * psi.values)


@dataclass
class DeficitSeries:
    b: list
    times: list[float]
    deficit: list[float]
    occupation: list[float]
    norm_sq: list[float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "deficit", "occupation", "norm_sq"])
        for row in zip(self.times, self.deficit, self.occupation, self.norm_sq):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def deficit_series(
    psi0: GridState,
    h: HamiltonianSpec,
    p: RegionParams,
    schedule: Sequence[float],
    dt: float,
) -> DeficitSeries:
    """Propagate through ``schedule`` and record ||psi - F psi|| and ||F psi||^2."""
    times = [float(t) for t in schedule]
    if any(b <= a for a, b in zip(times, times[1:])) or times[0] <= psi0.time:
        raise ParameterError("schedule must be increasing and after the initial time")
    prop = Propagator(h, dt)
    psi = psi0
    out = DeficitSeries(json.loads(p.b.to_json()), [], [], [], [])
    for t in times:
        steps = int(round((t - psi.time) / dt))
        psi = propagate(psi, h, dt, steps, propagator=prop)
        f = region_factor(psi, p, t)
        cell = psi.grid.cell
        dens = np.abs(psi.values) ** 2
        out.times.append(t)
        out.deficit.append(float(math.sqrt(np.sum((1 - f) ** 2 * dens) * cell)))
        out.occupation.append(float(np.sum(f * f * dens) * cell))
        out.norm_sq.append(float(np.sum(dens) * cell))
    return out


# energy filtering --------------------------------------------------------------

@dataclass(frozen=True)
class EnergyWindow:
    """Smooth window equal to 1 on [lo, hi] and 0 outside [lo - width, hi + width]."""

    lo: float
    hi: float
    width: float

    def __post_init__(self):
        if not (self.lo < self.hi and self.width > 0):
            raise ParameterError("need lo < hi and a positive width")

    def __call__(self, e):
        return phi_greater(e, self.lo, self.width) * phi_less(e, self.hi, self.width)

    def check_clear(self, thresholds: Sequence[float]) -> None:
        for t in thresholds:
            if self.lo - self.width <= t <= self.hi + self.width:
                raise ParameterError(f"energy window meets the threshold {t}")


def spectral_bounds(h: HamiltonianSpec) -> tuple[float, float]:
    v = h.potential()
    return float(v.min()), float(v.max() + h.kinetic_symbol().max())


def window_coefficients(window: EnergyWindow, lo: float, hi: float, tol: float = 1e-9, max_degree: int = 400_000):
    """Chebyshev coefficients of the window on [lo, hi].

    The interpolation degree doubles until the last coefficients are far below
    tol; the series is then cut where the summed absolute tail drops under
    tol, which bounds the sup-norm truncation error on [lo, hi].
    """
    half, mid = (hi - lo) / 2, (hi + lo) / 2

    deg = 64
    while True:
        # interpolation at first-kind Chebyshev nodes is a type-II DCT
        n = deg + 1
        nodes = np.cos(np.pi * (np.arange(n) + 0.5) / n)
        coef = scipy.fft.dct(window(mid + half * nodes), type=2) / n
        coef[0] /= 2
        if np.max(np.abs(coef[-max(8, deg // 16) :])) < tol * 1e-3:
            tail = np.cumsum(np.abs(coef[::-1]))[::-1]
            keep = int(np.argmax(tail < tol))
            return coef[: max(keep, 1)]
        if deg >= max_degree:
            raise ParameterError(f"window needs Chebyshev degree above {max_degree}")
        deg *= 2


def energy_filter(
    psi: GridState,
    h: HamiltonianSpec,
    window: EnergyWindow,
    thresholds: Sequence[float] | None = None,
    tol: float = 1e-9,
) -> GridState:
    """window(H) psi through a Chebyshev expansion of the spectral window."""
    if thresholds is not None:
        window.check_clear(thresholds)
    lo, hi = spectral_bounds(h)
    pad = 1e-3 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    coef = window_coefficients(window, lo, hi, tol)
    half, mid = (hi - lo) / 2, (hi + lo) / 2
    sym, pot = h.kinetic_symbol(), h.potential()

    def apply_scaled(v):
        hv = np.fft.ifftn(sym * np.fft.fftn(v)) + pot * v
        return (hv - mid * v) / half

    t_prev = psi.values
    acc = coef[0] * t_prev
    if len(coef) > 1:
        t_cur = apply_scaled(t_prev)
        acc = acc + coef[1] * t_cur
        for c in coef[2:]:
            t_prev, t_cur = t_cur, 2 * apply_scaled(t_cur) - t_prev
            acc = acc + c * t_cur
    return replace(psi, values=acc)


def remove_bound_states(psi: GridState, h: HamiltonianSpec, below: float, count: int = 4, margin: float = 1e-3):
    """Project out numerically computed bound states of H lying below ``below - margin``."""
    if float(np.min(h.potential())) >= below - margin:
        # H >= min V, so there is nothing below the cut
        return psi.copy(), []
    if psi.grid.dim == 1:
        states = [s for s in solve_bound_states(h, count) if s[0] < below - margin]
    else:
        states = lowest_eigenpairs(h, count, below=below - margin)
    vals = psi.values.copy()
    for _, s in states:
        vals = vals - s.inner(replace(psi, values=vals)) * s.values
    return replace(psi, values=vals), [e for e, _ in states]


def channel_state(
    model: ModelSpec,
    b: ClusterDecomposition,
    centre: float,
    width: float,
    momentum: float,
    level: int = 0,
) -> GridState:
    """Bound pair times an outgoing Gaussian packet in the inter-cluster coordinate.

    The state lives on the model grid in the frame of b (N = 3, |b| = 2).  The
    pair eigenstate is solved on the matching 1-D axis, so it is an exact
    eigenvector of the discretized internal Hamiltonian.
    """
    if model.n != 3 or b.size != 2:
        raise ParameterError("channel states need N = 3 and a two-cluster decomposition")
    alpha = b.pairs()[0]
    h_pair = replace(model.pair_hamiltonian(alpha), grid=model.grid(1))
    states = solve_bound_states(h_pair, level + 1)
    if len(states) <= level:
        raise ParameterError(f"pair {alpha.i},{alpha.j} has no bound state number {level}")
    bound = states[level][1].values
    h = model.hamiltonian(b)
    x = h.grid.axis
    packet = np.exp(-((x - centre) ** 2) / (4 * width * width) + 1j * momentum * x)
    return GridState(np.outer(packet, bound), h.grid, h.frame).normalized()


def grid_thresholds(model: ModelSpec) -> list[float]:
    """Thresholds with pair bound states solved at the resolution of the model grid.

    These are the values the discretized three-body Hamiltonian actually sees,
    so bound-state removal compares against them rather than the finer
    pair-grid values.
    """
    return thresholds(replace(model, pair_points=model.grid_points))


def prepare_state(
    psi: GridState,
    model: ModelSpec,
    window: EnergyWindow,
    h: HamiltonianSpec | None = None,
    count: int = 4,
) -> tuple[GridState, dict]:
    """Energy-filter psi into the window, drop three-body bound states and normalize."""
    h = h or model.hamiltonian(psi.frame.decomposition)
    th = thresholds(model)
    filtered = energy_filter(psi, h, window, th)
    kept = filtered.norm_sq() / psi.norm_sq()
    if kept < 1e-6:
        raise ParameterError("energy window removes essentially the whole state")
    out, removed = remove_bound_states(filtered.normalized(), h, min(grid_thresholds(model)), count)
    info = {"thresholds": th, "filter_kept": kept, "bound_states_removed": removed}
    return out.normalized(), info


# channels ------------------------------------------------------------------------

@dataclass
class ChannelReport:
    time: float
    norm_sq: float
    occupation: dict
    outside: float
    overlap: float
    deficit: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def residual_plus_overlap(self) -> float:
        return self.outside + self.overlap

    def to_dict(self) -> dict:
        d = asdict(self)
        d["residual_plus_overlap"] = self.residual_plus_overlap
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "decomposition", "occupation", "deficit", "outside", "overlap"])
        for key, occ in self.occupation.items():
            w.writerow([repr(self.time), key, repr(occ), repr(self.deficit.get(key)), repr(self.outside), repr(self.overlap)])
        return buf.getvalue()


def channel_occupations(psi: GridState, params: dict, t: float) -> ChannelReport:
    """Occupation of every region, mass outside all regions and overlap mass at time t.

    With q_b = F_b^2, occupation_b = <q_b>, outside = <prod (1 - q_b)> and
    overlap = sum_b <q_b> - <1 - prod(1 - q_b)>, so
    sum_b occupation_b + outside - overlap = ||psi||^2.
    """
    dens = np.abs(psi.values) ** 2
    cell = psi.grid.cell
    occupation, deficit, miss = {}, {}, np.ones(psi.grid.shape)
    for b, p in params.items():
        f = region_factor(psi, p, t)
        q = f * f
        occupation[b.to_json()] = float(np.sum(q * dens) * cell)
        deficit[b.to_json()] = float(math.sqrt(np.sum((1 - f) ** 2 * dens) * cell))
        miss = miss * (1 - q)
    total = float(np.sum(dens) * cell)
    outside = float(np.sum(miss * dens) * cell)
    union = total - outside
    overlap = sum(occupation.values()) - union
    return ChannelReport(t, total, occupation, outside, overlap, deficit)


def channel_decomposition(
    psi0: GridState,
    h: HamiltonianSpec,
    params: dict,
    t_final: float,
    dt: float,
) -> tuple[ChannelReport, GridState]:
    """Propagate to t_final and split the state over the scattering regions."""
    steps = int(round((t_final - psi0.time) / dt))
    if steps <= 0:
        raise ParameterError("final time must exceed the initial time")
    psi = propagate(psi0, h, dt, steps)
    rep = channel_occupations(psi, params, psi.time)
    rep.params = {
        b.to_json(): {k: v for k, v in asdict(p).items() if k != "b"} for b, p in params.items()
    }
    return rep, psi


def channel_series(
    psi0: GridState,
    h: HamiltonianSpec,
    params: dict,
    schedule: Sequence[float],
    dt: float,
) -> list[ChannelReport]:
    """Channel split at every schedule time, propagating between them."""
    times = [float(t) for t in schedule]
    if not times or any(b <= a for a, b in zip(times, times[1:])) or times[0] <= psi0.time:
        raise ParameterError("schedule must be increasing and after the initial time")
    prop = Propagator(h, dt)
    psi, out = psi0, []
    for t in times:
        psi = propagate(psi, h, dt, int(round((t - psi.time) / dt)), propagator=prop)
        out.append(channel_occupations(psi, params, t))
    return out


def default_channel_params(n: int, sigma: float, delta: float, r: float = 1.0, width=None) -> dict:
    return {
        b: RegionParams(b, r=r, sigma=sigma, delta=delta if r > 0 else None, R=delta if r == 0 else None, width=width)
        for b in enumerate_decompositions(n)
        if b.size >= 2
    }


# velocities ------------------------------------------------------------------------

def velocity_comparison(psi: GridState, b: ClusterDecomposition, t: float, scale: float = 1.0) -> dict:
    """Compare <phi(x_b / t)> with <phi(v_b)> for the Gaussian test function phi(v) = exp(-|v|^2 / scale^2) tilted by v.

    Positions x_b come from |psi|^2, velocities v_b = M^{-1} p_b from |psi_hat|^2;
    both are taken in the b-frame.  Returns both expectations and their gap.
    """
    from .geometry import build_frame

    if not t > 0:
        raise ParameterError("time must be positive")
    fb = build_frame(psi.frame.mass, b, psi.frame.nu)
    U = change_frame(psi.frame, fb)
    r = fb.n_outer
    x = _coords(psi.grid, psi.frame) @ U.T
    k = psi.grid.wavenumbers()
    kmesh = np.stack(np.meshgrid(*([k] * psi.grid.dim), indexing="ij"), axis=-1)
    v_grid = psi.frame.mass.hbar * kmesh / psi.frame.weights
    v = v_grid @ U.T

    def phi(u):
        s = np.sum(u[..., :r] ** 2, axis=-1)
        return np.exp(-s / scale**2) * (1 + np.sum(u[..., :r], axis=-1) / scale)

    dens_x = np.abs(psi.values) ** 2
    dens_x = dens_x / dens_x.sum()
    dens_p = np.abs(np.fft.fftn(psi.values)) ** 2
    dens_p = dens_p / dens_p.sum()
    ex = float(np.sum(phi(x / t) * dens_x))
    ev = float(np.sum(phi(v) * dens_p))
    return {"position_side": ex, "velocity_side": ev, "gap": abs(ex - ev)}
