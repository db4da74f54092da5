"""Long-range phase, its eikonal residual and the stationary modifier.

Everything here works in mass-normalized inter-cluster coordinates for a
two-cluster decomposition, so the free kinetic energy is |xi|^2 / 2 and the
inter-cluster potential is I(z) = c (1 + |z|^2)^(-eps/2).

The phase correction u solves xi . grad u = -I - |grad u_prev|^2 / 2 along
straight rays z + s xi (outgoing, +) or z - s xi (incoming, -):

    u^+(z, xi) = -int_0^inf [q(z + s xi) - q_ref(s xi)] ds
    u^-(z, xi) = +int_0^inf [q(z - s xi) - q_ref(-s xi)] ds

where the reference term only subtracts the non-integrable part of I.  In one
dimension every iterate has the closed form

    grad u_k = sum_{j,n} a_jn c^j (1 + z^2)^(-j eps / 2) xi^(-n)
    u_k      = sum_{j,n} a_jn c^j xi^(-n) [S_j(z) - kappa_j]

with S_j(z) = z 2F1(1/2, j eps / 2; 3/2; -z^2) and kappa_j the ray-end value
S_j(+-inf) when j eps > 1, zero otherwise.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.integrate
import scipy.special

from .cutoffs import chi0, psi_minus, psi_plus
from .errors import NumericError, ParameterError
from .grid import GridState, HamiltonianSpec, edge_mass, propagate


@dataclass(frozen=True)
class LongRangePotential:
    strength: float
    decay: float

    def __post_init__(self):
        if not 0 < self.decay < 1:
            raise ParameterError("decay exponent must lie in (0, 1)")
        if not math.isfinite(self.strength):
            raise ParameterError("strength must be finite")

    def at(self, z: np.ndarray) -> np.ndarray:
        """I at points whose components run along the last axis."""
        z = np.asarray(z, dtype=float)
        return self.strength * (1 + np.sum(z * z, axis=-1)) ** (-self.decay / 2)

    def grad(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z * z, axis=-1, keepdims=True)
        return -self.decay * self.strength * z * (1 + r2) ** (-self.decay / 2 - 1)

    @property
    def is_zero(self) -> bool:
        return self.strength == 0.0


def profile_integral(z, power: float):
    """S(z) = int_0^z (1 + t^2)^(-power/2) dt."""
    z = np.asarray(z, dtype=float)
    return z * scipy.special.hyp2f1(0.5, power / 2, 1.5, -z * z)


def profile_integral_limit(power: float) -> float:
    """S(+inf) for power > 1."""
    return math.sqrt(math.pi) * math.gamma((power - 1) / 2) / (2 * math.gamma(power / 2))


def _picard_terms(depth: int) -> list[dict]:
    """Coefficients a_jn of grad u_k for k = 1..depth (keys (j, n))."""
    terms = [{(1, 1): -1.0}]
    for _ in range(depth - 1):
        prev = terms[-1]
        q = {(1, 0): -1.0}
        for (j1, n1), a1 in prev.items():
            for (j2, n2), a2 in prev.items():
                key = (j1 + j2, n1 + n2)
                q[key] = q.get(key, 0.0) - 0.5 * a1 * a2
        terms.append({(j, n + 1): a for (j, n), a in q.items()})
    return terms


def default_radius(pot: LongRangePotential, d: float) -> float:
    """Smallest power of two R_0 >= 2 at which |I(R_0)| / d < 0.1.

    |I| / |xi| bounds the first-iterate velocity correction |grad u_1| for
    |xi| >= d, so beyond R_0 the phase is a small perturbation of z . xi.
    """
    r = 2.0
    while abs(float(pot.at(np.array([r])))) / d >= 0.1:
        r *= 2
        if r > 2.0**60:
            raise ParameterError("no finite R_0 makes the correction small")
    return r


@dataclass(frozen=True)
class PhaseFunction:
    """Glued phase phi(z, xi) for a two-cluster decomposition (one link)."""

    potential: LongRangePotential
    theta: float = 0.5
    d: float = 0.5
    R0: float = 2.0
    depth: int = 2
    nu: int = 1
    quad_limit: int = 200

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ParameterError("theta must lie in (0, 1)")
        if not self.d > 0:
            raise ParameterError("d must be positive")
        if not self.R0 > 1:
            raise ParameterError("R_0 must exceed 1")
        if self.depth < 1:
            raise ParameterError("iteration depth must be at least 1")
        if self.nu < 1:
            raise ParameterError("nu must be positive")
        if self.nu > 1 and self.depth > 2:
            raise ParameterError("quadrature phases support depth 1 or 2")

    @cached_property
    def terms(self) -> dict:
        return _picard_terms(self.depth)[-1]

    # --- one-dimensional closed form -------------------------------------

    def _correction_1d(self, z, xi, sign: int, dxi: bool = False):
        eps, c = self.potential.decay, self.potential.strength
        z, xi = np.broadcast_arrays(np.asarray(z, float), np.asarray(xi, float))
        ray_end = sign * np.sign(xi)
        out = np.zeros(z.shape)
        cache = {}
        for (j, n), a in self.terms.items():
            if j not in cache:
                s = profile_integral(z, j * eps)
                if j * eps > 1:
                    s = s - ray_end * profile_integral_limit(j * eps)
                cache[j] = s
            factor = -n * xi ** (-n - 1.0) if dxi else xi ** (-float(n))
            out = out + a * c**j * factor * cache[j]
        return out

    def _correction_grad_z_1d(self, z, xi):
        eps = self.potential.decay
        pot = np.asarray(self.potential.at(np.asarray(z, float)[..., None]))
        xi = np.asarray(xi, float)
        out = np.zeros(np.broadcast(pot, xi).shape)
        for (j, n), a in self.terms.items():
            out = out + a * pot**j * xi ** (-float(n))
        return out

    # --- dimension-generic quadrature ------------------------------------

    def _quad(self, f, where, scale: float = 1.0) -> float:
        """int_0^inf f(s) ds through s = scale * exp(tau), which makes algebraic tails exponential."""

        def g(tau):
            s = scale * math.exp(tau)
            return f(s) * s

        # integrands decay at least like s^(-1-eps), i.e. exp(-eps tau) after the map
        top = min(700.0 - math.log(scale), 34.0 / self.potential.decay)
        val, err, info, *msg = scipy.integrate.quad(
            g, -40.0, top, epsabs=1e-15, epsrel=1e-11, limit=self.quad_limit, full_output=1
        )
        if msg and abs(err) > 1e-7 * abs(val) + 1e-13:
            raise NumericError(f"phase quadrature did not converge at {where}: {msg[0].splitlines()[0]}")
        if not math.isfinite(val):
            raise NumericError(f"phase quadrature returned {val} at {where}")
        return val

    @staticmethod
    def _ray_scale(y, xi) -> float:
        return (1.0 + float(np.linalg.norm(y))) / float(np.linalg.norm(xi))

    def _grad_u1_quad(self, y, xi, sign):
        # grad u_1^+(y) = int_0^inf grad I(y + s xi) ds, and minus for the incoming ray
        pot = self.potential
        return np.array(
            [
                sign
                * self._quad(
                    lambda s, k=k: pot.grad(y + sign * s * xi)[k], (y.tolist(), xi.tolist()), self._ray_scale(y, xi)
                )
                for k in range(len(y))
            ]
        )

    def _correction_quad(self, z, xi, sign):
        pot = self.potential
        z, xi = np.asarray(z, float), np.asarray(xi, float)
        where = (z.tolist(), xi.tolist())

        def q(y):
            val = -float(pot.at(y))
            if self.depth == 2:
                g = self._grad_u1_quad(y, xi, sign)
                val -= 0.5 * float(g @ g)
            return val

        def integrand(s):
            return q(z + sign * s * xi) + float(pot.at(sign * s * xi))

        return -sign * self._quad(integrand, where, self._ray_scale(z, xi))

    def _correction_dxi_quad(self, z, xi, sign):
        if self.depth != 1:
            raise ParameterError("quadrature xi-gradient is provided for depth 1")
        pot = self.potential
        z, xi = np.asarray(z, float), np.asarray(xi, float)
        # d/dxi of sign * int [I(z + sign s xi) - I(sign s xi)] ds
        return np.array(
            [
                self._quad(
                    lambda s, k=k: s * (pot.grad(z + sign * s * xi)[k] - pot.grad(sign * s * xi)[k]),
                    (z.tolist(), xi.tolist()),
                    self._ray_scale(z, xi),
                )
                for k in range(len(z))
            ]
        )

    # --- public evaluation -----------------------------------------------

    def correction(self, z, xi, sign: int = 1):
        """u^sign(z, xi) = phi^sign - z . xi (no gluing)."""
        if sign not in (1, -1):
            raise ParameterError("sign must be +1 or -1")
        if self.nu == 1:
            if self.potential.is_zero:
                return np.zeros(np.broadcast(np.asarray(z, float), np.asarray(xi, float)).shape)
            return self._correction_1d(z, xi, sign)
        if self.potential.is_zero:
            return 0.0
        return self._correction_quad(z, xi, sign)

    def correction_quadrature(self, z, xi, sign: int = 1) -> float:
        """Quadrature evaluation of u^sign at one point (any nu)."""
        return self._correction_quad(np.atleast_1d(z), np.atleast_1d(xi), sign)

    def correction_dxi(self, z, xi, sign: int = 1):
        """Analytic xi-gradient of u^sign (closed form for nu = 1, quadrature otherwise)."""
        if self.nu == 1:
            return self._correction_1d(z, xi, sign, dxi=True)
        return self._correction_dxi_quad(z, xi, sign)

    def correction_dz(self, z, xi):
        """Analytic z-derivative of u^+ = u^- for nu = 1."""
        if self.nu != 1:
            raise ParameterError("closed-form z-derivative is one-dimensional")
        return self._correction_grad_z_1d(z, xi)

    def in_cone(self, z, xi, sign: int = 1):
        """Membership in Gamma_sign(R_0, d, theta)."""
        z, xi = np.asarray(z, float), np.asarray(xi, float)
        if self.nu == 1:
            zn, xn, dot = np.abs(z), np.abs(xi), z * xi
        else:
            zn, xn, dot = np.linalg.norm(z, axis=-1), np.linalg.norm(xi, axis=-1), np.sum(z * xi, -1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where((zn > 0) & (xn > 0), dot / (zn * xn), 0.0)
        return (zn >= self.R0) & (xn >= self.d) & (sign * cos >= self.theta)

    def __call__(self, z, xi):
        """Glued phase for nu = 1 on broadcast arrays."""
        if self.nu != 1:
            raise ParameterError("glued evaluation on arrays is one-dimensional; use phase_at")
        z, xi = np.broadcast_arrays(np.asarray(z, float), np.asarray(xi, float))
        base = z * xi
        if self.potential.is_zero:
            return base.copy()
        cut = chi0(2 * xi[..., None] / self.d) * chi0(2 * z[..., None] / self.R0)
        cos = np.sign(z) * np.sign(xi)
        w_plus = psi_plus(cos, self.theta) * cut
        w_minus = psi_minus(cos, self.theta) * cut
        out = base.copy()
        active = (w_plus > 0) | (w_minus > 0)
        if np.any(active):
            za, xa = z[active], xi[active]
            corr = w_plus[active] * self._correction_1d(za, xa, 1) + w_minus[active] * self._correction_1d(za, xa, -1)
            out[active] = base[active] + corr
        return out

    def phase_at(self, z, xi) -> float:
        """Glued phase at a single point of any dimension."""
        z, xi = np.asarray(z, float), np.asarray(xi, float)
        base = float(z @ xi) if z.ndim else float(z * xi)
        zn, xn = float(np.linalg.norm(z)), float(np.linalg.norm(xi))
        if self.potential.is_zero or zn <= self.R0 / 2 or xn <= self.d / 2:
            return base
        cut = float(chi0(np.atleast_1d(2 * xi / self.d)) * chi0(np.atleast_1d(2 * z / self.R0)))
        cos = base / (zn * xn)
        wp, wm = float(psi_plus(cos, self.theta)) * cut, float(psi_minus(cos, self.theta)) * cut
        corr = 0.0
        if wp > 0:
            corr += wp * self.correction_quadrature(z, xi, 1)
        if wm > 0:
            corr += wm * self.correction_quadrature(z, xi, -1)
        return base + corr

    def to_dict(self) -> dict:
        return {
            "strength": self.potential.strength,
            "decay": self.potential.decay,
            "theta": self.theta,
            "d": self.d,
            "R0": self.R0,
            "depth": self.depth,
            "nu": self.nu,
        }


def build_phase(
    pot: LongRangePotential,
    theta: float = 0.5,
    d: float = 0.5,
    R0: float | None = None,
    depth: int = 2,
    nu: int = 1,
) -> PhaseFunction:
    return PhaseFunction(pot, theta, d, R0 if R0 is not None else default_radius(pot, d), depth, nu)


# residual ------------------------------------------------------------------

_FD8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
_FD8_2 = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])


def residual_symbol(pf: PhaseFunction, z, xi, rel_step: float = 0.05):
    """a(z, xi) = |grad phi|^2 / 2 + I - |xi|^2 / 2 - (i/2) Laplacian phi for nu = 1.

    grad phi = xi + u' and Laplacian phi = u'', with u' and u'' taken from the
    glued correction by eighth-order central differences with step
    rel_step * <z>.
    """
    if pf.nu != 1:
        raise ParameterError("residual symbol is evaluated for nu = 1")
    z, xi = np.broadcast_arrays(np.asarray(z, float), np.asarray(xi, float))
    h = rel_step * np.sqrt(1 + z * z)
    offsets = np.arange(-4, 5)
    zz = z[..., None] + offsets * h[..., None]
    xx = np.broadcast_to(xi[..., None], zz.shape)
    u = pf(zz, xx) - zz * xx
    du = np.sum(u * _FD8, axis=-1) / h
    d2u = np.sum(u * _FD8_2, axis=-1) / h**2
    eik = xi * du + 0.5 * du * du + pf.potential.at(z[..., None])
    return eik - 0.5j * d2u


@dataclass
class ShellReport:
    centres: list[float]
    sup: list[float]
    slope: float
    quantity: str
    params: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["shell_centre", f"sup_{self.quantity}", "fitted_slope"])
        for c, s in zip(self.centres, self.sup):
            w.writerow([repr(c), repr(s), repr(self.slope)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"centres": self.centres, "sup": self.sup, "slope": self.slope, "quantity": self.quantity, "params": self.params}


def cone_samples(pf: PhaseFunction, z_lo: float, z_hi: float, count: int, rng, xi_max: float = 2.0, sign: int = 1):
    """Random (z, xi) in Gamma_sign with z_lo <= |z| <= z_hi (nu = 1, log-uniform |z|)."""
    mag = np.exp(rng.uniform(math.log(z_lo), math.log(z_hi), count))
    z_sign = rng.choice([-1.0, 1.0], count)
    xi_mag = rng.uniform(pf.d, xi_max, count)
    return z_sign * mag, sign * z_sign * xi_mag


def _shells(lo: float, hi: float) -> list[tuple[float, float]]:
    edges = [lo]
    while edges[-1] * 2 < hi:
        edges.append(edges[-1] * 2)
    edges.append(hi)
    return list(zip(edges[:-1], edges[1:]))


def _fit(centres, sup) -> float:
    x, y = np.log(centres), np.log(sup)
    return float(np.polyfit(x, y, 1)[0])


def shell_sup(
    pf: PhaseFunction,
    quantity: str = "correction",
    z_range: tuple[float, float] | None = None,
    samples_per_shell: int = 200,
    seed: int = 0,
    xi_max: float = 2.0,
    sign: int = 1,
) -> ShellReport:
    """Sup of |phi - z xi| ("correction"), |d_z (phi - z xi)| ("gradient") or |a| ("residual") on dyadic shells of Gamma."""
    lo, hi = z_range or (2 * pf.R0, 100 * pf.R0)
    rng = np.random.default_rng(seed)
    centres, sups = [], []
    for a, b in _shells(lo, hi):
        z, xi = cone_samples(pf, a, b, samples_per_shell, rng, xi_max, sign)
        # include the cone's worst corner: smallest |xi| at the shell edges
        z = np.concatenate([z, [a, b, -a, -b]])
        xi = np.concatenate([xi, sign * np.array([pf.d, pf.d, -pf.d, -pf.d])])
        if quantity == "correction":
            vals = np.abs(pf(z, xi) - z * xi)
        elif quantity == "gradient":
            vals = np.abs(pf.correction_dz(z, xi))
        elif quantity == "residual":
            vals = np.abs(residual_symbol(pf, z, xi))
        else:
            raise ParameterError(f"unknown shell quantity {quantity!r}")
        centres.append(math.sqrt(a * b))
        sups.append(float(np.max(vals)))
    slope = _fit(centres, sups) if min(sups) > 0 else 0.0
    return ShellReport(centres, sups, slope, quantity, pf.to_dict())


# modifier ------------------------------------------------------------------

def _check_unit_mass(psi: GridState):
    if psi.grid.dim != 1:
        raise ParameterError("the modifier acts on a one-dimensional inter-cluster coordinate")
    if abs(float(psi.frame.weights[0]) - 1.0) > 1e-12:
        raise ParameterError("modifier dynamics needs unit reduced mass (e.g. masses 2, 2)")


def nyquist_guard(psi: GridState, fraction: float = 0.8, tol: float = 1e-10) -> None:
    spec = np.abs(np.fft.fft(psi.values)) ** 2
    k = np.abs(psi.grid.wavenumbers())
    kmax = math.pi / psi.grid.spacing
    outside = float(spec[k > fraction * kmax].sum() / spec.sum())
    if outside > tol:
        raise ParameterError(f"{outside:.2e} of the momentum distribution lies near the Nyquist limit")


def apply_modifier(pf: PhaseFunction, psi: GridState, chunk: int = 256) -> GridState:
    """J psi(x) = (2 pi)^-1 int exp(i phi(x, xi)) psi_hat(xi) d xi on the grid momentum nodes."""
    _check_unit_mass(psi)
    nyquist_guard(psi)
    g = psi.grid
    x = g.axis
    k = g.wavenumbers()
    # psi_hat(k_m) = h sum_n exp(-i k_m x_n) psi_n, with the grid offset x_0 = -L folded in
    psi_hat = g.spacing * np.exp(-1j * k * x[0]) * np.fft.fft(psi.values)
    out = np.empty(g.points, dtype=complex)
    norm = 1.0 / (2 * g.extent)
    for start in range(0, g.points, chunk):
        rows = x[start : start + chunk]
        phase = pf(rows[:, None], k[None, :])
        out[start : start + chunk] = norm * (np.exp(1j * phase) @ psi_hat)
    return replace(psi, values=out)


@dataclass
class ProbeReport:
    schedule: list[float]
    increments: list[float]
    ratios: list[float]
    localization: float
    unmodified_increments: list[float] | None = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule,
            "increments": self.increments,
            "ratios": self.ratios,
            "localization": self.localization,
            "unmodified_increments": self.unmodified_increments,
            "params": self.params,
        }


def _omega(psi, h_full, h_free, T, dt, modify, edge_tol):
    steps = int(round(T / dt))
    out = propagate(psi, h_free, dt, steps)
    if edge_mass(out) > edge_tol:
        raise NumericError(f"wavepacket reached the grid boundary by time {T}")
    moved = modify(out)
    back = propagate(moved, h_full, dt, steps, backward=True)
    return replace(back, time=psi.time), moved


def wave_operator_probe(
    psi: GridState,
    h_full: HamiltonianSpec,
    h_free: HamiltonianSpec,
    pf: PhaseFunction | None,
    schedule: Sequence[float],
    dt: float,
    sigma: float = 0.5,
    compare_unmodified: bool = False,
    edge_tol: float = 1e-8,
) -> ProbeReport:
    """Cauchy increments of exp(iTH) J exp(-iTH_b) psi along the schedule.

    ``pf = None`` runs with J = identity.  Localization is the probability of
    J exp(-i T_max H_b) psi in |x| >= sigma T_max.
    """
    _check_unit_mass(psi)
    times = [float(t) for t in schedule]
    if len(times) < 2 or any(b <= a for a, b in zip(times, times[1:])) or times[0] <= 0:
        raise ParameterError("schedule needs at least two increasing positive times")

    def run(modify):
        omegas, last = [], None
        for T in times:
            om, last = _omega(psi, h_full, h_free, T, dt, modify, edge_tol)
            omegas.append(om)
        inc = [
            math.sqrt(float(np.sum(np.abs(b.values - a.values) ** 2)) * psi.grid.cell)
            for a, b in zip(omegas, omegas[1:])
        ]
        return inc, last

    modify = (lambda s: apply_modifier(pf, s)) if pf is not None else (lambda s: s)
    inc, last = run(modify)
    dens = np.abs(last.values) ** 2 * psi.grid.cell
    loc = float(dens[np.abs(psi.grid.axis) >= sigma * times[-1]].sum())
    ratios = [b / a if a > 0 else float("nan") for a, b in zip(inc, inc[1:])]
    base = None
    if compare_unmodified:
        base, _ = run(lambda s: s)
    params = {"dt": dt, "sigma": sigma}
    if pf is not None:
        params.update(pf.to_dict())
    return ProbeReport(times, inc, ratios, loc, base, params)
