"""Smooth partition of unity on the shell 1 <= |x|^2 <= 1 + theta_{N-1}.

Points are mass-orthonormal internal coordinates ``y`` of shape (..., N-1, nu)
as produced by :class:`scatgeo.geometry.MassGeometry`.  Squared norms
|z_bk|^2, |x_b|^2, |x^b|^2 and |x_alpha|^2 are all taken in the mass metric;
for a pair alpha = {i, j} that is mu_ij |r_i - r_j|^2, the weight x_alpha
carries as an intercluster coordinate of the finest decomposition.

For |b| = N the intercluster part is all of x and the x_b condition is
vacuous, so it is dropped from both the region tests and varphi_b.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .cutoffs import phi_greater
from .geometry import MassGeometry, MassSpec, each_row_norm_sq, rows_norm_sq
from .lattice import (
    ClusterDecomposition,
    enumerate_decompositions,
    is_refinement,
    is_strict_refinement,
)

REGION_KINDS = ("T", "T_tilde", "S", "S_theta")


@dataclass(frozen=True)
class PartitionConstants:
    """theta = (theta_1, ..., theta_{N-1}), rho = (rho_2, ..., rho_N)."""

    theta: tuple[float, ...]
    rho: tuple[float, ...]
    gamma: float
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if len(self.theta) != len(self.rho) or not self.theta:
            raise ValueError("need N-1 theta values and N-1 rho values")

    @property
    def n(self) -> int:
        return len(self.theta) + 1

    def theta_of(self, j: int) -> float:
        return self.theta[j - 1]

    def rho_of(self, j: int) -> float:
        return self.rho[j - 2]

    @property
    def theta_shell(self) -> float:
        """theta_{N-1}, the shell thickness."""
        return self.theta[-1]

    @property
    def gamma1p(self) -> float:
        return self.gamma * (1 + self.theta_shell)

    @property
    def gamma2p(self) -> float:
        return (1 + self.gamma) / (1 + self.theta_shell)

    @property
    def r0(self) -> float:
        ratios = [self.rho_of(j) / self.theta_of(j) for j in range(2, self.n)]
        return min(ratios) if ratios else math.inf

    def truncate(self, m: int) -> "PartitionConstants":
        """Constants for m <= N particles: theta_1..theta_{m-1}, rho_2..rho_m."""
        if not 2 <= m <= self.n:
            raise ValueError(f"cannot truncate N={self.n} constants to {m}")
        return PartitionConstants(self.theta[: m - 1], self.rho[: m - 1], self.gamma, self.sigma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(gamma1p=self.gamma1p, gamma2p=self.gamma2p, r0=_json_float(self.r0))
        return d


def _json_float(v: float):
    return None if math.isinf(v) else v


GAMMA = 1.1
RATIO = 50.0
SIGMA_FRACTION = 0.9


def select_constants(n: int) -> PartitionConstants:
    """Deterministic admissible constants for n particles (2 <= n <= 6).

    gamma = 1.1.  For N = 2, theta_1 = 0.5 and rho_2 = 0.25.  Otherwise
    theta_1 = 1, theta_2 = 0.01, rho_2 = 0.5; below that rho_j = 50 theta_j and
    theta_j = theta_{j-1} / 51, so the chain condition holds with equality
    from j = 3 on; rho_N = theta_{N-1} / 2 and sigma is 90 % of its bound.
    """
    if not isinstance(n, int) or not 2 <= n <= 6:
        raise ValueError(f"constant selection supports 2 <= N <= 6, got {n!r}")
    gamma = GAMMA
    if n == 2:
        # theta_1 is also the shell thickness here, and gamma(1 + theta_1) < 2
        theta, rho = [0.5], [0.25]
    else:
        theta = [1.0, 0.01]
        for _ in range(3, n):
            theta.append(theta[-1] / (RATIO + 1))
        rho = [RATIO * t for t in theta[1:]] + [theta[-1] / 2]
    c = PartitionConstants(tuple(theta), tuple(rho), gamma, 1.0)
    c = PartitionConstants(c.theta, c.rho, gamma, SIGMA_FRACTION * _sigma_bound(c))
    report = verify_constants(c, n)
    if not report.passed:
        raise RuntimeError(f"constant search failed for N={n}: {report.failures()}")
    return c


def _sigma_bound(c: PartitionConstants) -> float:
    g = c.gamma
    bounds = [(1 - 1 / g) * c.rho_of(c.n)]
    for j in range(2, c.n):
        bounds += [(1 - 1 / g) * c.rho_of(j), (g - 1) * c.theta_of(j)]
    return min(bounds)


@dataclass
class CheckItem:
    name: str
    passed: bool
    slack: float


@dataclass
class ConstantsReport:
    items: list[CheckItem]

    @property
    def passed(self) -> bool:
        return all(it.passed for it in self.items)

    def failures(self) -> list[str]:
        return [it.name for it in self.items if not it.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "items": [
                {"name": it.name, "passed": it.passed, "slack": _json_float(it.slack)}
                for it in self.items
            ],
        }


def verify_constants(c: PartitionConstants, n: int) -> ConstantsReport:
    """Check every admissibility inequality; slack > 0 means satisfied."""
    items: list[CheckItem] = []

    def strict(name, lhs, rhs):
        items.append(CheckItem(name, bool(lhs > rhs), lhs - rhs))

    def weak(name, lhs, rhs):
        items.append(CheckItem(name, bool(lhs >= rhs), lhs - rhs))

    if c.n != n:
        items.append(CheckItem(f"constants sized for N={n}", False, -abs(c.n - n)))
        return ConstantsReport(items)
    th, rh = c.theta_of, c.rho_of
    weak("1 >= theta_1", 1.0, th(1))
    if n == 2:
        strict("theta_1 > rho_2", th(1), rh(2))
    for j in range(2, n):
        strict(f"theta_1 > rho_{j}", th(1), rh(j))
        strict(f"rho_{j} > theta_{j}", rh(j), th(j))
        strict(f"theta_{j} > rho_{n}", th(j), rh(n))
        weak(f"theta_{j - 1} >= theta_{j} + rho_{j}", th(j - 1), th(j) + rh(j))
    strict(f"rho_{n} > 0", rh(n), 0.0)
    strict("gamma > 1", c.gamma, 1.0)
    strict("gamma1' < 2", 2.0, c.gamma1p)
    if n >= 3:
        strict("gamma(1+gamma) < r0", c.r0, c.gamma * (1 + c.gamma))
        denom = 2 - c.gamma1p
        lhs = 2 * c.gamma1p * c.gamma2p / denom if denom > 0 else math.inf
        strict("2 gamma1' gamma2' / (2 - gamma1') < r0", c.r0, lhs)
    strict("sigma > 0", c.sigma, 0.0)
    g = c.gamma
    strict(f"sigma < (1 - 1/gamma) rho_{n}", (1 - 1 / g) * rh(n), c.sigma)
    for j in range(2, n):
        strict(f"sigma < (1 - 1/gamma) rho_{j}", (1 - 1 / g) * rh(j), c.sigma)
        strict(f"sigma < (gamma - 1) theta_{j}", (g - 1) * th(j), c.sigma)
    return ConstantsReport(items)


class PhasePartition:
    """The cutoffs varphi_b and the partition functions J_b for one system."""

    def __init__(self, geom: MassGeometry, constants: PartitionConstants):
        if constants.n != geom.n:
            raise ValueError(f"constants for N={constants.n} but geometry has N={geom.n}")
        self.geom = geom
        self.c = constants
        self.n = geom.n
        decomps = [d for d in enumerate_decompositions(self.n) if d.size >= 2]
        self.decompositions = decomps
        self.levels = {k: [d for d in decomps if d.size == k] for k in range(2, self.n + 1)}

    # squared norms --------------------------------------------------------
    def link_norms(self, b: ClusterDecomposition, y: np.ndarray) -> np.ndarray:
        return each_row_norm_sq(self.geom.link_rows(b), y)

    def outer_norm(self, b: ClusterDecomposition, y: np.ndarray) -> np.ndarray:
        return rows_norm_sq(self.geom.outer_rows(b), y)

    def inner_norm(self, b: ClusterDecomposition, y: np.ndarray) -> np.ndarray:
        return rows_norm_sq(self.geom.inner_rows(b), y)

    @staticmethod
    def total_norm(y: np.ndarray) -> np.ndarray:
        return np.sum(np.asarray(y) ** 2, axis=(-2, -1))

    def pair_norms(self, y: np.ndarray):
        pairs, rows = self.geom.pair_rows()
        return pairs, each_row_norm_sq(rows, y)

    # regions ---------------------------------------------------------------
    def in_T(self, b, y, rho: float, theta: float) -> np.ndarray:
        r2 = self.total_norm(y)
        ok = np.all(self.link_norms(b, y) > rho * r2[..., None], axis=-1)
        if b.size < self.n:
            ok &= self.outer_norm(b, y) > (1 - theta) * r2
        return ok

    def in_T_tilde(self, b, y, rho: float, theta: float) -> np.ndarray:
        ok = np.all(self.link_norms(b, y) > rho, axis=-1)
        if b.size < self.n:
            ok &= self.outer_norm(b, y) > 1 - theta
        return ok

    def in_S(self, y) -> np.ndarray:
        return self.total_norm(y) >= 1

    def in_S_theta(self, y, theta: float | None = None) -> np.ndarray:
        theta = self.c.theta_shell if theta is None else theta
        r2 = self.total_norm(y)
        return (r2 >= 1) & (r2 <= 1 + theta)

    def default_rho_theta(self, b) -> tuple[float, float]:
        k = b.size
        return self.c.rho_of(k), (self.c.theta_of(k) if k < self.n else 0.0)

    # cutoffs ---------------------------------------------------------------
    def varphi(self, b: ClusterDecomposition, y: np.ndarray) -> np.ndarray:
        """Product of phi_sigma(|z_bk|^2 > rho_|b|) and phi_sigma(|x_b|^2 > 1 - theta_|b|)."""
        outer = self.geom.outer_rows(b) if b.size < self.n else None
        return self._varphi_rows(b.size, self.geom.link_rows(b), outer, y)

    def _varphi_rows(self, k: int, links: np.ndarray, outer, y: np.ndarray) -> np.ndarray:
        s = self.c.sigma
        out = np.prod(phi_greater(each_row_norm_sq(links, y), self.c.rho_of(k), s), axis=-1)
        if outer is not None:
            out = out * phi_greater(rows_norm_sq(outer, y), 1 - self.c.theta_of(k), s)
        return out

    def all_varphi(self, y: np.ndarray) -> dict:
        return {b: self.varphi(b, y) for b in self.decompositions}

    def _frame_rows(self, b: ClusterDecomposition) -> dict:
        """Cutoff rows of every b' re-expressed in the orthonormal b-frame.

        Columns belonging to x^b are mathematically zero whenever b <= b'; they
        are set to exact zeros so those cutoffs see x_b alone, bit for bit.
        """
        cache = self.__dict__.setdefault("_frame_cache", {})
        if b not in cache:
            ob = self.geom.orthonormal_map(b)
            r = self.geom.outer_rows(b).shape[0]
            table = {}
            for bp in self.decompositions:
                links = self.geom.link_rows(bp) @ ob.T
                outer = self.geom.outer_rows(bp) @ ob.T if bp.size < self.n else None
                if is_refinement(b, bp):
                    links[:, r:] = 0.0
                    if outer is not None:
                        outer[:, r:] = 0.0
                table[bp] = (links, outer)
            cache[b] = table
        return cache[b]

    def J_in_frame(self, b: ClusterDecomposition, xf: np.ndarray) -> np.ndarray:
        """J_b at points given as orthonormal b-frame coordinates (x_b rows first)."""
        rows = self._frame_rows(b)
        phis = {bp: self._varphi_rows(bp.size, *rows[bp], xf) for bp in self.decompositions}
        return self.all_J(xf, phis=phis)[b]

    def frame_coords(self, b: ClusterDecomposition, y: np.ndarray) -> np.ndarray:
        return np.einsum("rk,...kd->...rd", self.geom.orthonormal_map(b), y)

    def all_J(self, y: np.ndarray, restricted: bool = False, phis: dict | None = None) -> dict:
        """J_b for every b with |b| >= 2.

        The default evaluates the full product over coarser levels, valid on
        all of R^n.  ``restricted=True`` keeps only the coarser b' with b < b',
        which agrees with the full form on the shell.
        """
        phis = self.all_varphi(y) if phis is None else phis
        out = {}
        if not restricted:
            level_sums = {k: sum(phis[b] for b in bs) for k, bs in self.levels.items()}
            for b in self.decompositions:
                val = phis[b]
                for j in range(2, b.size):
                    val = val * (1 - level_sums[j])
                out[b] = val
            return out
        for b in self.decompositions:
            val = phis[b]
            for j in range(2, b.size):
                coarser = [bj for bj in self.levels[j] if is_strict_refinement(b, bj)]
                val = val * (1 - sum((phis[bj] for bj in coarser), np.zeros_like(val)))
            out[b] = val
        return out

    def J(self, b: ClusterDecomposition, y: np.ndarray, restricted: bool = False) -> np.ndarray:
        return self.all_J(y, restricted)[b]

    def sum_J(self, y: np.ndarray) -> np.ndarray:
        return sum(self.all_J(y).values())

    # sampling --------------------------------------------------------------
    def sample_shell(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform direction, mass-metric radius uniform in [1, sqrt(1 + theta_{N-1})]."""
        v = rng.standard_normal((count, self.n - 1, self.geom.nu))
        v /= np.sqrt(self.total_norm(v))[:, None, None]
        radius = rng.uniform(1.0, math.sqrt(1 + self.c.theta_shell), count)
        return v * radius[:, None, None]

    def _targets(self, b):
        """(rows, absolute thresholds, relative thresholds) for each cutoff of b."""
        c, k = self.c, b.size
        rho, s, g = c.rho_of(k), c.sigma, c.gamma
        out = []
        for row in self.geom.link_rows(b):
            out.append((row[None, :], [rho, rho - s, rho / g], [rho, rho / c.gamma1p]))
        if k < self.n and self.n - 1 > k - 1:
            th = c.theta_of(k)
            out.append(
                (
                    self.geom.outer_rows(b),
                    [1 - th, 1 - th - s, 1 - g * th],
                    [1 - th, 1 - c.gamma2p * th],
                )
            )
        return out

    def sample_adversarial(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Shell points whose cutoff arguments sit within 2 sigma of a threshold."""
        dim = self.n - 1
        if dim * self.geom.nu == 1 or self.n == 2:
            return self.sample_shell(rng, count)
        pts = np.empty((count, dim, self.geom.nu))
        choices = [(b, t) for b in self.decompositions for t in self._targets(b)]
        choices = [(b, t) for b, t in choices if t[0].shape[0] * self.geom.nu < dim * self.geom.nu]
        r2 = rng.uniform(1.0, math.sqrt(1 + self.c.theta_shell), count) ** 2
        s = self.c.sigma
        for i in range(count):
            b, (rows, absolute, relative) = choices[rng.integers(len(choices))]
            options = [(t, False) for t in absolute] + [(t, True) for t in relative]
            tau, rel = options[rng.integers(len(options))]
            u = (tau * r2[i] if rel else tau) + rng.uniform(-2 * s, 2 * s)
            u = min(max(u, 0.0), r2[i])
            while True:
                v = rng.standard_normal((dim, self.geom.nu))
                a = rows @ v
                par = rows.T @ a
                perp = v - par
                if np.sum(par * par) > 1e-12 and np.sum(perp * perp) > 1e-12:
                    break
            par /= math.sqrt(np.sum(par * par))
            perp /= math.sqrt(np.sum(perp * perp))
            pts[i] = math.sqrt(u) * par + math.sqrt(r2[i] - u) * perp
        return pts

    def vary_inner(self, b, xf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Redraw x^b in b-frame coordinates; x_b is copied bit for bit, |x|^2 stays on the shell."""
        r = self.geom.outer_rows(b).shape[0]
        xb2 = np.sum(xf[:, :r] ** 2, axis=(-2, -1))
        lo = np.maximum(1.0 - xb2, 0.0)
        hi = 1.0 + self.c.theta_shell - xb2
        if np.any(hi < lo):
            raise ValueError("point not on the shell")
        new2 = rng.uniform(lo, hi)
        w = rng.standard_normal((xf.shape[0], xf.shape[1] - r, self.geom.nu))
        w *= np.sqrt(new2 / np.sum(w * w, axis=(-2, -1)))[:, None, None]
        out = xf.copy()
        out[:, r:] = w
        return out

    def gradient_outer(self, b, y: np.ndarray, h: float) -> np.ndarray:
        """Central-difference |grad_{x_b} J_b| in mass-orthonormal x_b coordinates."""
        rows = self.geom.outer_rows(b)
        total = np.zeros(y.shape[0])
        for r in rows:
            for d in range(self.geom.nu):
                e = np.zeros(y.shape[1:])
                e[:, d] = r
                diff = (self.J(b, y + h * e) - self.J(b, y - h * e)) / (2 * h)
                total += diff * diff
        return np.sqrt(total)


def in_region(y, b, kind: str, partition: PhasePartition, rho=None, theta=None) -> np.ndarray:
    """Membership in T_b(rho, theta), its absolute variant, S or S_theta."""
    if kind not in REGION_KINDS:
        raise ValueError(f"unknown region kind {kind!r}")
    if kind == "S":
        return partition.in_S(y)
    if kind == "S_theta":
        return partition.in_S_theta(y, theta)
    d_rho, d_theta = partition.default_rho_theta(b)
    rho = d_rho if rho is None else rho
    theta = d_theta if theta is None else theta
    if kind == "T":
        return partition.in_T(b, y, rho, theta)
    return partition.in_T_tilde(b, y, rho, theta)


def varphi_b(y, b, partition: PhasePartition) -> np.ndarray:
    return partition.varphi(b, y)


def J_b(y, b, partition: PhasePartition) -> np.ndarray:
    return partition.J(b, y)


@dataclass
class PartitionReport:
    n: int
    nu: int
    masses: list[float]
    seed: int
    samples: int
    constants: dict
    max_identity_deviation: float
    violations: dict
    max_gradient: float
    max_gradient_refined: float
    max_locality_deviation: float
    max_restricted_deviation: float
    worst: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("worst")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def worst_csv(self) -> str:
        lines = ["index,decomposition,J_sum_deviation,J_b"]
        for idx, bs, dev, jb in self.worst:
            lines.append(f"{idx},{bs},{dev:.17g},{jb:.17g}")
        return "\n".join(lines) + "\n"


def verify_partition(
    constants: PartitionConstants,
    n: int,
    samples: int,
    seed: int,
    nu: int = 1,
    masses=None,
    locality_probes: int = 1000,
    support_threshold: float = 1e-12,
) -> PartitionReport:
    """Sample the shell and check the partition and region properties."""
    if samples < 1:
        raise ValueError("need at least one sample")
    masses = tuple(masses) if masses is not None else (1.0,) * n
    geom = MassGeometry(MassSpec(masses), nu)
    part = PhasePartition(geom, constants)
    c = constants
    rng = np.random.default_rng(seed)
    n_uniform = (samples + 1) // 2
    y = np.concatenate(
        [part.sample_shell(rng, n_uniform), part.sample_adversarial(rng, samples - n_uniform)]
    )
    phis = part.all_varphi(y)
    Js = part.all_J(y, phis=phis)
    dev = np.abs(sum(Js.values()) - 1.0)
    Jr = part.all_J(y, restricted=True, phis=phis)
    restricted_dev = max(float(np.max(np.abs(Js[b] - Jr[b]))) for b in Js)

    r2 = part.total_norm(y)
    pairs, pn = part.pair_norms(y)
    support = 0
    for b in part.decompositions:
        crossing = [i for i, p in enumerate(pairs) if b.block_of(p.i) != b.block_of(p.j)]
        bad = np.any(pn[:, crossing] <= c.rho_of(b.size) * r2[:, None] / 2, axis=1)
        support += int(np.sum((Js[b] > support_threshold) & bad))

    covered = np.zeros(len(y), dtype=bool)
    for b in part.decompositions:
        covered |= part.in_T(b, y, *part.default_rho_theta(b))
    covering = int(np.sum(~covered & (r2 >= 1)))

    scaled = {}
    for b in part.decompositions:
        rho_b, theta_b = part.default_rho_theta(b)
        scaled[b] = part.in_T(b, y, rho_b / c.gamma1p, c.gamma2p * theta_b)
    disjoint = 0
    for b in part.decompositions:
        for cc in part.decompositions:
            if b.size >= cc.size and not is_refinement(b, cc):
                disjoint += int(np.sum(scaled[b] & scaled[cc]))

    probes = min(locality_probes, len(y))
    idx = rng.choice(len(y), probes, replace=False)
    locality = 0.0
    for b in part.decompositions:
        if b.size == n:
            continue
        xf = part.frame_coords(b, y[idx])
        moved = part.vary_inner(b, xf, rng)
        change = np.abs(part.J_in_frame(b, moved) - part.J_in_frame(b, xf))
        locality = max(locality, float(np.max(change)))

    h = c.sigma * 1e-3
    grad = grad_fine = 0.0
    for b in part.decompositions:
        grad = max(grad, float(np.max(part.gradient_outer(b, y, h))))
        grad_fine = max(grad_fine, float(np.max(part.gradient_outer(b, y, h / 2))))

    order = np.argsort(-dev, kind="stable")[:20]
    worst = []
    for i in order:
        bmax = max(part.decompositions, key=lambda b: Js[b][i])
        worst.append((int(i), bmax.to_json(), float(dev[i]), float(Js[bmax][i])))

    return PartitionReport(
        n=n,
        nu=nu,
        masses=list(masses),
        seed=seed,
        samples=samples,
        constants=c.to_dict(),
        max_identity_deviation=float(np.max(dev)),
        violations={"support": support, "covering": covering, "disjointness": disjoint},
        max_gradient=grad,
        max_gradient_refined=grad_fine,
        max_locality_deviation=locality,
        max_restricted_deviation=restricted_dev,
        worst=worst,
    )


@dataclass
class RegionReport:
    """Counts of sampled points that break each region property (0 means none found)."""

    n: int
    nu: int
    masses: list[float]
    seed: int
    samples: int
    gamma1: float
    gamma2: float
    constants: dict
    violations: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def verify_regions(
    constants: PartitionConstants,
    n: int,
    samples: int,
    seed: int,
    nu: int = 1,
    masses=None,
    gamma1: float | None = None,
    gamma2: float | None = None,
) -> RegionReport:
    """Sample the region inclusions and exclusions behind the partition.

    ``gamma1 * gamma2`` must stay below r0; by default both are set to
    sqrt(0.99 r0), the most demanding admissible symmetric choice.
    """
    c = constants
    if gamma1 is None or gamma2 is None:
        g = math.sqrt(0.99 * c.r0) if math.isfinite(c.r0) else 2.0
        gamma1 = g if gamma1 is None else gamma1
        gamma2 = g if gamma2 is None else gamma2
    if not (gamma1 > 1 and gamma2 > 1 and gamma1 * gamma2 < c.r0):
        raise ValueError("need gamma1, gamma2 > 1 with gamma1 * gamma2 < r0")
    masses = tuple(masses) if masses is not None else (1.0,) * n
    part = PhasePartition(MassGeometry(MassSpec(masses), nu), c)
    rng = np.random.default_rng(seed)
    n_uniform = (samples + 1) // 2
    y = np.concatenate(
        [part.sample_shell(rng, n_uniform), part.sample_adversarial(rng, samples - n_uniform)]
    )
    r2 = part.total_norm(y)
    pairs, pn = part.pair_norms(y)
    decs = part.decompositions
    rt = {b: part.default_rho_theta(b) for b in decs}
    g, g1p, g2p = c.gamma, c.gamma1p, c.gamma2p

    base = {b: part.in_T(b, y, *rt[b]) for b in decs}
    general = {b: part.in_T(b, y, rt[b][0] / gamma1, gamma2 * rt[b][1]) for b in decs}
    scaled = {b: part.in_T(b, y, rt[b][0] / g1p, g2p * rt[b][1]) for b in decs}
    tilde = {b: part.in_T_tilde(b, y, *rt[b]) for b in decs}
    tilde_wide = {b: part.in_T_tilde(b, y, rt[b][0] / g, g * rt[b][1]) for b in decs}

    covered = np.zeros(len(y), dtype=bool)
    for b in decs:
        covered |= base[b]

    def overlaps(sets):
        count = 0
        for b in decs:
            for cc in decs:
                if b.size >= cc.size and not is_refinement(b, cc):
                    count += int(np.sum(sets[b] & sets[cc]))
        return count

    separated = 0
    for b in decs:
        crossing = [i for i, p in enumerate(pairs) if b.block_of(p.i) != b.block_of(p.j)]
        close = np.any(pn[:, crossing] <= rt[b][0] * r2[:, None] / 2, axis=1)
        separated += int(np.sum(scaled[b] & close))

    violations = {
        "shell not covered by T_b(rho, theta)": int(np.sum(~covered & (r2 >= 1))),
        "T_b overlap with gamma1, gamma2 scaling": overlaps(general),
        "T_b overlap with gamma1', gamma2' scaling": overlaps(scaled),
        "T_b not inside absolute T_b on shell": sum(
            int(np.sum(base[b] & ~tilde[b])) for b in decs
        ),
        "absolute T_b not inside its gamma widening": sum(
            int(np.sum(tilde[b] & ~tilde_wide[b])) for b in decs
        ),
        "widened absolute T_b not inside T_b(rho/gamma1', gamma2' theta)": sum(
            int(np.sum(tilde_wide[b] & ~scaled[b])) for b in decs
        ),
        "scaled T_b contains a close crossing pair": separated,
    }
    return RegionReport(
        n=n,
        nu=nu,
        masses=list(masses),
        seed=seed,
        samples=samples,
        gamma1=gamma1,
        gamma2=gamma2,
        constants=c.to_dict(),
        violations=violations,
    )
