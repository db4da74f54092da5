"""Jacobi and clustered Jacobi coordinates with the mass-weighted metric.

A configuration of N particles in R^nu with vanishing centre of mass is
described in a frame by N-1 coordinate vectors, stored as arrays of shape
``(..., N-1, nu)``.  Every frame acts identically on the nu spatial
components, so all linear maps here are (N-1) x (N-1) or (N-1) x N matrices
applied along the coordinate axis.

For a decomposition b the first |b|-1 coordinates are the intercluster part
x_b (Jacobi coordinates of the cluster centres of mass, blocks in canonical
order); the remaining N-|b| are the intra-cluster parts x^(C_l), block by
block, each built in ascending particle order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .lattice import ClusterDecomposition, PairIndex, intercluster_links, split_link


@dataclass(frozen=True)
class MassSpec:
    masses: tuple[float, ...]
    hbar: float = 1.0

    def __post_init__(self):
        masses = tuple(float(m) for m in self.masses)
        object.__setattr__(self, "masses", masses)
        if len(masses) < 2:
            raise ValueError("need at least two particles")
        if not all(np.isfinite(m) and m > 0 for m in masses):
            raise ValueError(f"masses must be positive, got {masses}")
        if not (np.isfinite(self.hbar) and self.hbar > 0):
            raise ValueError(f"hbar must be positive, got {self.hbar}")

    @property
    def n(self) -> int:
        return len(self.masses)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.masses)

    def group_mass(self, group) -> float:
        return float(sum(self.masses[i - 1] for i in group))

    def reduced_mass(self, g1, g2) -> float:
        m1, m2 = self.group_mass(g1), self.group_mass(g2)
        return m1 * m2 / (m1 + m2)


def com_row(mass: MassSpec, group) -> np.ndarray:
    """Row vector r -> centre of mass of the particles in ``group``."""
    row = np.zeros(mass.n)
    tot = mass.group_mass(group)
    for i in group:
        row[i - 1] = mass.masses[i - 1] / tot
    return row


def _jacobi_chain(mass: MassSpec, groups) -> tuple[list[np.ndarray], list[float]]:
    """Jacobi rows COM(g_{l+1}) - COM(g_1..g_l) and their reduced masses."""
    rows, weights = [], []
    for ell in range(1, len(groups)):
        head = [i for g in groups[:ell] for i in g]
        rows.append(com_row(mass, groups[ell]) - com_row(mass, head))
        weights.append(mass.reduced_mass(head, groups[ell]))
    return rows, weights


@dataclass(frozen=True, eq=False)
class JacobiFrame:
    """Clustered Jacobi frame of a decomposition.

    ``to_jacobi`` is the (N-1) x N map from particle positions to frame
    coordinates; ``from_jacobi`` is its inverse on the centre-of-mass-zero
    subspace.  ``weights`` holds M_1..M_{|b|-1} followed by the intra-cluster
    reduced masses.
    """

    decomposition: ClusterDecomposition
    mass: MassSpec
    nu: int
    to_jacobi: np.ndarray = field(repr=False)
    from_jacobi: np.ndarray = field(repr=False)
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.mass.n - 1

    @property
    def n_outer(self) -> int:
        return self.decomposition.size - 1

    @property
    def inner_product(self) -> "MassInnerProduct":
        return MassInnerProduct(self.weights)

    def coords(self, r: np.ndarray) -> np.ndarray:
        """Frame coordinates of positions ``r`` of shape (..., N, nu)."""
        return np.einsum("kn,...nd->...kd", self.to_jacobi, r)

    def positions(self, x: np.ndarray) -> np.ndarray:
        """Centre-of-mass-zero positions from frame coordinates."""
        return np.einsum("nk,...kd->...nd", self.from_jacobi, x)

    def outer(self, x: np.ndarray) -> np.ndarray:
        return x[..., : self.n_outer, :]

    def inner(self, x: np.ndarray) -> np.ndarray:
        return x[..., self.n_outer :, :]

    def same_space(self, other: "JacobiFrame") -> bool:
        return self.mass == other.mass and self.nu == other.nu

    def to_dict(self) -> dict:
        return {
            "decomposition": [list(b) for b in self.decomposition.blocks],
            "masses": list(self.mass.masses),
            "hbar": self.mass.hbar,
            "nu": self.nu,
            "weights": self.weights.tolist(),
            "matrix": self.to_jacobi.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class MassInnerProduct:
    weights: np.ndarray

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return inner(x, y, self)


def build_frame(mass: MassSpec, b: ClusterDecomposition, nu: int = 1) -> JacobiFrame:
    if b.n != mass.n:
        raise ValueError(f"decomposition over N={b.n} but {mass.n} masses given")
    if int(nu) != nu or nu < 1:
        raise ValueError(f"spatial dimension must be a positive integer, got {nu}")
    rows, weights = _jacobi_chain(mass, [list(blk) for blk in b.blocks])
    for blk in b.blocks:
        r, w = _jacobi_chain(mass, [[i] for i in blk])
        rows += r
        weights += w
    A = np.array(rows).reshape(mass.n - 1, mass.n)
    full = np.vstack([A, mass.array / mass.array.sum()])
    B = np.linalg.inv(full)[:, :-1]
    return JacobiFrame(b, mass, int(nu), A, B, np.array(weights))


def inner(x: np.ndarray, y: np.ndarray, ip: MassInnerProduct | JacobiFrame) -> np.ndarray:
    """Mass-weighted inner product sum_k w_k x_k . y_k over the last two axes."""
    w = np.asarray(ip.weights)
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape[-2:] != y.shape[-2:] or x.shape[-2] != w.shape[0]:
        raise ValueError(f"shape mismatch: {x.shape}, {y.shape} for {w.shape[0]} weights")
    return np.einsum("k,...kd,...kd->...", w, x, y)


def norm_sq(x: np.ndarray, frame: JacobiFrame) -> np.ndarray:
    return inner(x, x, frame)


def change_frame(f1: JacobiFrame, f2: JacobiFrame) -> np.ndarray:
    """Matrix U with x_{f2} = U x_{f1}; orthogonal for the mass metrics."""
    if not f1.same_space(f2):
        raise ValueError("frames built from different masses or spatial dimensions")
    return f2.to_jacobi @ f1.from_jacobi


def apply_map(U: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("kl,...ld->...kd", U, x)


def pair_coordinate(alpha: PairIndex, frame: JacobiFrame) -> np.ndarray:
    """Row c with x_alpha = r_i - r_j = sum_k c_k x_k in ``frame``."""
    if alpha.j > frame.mass.n:
        raise ValueError(f"pair {alpha} out of range for N={frame.mass.n}")
    e = np.zeros(frame.mass.n)
    e[alpha.i - 1] = 1.0
    e[alpha.j - 1] = -1.0
    return e @ frame.from_jacobi


def pair_mass(alpha: PairIndex, mass: MassSpec) -> float:
    return mass.reduced_mass([alpha.i], [alpha.j])


def link_norm_sq(r: np.ndarray, mass: MassSpec, g1, g2) -> np.ndarray:
    """mu_{12} |R_1 - R_2|^2 for the centres of mass of particle groups g1, g2."""
    z = np.einsum("n,...nd->...d", com_row(mass, g1) - com_row(mass, g2), r)
    return mass.reduced_mass(g1, g2) * np.sum(z * z, axis=-1)


def norm_split(x: np.ndarray, frame_b: JacobiFrame, frame_c: JacobiFrame):
    """Return (|x_b|^2, |z_ck|^2, |x^c|^2) for x given in ``frame_b``.

    c must split exactly one block of b in two; z_ck joins the two halves.
    Each squared norm uses the weights of its own frame, so the three terms
    add up to |x|^2.
    """
    if not frame_b.same_space(frame_c):
        raise ValueError("frames built from different masses or spatial dimensions")
    b, c = frame_b.decomposition, frame_c.decomposition
    link = split_link(b, c)
    x = np.asarray(x, dtype=float)
    wb = frame_b.weights[: frame_b.n_outer]
    outer = np.einsum("k,...kd->...", wb, frame_b.outer(x) ** 2)
    xc = apply_map(change_frame(frame_b, frame_c), x)
    wc = frame_c.weights[frame_c.n_outer :]
    inner_c = np.einsum("k,...kd->...", wc, frame_c.inner(xc) ** 2)
    r = frame_b.positions(x)
    z = link_norm_sq(r, frame_b.mass, c.blocks[link.from_block], c.blocks[link.to_block])
    return outer, z, inner_c


class MassGeometry:
    """Mass-orthonormal description of the internal configuration space.

    Points are represented by y = sqrt(w) x in the Jacobi frame of the finest
    decomposition (all singletons), shape (..., N-1, nu).  Every squared norm
    used by the partition of unity is |R y|^2 for a matrix R with orthonormal
    rows, which this class precomputes.
    """

    def __init__(self, mass: MassSpec, nu: int = 1):
        self.mass = mass
        self.nu = int(nu)
        self.n = mass.n
        self.reference = build_frame(mass, ClusterDecomposition.singletons(mass.n), nu)
        sw = np.sqrt(self.reference.weights)
        # positions from y
        self._pos_from_y = self.reference.from_jacobi / sw[None, :]

    @property
    def dim(self) -> int:
        return self.n - 1

    @lru_cache(maxsize=None)
    def frame(self, b: ClusterDecomposition) -> JacobiFrame:
        return build_frame(self.mass, b, self.nu)

    @lru_cache(maxsize=None)
    def orthonormal_map(self, b: ClusterDecomposition) -> np.ndarray:
        """O_b with sqrt(w_b) x_b = O_b y; an orthogonal matrix."""
        f = self.frame(b)
        U = change_frame(self.reference, f)
        return np.sqrt(f.weights)[:, None] * U / np.sqrt(self.reference.weights)[None, :]

    def outer_rows(self, b: ClusterDecomposition) -> np.ndarray:
        return self.orthonormal_map(b)[: b.size - 1]

    def inner_rows(self, b: ClusterDecomposition) -> np.ndarray:
        return self.orthonormal_map(b)[b.size - 1 :]

    def group_rows(self, g1, g2) -> np.ndarray:
        """Unit row giving sqrt(mu_12) (R_1 - R_2) from y."""
        row = com_row(self.mass, g1) - com_row(self.mass, g2)
        return np.sqrt(self.mass.reduced_mass(g1, g2)) * (row @ self._pos_from_y)

    @lru_cache(maxsize=None)
    def link_rows(self, b: ClusterDecomposition) -> np.ndarray:
        """Stacked unit rows for z_{b1}, ..., z_{bk_b}, shape (k_b, N-1)."""
        return np.array(
            [
                self.group_rows(b.blocks[l.from_block], b.blocks[l.to_block])
                for l in intercluster_links(b)
            ]
        )

    @lru_cache(maxsize=None)
    def pair_rows(self) -> tuple[list[PairIndex], np.ndarray]:
        pairs = ClusterDecomposition.singletons(self.n).crossing_pairs()
        return pairs, np.array([self.group_rows([p.i], [p.j]) for p in pairs])

    # conversions
    def from_positions(self, r: np.ndarray) -> np.ndarray:
        x = self.reference.coords(r)
        return np.sqrt(self.reference.weights)[:, None] * x

    def to_positions(self, y: np.ndarray) -> np.ndarray:
        return np.einsum("nk,...kd->...nd", self._pos_from_y, y)

    def to_frame(self, y: np.ndarray, b: ClusterDecomposition) -> np.ndarray:
        f = self.frame(b)
        return apply_map(self.orthonormal_map(b), y) / np.sqrt(f.weights)[:, None]

    def from_frame(self, x: np.ndarray, b: ClusterDecomposition) -> np.ndarray:
        f = self.frame(b)
        return apply_map(self.orthonormal_map(b).T, np.sqrt(f.weights)[:, None] * x)


def rows_norm_sq(rows: np.ndarray, y: np.ndarray) -> np.ndarray:
    """|R y|^2 summed over rows and spatial components."""
    v = np.einsum("rk,...kd->...rd", rows, y)
    return np.sum(v * v, axis=(-2, -1))


def each_row_norm_sq(rows: np.ndarray, y: np.ndarray) -> np.ndarray:
    """|R_r y|^2 for each row r separately, shape (..., n_rows)."""
    v = np.einsum("rk,...kd->...rd", rows, y)
    return np.sum(v * v, axis=-1)
