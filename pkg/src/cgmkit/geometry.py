"""Triangulated surfaces, Bernstein deformation lattices and discrete
geometric quantities (volume, barycenter, surface area, inertia)."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimensionError, EmptyInputError, LatticeError,
                     OrientationError)


@dataclass
class TriSurface:
    """Vertices (M, 3) and CCW-oriented faces (T, 3). Outward orientation
    gives positive enclosed volume."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise DimensionError("face index out of range")
        if self.faces.size and (self.faces.min() < 0):
            raise DimensionError("negative face index")
        degenerate = ((self.faces[:, 0] == self.faces[:, 1])
                      | (self.faces[:, 1] == self.faces[:, 2])
                      | (self.faces[:, 0] == self.faces[:, 2]))
        if np.any(degenerate):
            raise DimensionError("face with repeated vertex indices")

    @property
    def n_vertices(self):
        return len(self.vertices)

    def with_vertices(self, vertices) -> "TriSurface":
        return TriSurface(np.asarray(vertices, dtype=np.float64), self.faces)

    def corners(self):
        """Per-face vertex triples, shape (T, 3, 3)."""
        return self.vertices[self.faces]


def is_closed(surface: TriSurface) -> bool:
    """True when every undirected edge is shared by exactly two faces with
    opposite direction."""
    edges = {}
    for face in surface.faces:
        for a, b in ((face[0], face[1]), (face[1], face[2]), (face[2], face[0])):
            edges[(int(a), int(b))] = edges.get((int(a), int(b)), 0) + 1
    for (a, b), count in edges.items():
        if count != 1 or edges.get((b, a), 0) != 1:
            return False
    return True


def _require_closed(surface: TriSurface):
    if not is_closed(surface):
        raise OrientationError("surface is open or inconsistently oriented")


def barycenter_of(cloud) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        raise EmptyInputError("barycenter of an empty cloud")
    return cloud.mean(axis=0)


def volume_of(surface: TriSurface, closed=True) -> float:
    """Signed enclosed volume, (1/6) sum of v_a . (v_b x v_c) over faces."""
    if closed:
        _require_closed(surface)
    tri = surface.corners()
    return float(np.einsum("ij,ij->", tri[:, 0],
                           np.cross(tri[:, 1], tri[:, 2])) / 6.0)


def surface_area_of(surface: TriSurface) -> float:
    tri = surface.corners()
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return float(0.5 * np.linalg.norm(cross, axis=1).sum())


def inertia_tensor_of(cloud, center) -> np.ndarray:
    """Discrete second moments with unit mass per point, relative to center.

    Diagonal entries are sums of squared distances from the axes, the
    off-diagonal entries are the plain coordinate products sum(x*y) etc.
    """
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        raise EmptyInputError("inertia of an empty cloud")
    r = cloud - np.asarray(center, dtype=np.float64).reshape(3)
    x, y, z = r[:, 0], r[:, 1], r[:, 2]
    return np.array([
        [np.sum(y * y + z * z), np.sum(x * y), np.sum(x * z)],
        [np.sum(x * y), np.sum(x * x + z * z), np.sum(y * z)],
        [np.sum(x * z), np.sum(y * z), np.sum(x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# Bernstein basis and deformation lattices

def bernstein_eval(degree: int, index: int, t):
    """b_s^k(t) = C(k,s) t^s (1-t)^(k-s) on [0, 1]."""
    if not 0 <= index <= degree:
        raise IndexError(f"basis index {index} outside 0..{degree}")
    t = np.asarray(t, dtype=np.float64)
    coeff = math.comb(degree, index)
    value = coeff * t ** index * (1.0 - t) ** (degree - index)
    return float(value) if value.ndim == 0 else value


def bernstein_basis(degree: int, t) -> np.ndarray:
    """All basis values at once: shape t.shape + (degree + 1,)."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty(t.shape + (degree + 1,))
    for s in range(degree + 1):
        out[..., s] = math.comb(degree, s) * t ** s * (1.0 - t) ** (degree - s)
    return out


@dataclass
class FfdLattice:
    """Control-point grid on the unit cube, placed in space by the affine
    map u -> a_phi @ u + b_phi. Grid sizes (m, n, o) give control points at
    (i/m, j/n, k/o) for i in 0..m etc.; Bernstein degrees equal the grid
    sizes."""

    grid: tuple
    a_phi: np.ndarray = field(default_factory=lambda: np.eye(3))
    b_phi: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        if len(self.grid) != 3 or any(g < 1 for g in self.grid):
            raise LatticeError(f"grid sizes must be three counts >= 1, got {self.grid}")
        self.a_phi = np.asarray(self.a_phi, dtype=np.float64).reshape(3, 3)
        self.b_phi = np.asarray(self.b_phi, dtype=np.float64).reshape(3)
        det = np.linalg.det(self.a_phi)
        if not np.isfinite(det) or abs(det) < 1e-14:
            raise LatticeError("placement map a_phi is singular")
        self._a_inv = np.linalg.inv(self.a_phi)

    @classmethod
    def from_box(cls, grid, lower, upper) -> "FfdLattice":
        """Axis-aligned box from corner `lower` to corner `upper`."""
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        return cls(grid, np.diag(upper - lower), lower)

    @property
    def n_control(self) -> int:
        m, n, o = self.grid
        return (m + 1) * (n + 1) * (o + 1)

    def zero_displacement(self) -> np.ndarray:
        return np.zeros((self.n_control, 3))

    def control_points_local(self) -> np.ndarray:
        """(n_control, 3) lattice coordinates, index (i*(n+1)+j)*(o+1)+k."""
        m, n, o = self.grid
        i, j, k = np.meshgrid(np.arange(m + 1), np.arange(n + 1),
                              np.arange(o + 1), indexing="ij")
        pts = np.stack([i / m, j / n, k / o], axis=-1)
        return pts.reshape(-1, 3)

    def control_points_world(self) -> np.ndarray:
        return self.control_points_local() @ self.a_phi.T + self.b_phi

    def to_local(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return (points - self.b_phi) @ self._a_inv.T

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the closed deformation box."""
        local = self.to_local(points)
        return np.all((local >= 0.0) & (local <= 1.0), axis=1)

    def influence(self, points) -> np.ndarray:
        """(N, n_control) tensor-product Bernstein weights at each point's
        lattice coordinates; zero rows for points outside the box."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        local = self.to_local(points)
        inside = np.all((local >= 0.0) & (local <= 1.0), axis=1)
        m, n, o = self.grid
        weights = np.zeros((len(points), self.n_control))
        if inside.any():
            loc = local[inside]
            bu = bernstein_basis(m, loc[:, 0])
            bv = bernstein_basis(n, loc[:, 1])
            bw = bernstein_basis(o, loc[:, 2])
            w = np.einsum("pi,pj,pk->pijk", bu, bv, bw)
            weights[inside] = w.reshape(inside.sum(), -1)
        return weights


def check_displacement(lattice: FfdLattice, displacement) -> np.ndarray:
    dp = np.asarray(displacement, dtype=np.float64)
    if dp.shape != (lattice.n_control, 3):
        raise DimensionError(
            f"displacement shape {dp.shape} != ({lattice.n_control}, 3)")
    if not np.all(np.isfinite(dp)):
        raise DimensionError("displacement has non-finite entries")
    return dp


def ffd_map(lattice: FfdLattice, displacement, points):
    """Deform points through the lattice.

    Each in-box point Q moves to Q + sum_ijk B_ijk(phi^-1(Q)) a_phi(dP_ijk);
    out-of-box points pass through unchanged. Returns (deformed, inside_mask).
    """
    dp = check_displacement(lattice, displacement)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = lattice.contains(points)
    out = points.copy()
    if inside.any():
        weights = lattice.influence(points[inside])
        out[inside] += weights @ (dp @ lattice.a_phi.T)
    return out, inside


# ---------------------------------------------------------------------------
# Synthetic shapes

_ICO_T = (1.0 + math.sqrt(5.0)) / 2.0

_ICO_VERTICES = np.array([
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
], dtype=np.float64)

_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def reindex_first_use(surface: TriSurface) -> TriSurface:
    """Renumber vertices in order of first appearance in the face list.

    Gives a canonical indexing so that the per-facet STL representation
    round-trips to the exact same TriSurface. Unreferenced vertices are
    dropped."""
    order = []
    seen = {}
    for idx in surface.faces.reshape(-1):
        idx = int(idx)
        if idx not in seen:
            seen[idx] = len(order)
            order.append(idx)
    remap = np.empty(surface.n_vertices, dtype=np.int64)
    remap[order] = np.arange(len(order))
    return TriSurface(surface.vertices[order], remap[surface.faces])


def synth_shape(kind: str, subdivision: int, radii=(1.0, 1.0, 1.0)) -> TriSurface:
    """Closed, outward-oriented stand-in asset.

    kind "icosphere" or "ellipsoid"; subdivision s <= 6 gives 10*4^s + 2
    vertices. The ellipsoid is the unit icosphere scaled by radii."""
    if kind not in ("icosphere", "ellipsoid"):
        raise DimensionError(f"unknown shape kind {kind!r}")
    if not 0 <= subdivision <= 6:
        raise DimensionError("subdivision must lie in 0..6")
    radii = np.asarray(radii, dtype=np.float64).reshape(3)
    vertices = list(_ICO_VERTICES / np.linalg.norm(_ICO_VERTICES[0]))
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(subdivision):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = vertices[a] + vertices[b]
                vertices.append(p / np.linalg.norm(p))
                midpoint[key] = len(vertices) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    surface = TriSurface(np.asarray(vertices) * radii, np.asarray(faces))
    return reindex_first_use(surface)
