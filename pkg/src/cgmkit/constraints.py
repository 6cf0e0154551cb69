"""Linear and multilinear geometric constraints over point clouds and
deformation lattices, enforced exactly by closed-form minimum-norm least
squares.

Clouds are vectorized row-wise: vec(cloud) = (x1, y1, z1, x2, y2, z2, ...),
matching a C-order reshape of an (M, 3) array. The enclosed volume of a
closed triangulation is trilinear: linear-homogeneous in each coordinate
component with the other two fixed, so volume is enforced exactly with one
affine solve per component pass.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateSurfaceError, DimensionError,
                     InfeasibleConstraintError)
from .geometry import (FfdLattice, TriSurface, barycenter_of,
                       check_displacement, ffd_map, volume_of)
from .linalg import RANK_TOL, lstsq_min_norm
from .rng import Rng

_COMPONENTS = {"x": 0, "y": 1, "z": 2}


@dataclass
class LinearConstraint:
    """Rows of A_c acting on a vectorized cloud (or displacement field),
    with target vector c."""

    matrix: np.ndarray
    target: np.ndarray
    space: str = "cloud"
    components: tuple = ("x", "y", "z")
    kind: str = "linear"

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        self.target = np.asarray(self.target, dtype=np.float64).reshape(-1)
        if self.matrix.shape[0] != self.target.shape[0]:
            raise DimensionError("constraint row count != target length")
        if self.space not in ("cloud", "displacement"):
            raise DimensionError(f"unknown constraint space {self.space!r}")
        s = np.linalg.svd(self.matrix, compute_uv=False)
        if s.size and s[-1] <= RANK_TOL * s[0]:
            raise DimensionError("constraint matrix is rank deficient")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def residual(self, cloud) -> np.ndarray:
        return self.matrix @ np.reshape(cloud, -1) - self.target


@dataclass
class VolumeConstraint:
    """Target enclosed volume, enforced component after component."""

    target: float
    order: tuple = ("x", "y", "z")
    split: str = "first-pass"
    kind: str = field(default="volume", init=False)

    def __post_init__(self):
        self.target = float(self.target)
        self.order = tuple(self.order)
        if sorted(self.order) != ["x", "y", "z"]:
            raise DimensionError(f"order must permute (x, y, z), got {self.order}")
        if self.split not in ("first-pass", "equal-thirds"):
            raise DimensionError(f"unknown split mode {self.split!r}")

    def pass_plan(self, current: float):
        """(component, target volume after the pass) for each pass."""
        if self.split == "first-pass":
            return [(self.order[0], self.target)]
        deficit = self.target - current
        return [(comp, current + deficit * (k + 1) / 3.0)
                for k, comp in enumerate(self.order)]


def barycenter_constraint(n_points: int, target) -> LinearConstraint:
    """Three rows of weight 1/M, one per coordinate component."""
    if n_points < 1:
        raise DimensionError("need at least one point")
    target = np.asarray(target, dtype=np.float64).reshape(3)
    matrix = np.zeros((3, 3 * n_points))
    for c in range(3):
        matrix[c, c::3] = 1.0 / n_points
    return LinearConstraint(matrix, target, kind="barycenter")


def volume_gradient(surface: TriSurface) -> np.ndarray:
    """Analytic d(volume)/d(vertex coordinates), shape (M, 3).

    For a face (a, b, c): dV/dv_a = (v_b x v_c) / 6 and cyclic."""
    tri = surface.corners()
    grad = np.zeros_like(surface.vertices)
    np.add.at(grad, surface.faces[:, 0], np.cross(tri[:, 1], tri[:, 2]) / 6.0)
    np.add.at(grad, surface.faces[:, 1], np.cross(tri[:, 2], tri[:, 0]) / 6.0)
    np.add.at(grad, surface.faces[:, 2], np.cross(tri[:, 0], tri[:, 1]) / 6.0)
    return grad


def volume_constraint_row(surface: TriSurface, component: str):
    """(row, offset) with volume == row . (component coordinates) + offset.

    The offset vanishes in exact arithmetic (volume is linear-homogeneous
    per component); it is computed numerically so the identity holds to
    roundoff."""
    c = _COMPONENTS[component]
    row = volume_gradient(surface)[:, c]
    if not np.any(row):
        raise DegenerateSurfaceError("all-zero volume row (degenerate surface)")
    offset = volume_of(surface) - row @ surface.vertices[:, c]
    return row, offset


def enforce_on_cloud(cloud, constraint: LinearConstraint):
    """Minimum-norm correction onto the affine feasible set A_c x = c.

    Returns (corrected cloud, correction) both shaped (M, 3)."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if constraint.space != "cloud":
        raise DimensionError("constraint does not target cloud coordinates")
    if constraint.dim != cloud.size:
        raise DimensionError(
            f"constraint dim {constraint.dim} != cloud size {cloud.size}")
    delta = lstsq_min_norm(constraint.matrix, -constraint.residual(cloud))
    delta = delta.reshape(-1, 3)
    return cloud + delta, delta


def enforce_volume(surface: TriSurface, target: float,
                   order=("x", "y", "z"), split="first-pass") -> TriSurface:
    """Deform vertex coordinates so the enclosed volume equals target.

    Each pass freezes the other two components and solves the exactly
    affine single-row constraint by minimum-norm projection in the pass
    component."""
    constraint = VolumeConstraint(target, order=order, split=split)
    current = volume_of(surface)
    vertices = surface.vertices.copy()
    work = surface
    for component, pass_target in constraint.pass_plan(current):
        c = _COMPONENTS[component]
        row, _ = volume_constraint_row(work, component)
        deficit = pass_target - volume_of(work)
        vertices[:, c] += row * (deficit / (row @ row))
        work = TriSurface(vertices, surface.faces)
    return work


def constraint_residual(constraint, surface: TriSurface) -> float:
    """Scalar residual used in manifests and reports: max absolute row
    residual for linear constraints, relative volume error for volume."""
    if constraint.kind == "volume":
        return abs(volume_of(surface) - constraint.target) / max(
            abs(constraint.target), 1e-300)
    return float(np.max(np.abs(constraint.residual(surface.vertices))))


def achieved_value(constraint, surface: TriSurface) -> np.ndarray:
    if constraint.kind == "volume":
        return np.array([volume_of(surface)])
    if constraint.kind == "barycenter":
        return barycenter_of(surface.vertices)
    return constraint.matrix @ surface.vertices.reshape(-1)


def target_value(constraint) -> np.ndarray:
    if constraint.kind == "volume":
        return np.array([constraint.target])
    return np.asarray(constraint.target, dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------------------
# Constrained FFD

def _pinned_mask(lattice: FfdLattice, weights):
    """Weights of 0 or +inf mark pinned control points (excluded from the
    solve, exactly zero correction). Remaining weights multiply the
    correction norm."""
    if weights is None:
        return np.zeros(lattice.n_control, dtype=bool), None
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape[0] != lattice.n_control:
        raise DimensionError(
            f"weight length {weights.shape[0]} != control count {lattice.n_control}")
    if np.any(weights < 0) or np.any(np.isnan(weights)):
        raise DimensionError("weights must be nonnegative")
    pinned = (weights == 0.0) | np.isinf(weights)
    return pinned, weights


def cffd_correct(lattice: FfdLattice, displacement, surface: TriSurface,
                 constraint, weights=None, subset=None) -> np.ndarray:
    """Closed-form correction delta_d of the control-point displacements so
    the constraint holds exactly on the deformed cloud.

    The correction minimizes ||diag(weights) vec(delta_d)|| subject to the
    constraint composed with the Bernstein influence of the lattice.
    `subset` optionally restricts the constrained points (default: the full
    cloud)."""
    dp = check_displacement(lattice, displacement)
    points = surface.vertices
    idx = np.arange(len(points)) if subset is None else np.asarray(subset, dtype=np.int64)
    pinned, weights = _pinned_mask(lattice, weights)
    free = ~pinned
    if not free.any():
        raise InfeasibleConstraintError("all control points pinned")

    influence = lattice.influence(points[idx])[:, free]  # (N, F)
    n_free = int(free.sum())
    delta = np.zeros((lattice.n_control, 3))

    if constraint.kind == "volume":
        if not np.allclose(lattice.a_phi, np.diag(np.diag(lattice.a_phi))):
            raise DimensionError(
                "component-wise volume enforcement needs an axis-aligned lattice")
        if subset is not None and len(idx) != len(points):
            raise DimensionError("volume constraint requires the full cloud")
        deformed, _ = ffd_map(lattice, dp, points)
        work = TriSurface(deformed, surface.faces)
        for component, pass_target in constraint.pass_plan(volume_of(work)):
            c = _COMPONENTS[component]
            row, _ = volume_constraint_row(work, component)
            deficit = pass_target - volume_of(work)
            # deformed component coords are affine in the component of the
            # free displacements: x_c += influence @ (a_cc * delta_c)
            a = (row @ influence * lattice.a_phi[c, c])[None, :]
            w = None if weights is None else weights[free]
            delta_c = lstsq_min_norm(a, np.array([deficit]), weights=w)
            delta[free, c] += delta_c
            deformed, _ = ffd_map(lattice, dp + delta, points)
            work = TriSurface(deformed, surface.faces)
        return delta

    if constraint.space != "cloud":
        raise DimensionError("cffd constraints act on deformed cloud coordinates")
    if constraint.dim != 3 * len(idx):
        raise DimensionError(
            f"constraint dim {constraint.dim} != 3 * {len(idx)} points")
    deformed, _ = ffd_map(lattice, dp, points)
    rhs = -constraint.residual(deformed[idx])
    # composite matrix A_c B over the free control-point displacements:
    # point displacement l = sum_p w_lp a_phi(delta_p)
    n_c = constraint.matrix.shape[0]
    a_rows = constraint.matrix.reshape(n_c, len(idx), 3)
    # (n_c, N, 3) x (N, F) x (3, 3) -> (n_c, F, 3)
    composite = np.einsum("qlc,lp,cd->qpd", a_rows, influence, lattice.a_phi)
    composite = composite.reshape(n_c, 3 * n_free)
    w = None if weights is None else np.repeat(weights[free], 3)
    delta_free = lstsq_min_norm(composite, rhs, weights=w)
    delta[free] = delta_free.reshape(n_free, 3)
    return delta


@dataclass
class CffdSample:
    """One constrained draw: the deformed surface plus its provenance."""

    surface: TriSurface
    displacement: np.ndarray
    index: int
    seed_tag: str
    achieved: np.ndarray
    displacement_norm: float


def parallel_map(fn, items, threads=1):
    """Order-preserving map, optionally over a thread pool. Work items must
    be independent; results are merged by index so the outcome does not
    depend on scheduling."""
    if threads <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def sample_cffd_dataset(lattice: FfdLattice, surface: TriSurface, constraint,
                        n: int, sigma_d: float, rng: Rng, weights=None,
                        threads=1):
    """n constrained free-form deformations of the base surface.

    Free-control-point displacements are drawn N(0, sigma_d^2) from a
    per-sample derived stream, then corrected with cffd_correct; the result
    is deterministic given the seed and independent of sampling order."""
    if n < 1:
        raise DimensionError("need n >= 1 samples")
    if sigma_d < 0:
        raise DimensionError("sigma_d must be nonnegative")
    pinned, _ = _pinned_mask(lattice, weights)

    def one(i):
        stream = rng.derive("cffd-sample", i)
        dp = sigma_d * stream.normal((lattice.n_control, 3))
        dp[pinned] = 0.0
        delta = cffd_correct(lattice, dp, surface, constraint, weights=weights)
        total = dp + delta
        deformed, _ = ffd_map(lattice, total, surface.vertices)
        out = TriSurface(deformed, surface.faces)
        return CffdSample(
            surface=out,
            displacement=total,
            index=i,
            seed_tag=f"{rng.seed}:cffd-sample:{i}",
            achieved=achieved_value(constraint, out),
            displacement_norm=float(np.linalg.norm(total)),
        )

    return parallel_map(one, range(n), threads)
