import numpy as np
import pytest

from cgmkit.constraints import (LinearConstraint, VolumeConstraint,
                                barycenter_constraint, cffd_correct,
                                enforce_on_cloud, enforce_volume,
                                sample_cffd_dataset, volume_constraint_row,
                                volume_gradient)
from cgmkit.datasets import write_dataset
from cgmkit.errors import (DegenerateSurfaceError,
                           InfeasibleConstraintError)
from cgmkit.geometry import (FfdLattice, TriSurface, barycenter_of, ffd_map,
                             synth_shape, volume_of)
from cgmkit.rng import Rng


@pytest.fixture(scope="module")
def sphere():
    return synth_shape("icosphere", 2)


# --- barycenter constraint ---------------------------------------------------

def test_barycenter_rows():
    c = barycenter_constraint(2, (1.0, 2.0, 3.0))
    assert np.allclose(c.matrix[0], [0.5, 0, 0, 0.5, 0, 0])
    assert c.target[0] == 1.0


def test_barycenter_matrix_recovers_mean(sphere):
    c = barycenter_constraint(sphere.n_vertices, np.zeros(3))
    assert np.allclose(c.matrix @ sphere.vertices.reshape(-1),
                       barycenter_of(sphere.vertices))


def test_enforce_already_feasible_is_noop(sphere):
    target = barycenter_of(sphere.vertices)
    c = barycenter_constraint(sphere.n_vertices, target)
    corrected, delta = enforce_on_cloud(sphere.vertices, c)
    assert np.max(np.abs(delta)) < 1e-12


# --- volume rows --------------------------------------------------------------

def test_volume_row_matches_finite_differences(sphere):
    h = 1e-6
    for component, c in (("x", 0), ("y", 1), ("z", 2)):
        row, _ = volume_constraint_row(sphere, component)
        idx = np.linspace(0, sphere.n_vertices - 1, 12).astype(int)
        for i in np.unique(idx):
            vp = sphere.vertices.copy()
            vp[i, c] += h
            vm = sphere.vertices.copy()
            vm[i, c] -= h
            fd = (volume_of(sphere.with_vertices(vp))
                  - volume_of(sphere.with_vertices(vm))) / (2 * h)
            assert abs(fd - row[i]) <= 1e-7 * max(abs(fd), abs(row[i]), 1e-2)


def test_volume_gradient_full_fd(sphere):
    h = 1e-6
    grad = volume_gradient(sphere)
    rng = Rng(2)
    for _ in range(20):
        i = int(rng.integers(0, sphere.n_vertices))
        c = int(rng.integers(0, 3))
        vp = sphere.vertices.copy()
        vp[i, c] += h
        vm = sphere.vertices.copy()
        vm[i, c] -= h
        fd = (volume_of(sphere.with_vertices(vp))
              - volume_of(sphere.with_vertices(vm))) / (2 * h)
        assert abs(fd - grad[i, c]) <= 1e-7 * max(abs(fd), abs(grad[i, c]), 1e-2)


def test_volume_row_sums_to_zero(sphere):
    for component in "xyz":
        row, _ = volume_constraint_row(sphere, component)
        assert abs(row.sum()) <= 1e-12 * np.abs(row).sum()


def test_volume_row_reconstruction_identity():
    rng = Rng(8)
    for trial in range(5):
        base = synth_shape("icosphere", 2)
        surf = base.with_vertices(
            base.vertices * (1.0 + 0.1 * rng.normal((base.n_vertices, 3))))
        v = volume_of(surf)
        for component, c in (("x", 0), ("y", 1), ("z", 2)):
            row, offset = volume_constraint_row(surf, component)
            recon = row @ surf.vertices[:, c] + offset
            assert abs(recon - v) <= 1e-12 * max(abs(v), 1.0)


def test_degenerate_surface_rejected():
    flat = TriSurface(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]),
                      np.array([[0, 1, 2], [0, 2, 1]]))
    with pytest.raises(DegenerateSurfaceError):
        volume_constraint_row(flat, "x")


# --- cloud enforcement --------------------------------------------------------

def test_enforce_mean_zero_hand_case():
    # 1-d projection by hand: points (1, 3) with mean forced to 0 -> (-1, 1)
    cloud = np.array([[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    matrix = np.zeros((1, 6))
    matrix[0, 0] = matrix[0, 3] = 0.5
    c = LinearConstraint(matrix, np.zeros(1))
    corrected, delta = enforce_on_cloud(cloud, c)
    assert np.allclose(corrected[:, 0], [-1.0, 1.0], atol=1e-12)
    assert np.allclose(delta[:, 1:], 0.0)


def test_barycenter_enforcement_is_rigid_translation(sphere):
    target = np.array([0.3, -0.4, 0.7])
    c = barycenter_constraint(sphere.n_vertices, target)
    shift = target - barycenter_of(sphere.vertices)
    corrected, delta = enforce_on_cloud(sphere.vertices, c)
    assert np.max(np.abs(delta - shift)) < 1e-12
    assert np.max(np.abs(barycenter_of(corrected) - target)) < 1e-10


def test_projection_idempotent(sphere):
    c = barycenter_constraint(sphere.n_vertices, np.array([1.0, 2.0, 3.0]))
    once, _ = enforce_on_cloud(sphere.vertices, c)
    twice, delta2 = enforce_on_cloud(once, c)
    assert np.max(np.abs(twice - once)) <= 1e-12
    assert np.max(np.abs(delta2)) <= 1e-12


def test_min_norm_optimality_against_random_feasible(sphere):
    rng = Rng(14)
    c = barycenter_constraint(sphere.n_vertices, np.array([0.5, 0.0, -0.5]))
    _, delta = enforce_on_cloud(sphere.vertices, c)
    a = c.matrix
    null_proj = np.eye(a.shape[1]) - np.linalg.pinv(a) @ a
    base = delta.reshape(-1)
    for _ in range(100):
        noise = null_proj @ rng.normal(a.shape[1])
        assert np.linalg.norm(base + noise) >= np.linalg.norm(base) - 1e-9


# --- volume enforcement -------------------------------------------------------

def test_enforce_volume_noop_at_target(sphere):
    v0 = volume_of(sphere)
    out = enforce_volume(sphere, v0)
    assert np.max(np.abs(out.vertices - sphere.vertices)) <= 1e-12


def test_enforce_volume_first_pass(sphere):
    v0 = volume_of(sphere)
    out = enforce_volume(sphere, 1.1 * v0, split="first-pass")
    assert abs(volume_of(out) - 1.1 * v0) <= 1e-9 * 1.1 * v0
    # only x coordinates moved
    assert np.allclose(out.vertices[:, 1:], sphere.vertices[:, 1:])


def test_enforce_volume_equal_thirds(sphere):
    v0 = volume_of(sphere)
    target = 1.25 * v0
    work = sphere
    plan = VolumeConstraint(target, split="equal-thirds").pass_plan(v0)
    achieved = []
    vertices = sphere.vertices.copy()
    for component, pass_target in plan:
        work = enforce_volume(work, pass_target, order=(component,) + tuple(
            c for c in "xyz" if c != component), split="first-pass")
        achieved.append(volume_of(work))
    # each pass closes one third of the deficit
    thirds = [v0 + (target - v0) * (k + 1) / 3.0 for k in range(3)]
    assert np.allclose(achieved, thirds, rtol=1e-12)
    out = enforce_volume(sphere, target, split="equal-thirds")
    assert abs(volume_of(out) - target) <= 1e-9 * target


@pytest.mark.parametrize("order", [("x", "y", "z"), ("z", "x", "y"), ("y", "z", "x")])
def test_enforce_volume_any_order(sphere, order):
    v0 = volume_of(sphere)
    out = enforce_volume(sphere, 0.9 * v0, order=order, split="equal-thirds")
    assert abs(volume_of(out) - 0.9 * v0) <= 1e-9 * v0


# --- constrained FFD ----------------------------------------------------------

def box_lattice(surface, grid=(2, 2, 2), pad=0.05):
    lo = surface.vertices.min(axis=0) - pad
    hi = surface.vertices.max(axis=0) + pad
    return FfdLattice.from_box(grid, lo, hi)


def test_cffd_zero_when_already_satisfied(sphere):
    lattice = box_lattice(sphere)
    c = barycenter_constraint(sphere.n_vertices, barycenter_of(sphere.vertices))
    delta = cffd_correct(lattice, lattice.zero_displacement(), sphere, c)
    assert np.max(np.abs(delta)) < 1e-9


def test_cffd_uniform_influence_hand_case():
    # single point at the center of a (1,1,1) lattice: all 8 control points
    # share influence equally, so the min-norm correction is uniform and its
    # image through a_phi closes the barycenter deficit
    a = np.diag([2.0, 0.5, 1.0])
    lattice = FfdLattice((1, 1, 1), a, np.array([-1.0, -0.25, -0.5]))
    point = np.zeros((1, 3))
    faces = np.array([[0, 1, 2]])
    cloud3 = TriSurface(np.vstack([point, point + 1e3, point - 1e3]), faces)
    # constrain only the first point (subset) to move to (0.2, -0.1, 0.3)
    target = np.array([0.2, -0.1, 0.3])
    c = LinearConstraint(np.eye(3), target)
    delta = cffd_correct(lattice, lattice.zero_displacement(), cloud3, c,
                         subset=np.array([0]))
    assert np.allclose(delta - delta[0], 0.0, atol=1e-12)  # uniform
    assert np.allclose(a @ delta[0], target, atol=1e-9)
    deformed, _ = ffd_map(lattice, delta, point)
    assert np.allclose(deformed[0], target, atol=1e-9)


def test_cffd_meets_constraint_and_kkt(sphere):
    rng = Rng(4)
    lattice = box_lattice(sphere)
    target = barycenter_of(sphere.vertices)
    c = barycenter_constraint(sphere.n_vertices, target)
    for trial in range(5):
        dp = 0.05 * rng.derive(trial).normal((lattice.n_control, 3))
        delta = cffd_correct(lattice, dp, sphere, c)
        deformed, _ = ffd_map(lattice, dp + delta, sphere.vertices)
        assert np.max(np.abs(barycenter_of(deformed) - target)) <= 1e-9
        # KKT: correction in the row space of (A_c B)^T
        influence = lattice.influence(sphere.vertices)
        composite = np.einsum("qlc,lp,cd->qpd",
                              c.matrix.reshape(3, -1, 3), influence,
                              lattice.a_phi).reshape(3, -1)
        lam, *_ = np.linalg.lstsq(composite.T, delta.reshape(-1), rcond=None)
        assert np.linalg.norm(composite.T @ lam - delta.reshape(-1)) < 1e-9


def test_cffd_weighted_scaling(sphere):
    lattice = box_lattice(sphere)
    c = barycenter_constraint(sphere.n_vertices,
                              barycenter_of(sphere.vertices) + 0.1)
    weights = np.ones(lattice.n_control)
    heavy = 7
    weights[heavy] = 1e6
    dp = lattice.zero_displacement()
    delta = cffd_correct(lattice, dp, sphere, c, weights=weights)
    unit_max = np.max(np.linalg.norm(np.delete(delta, heavy, axis=0), axis=1))
    heavy_mag = np.linalg.norm(delta[heavy])
    assert heavy_mag <= 1e-6 * unit_max * 1e3


def test_cffd_weighted_kkt_row_space(sphere):
    rng = Rng(41)
    lattice = box_lattice(sphere)
    c = barycenter_constraint(sphere.n_vertices,
                              barycenter_of(sphere.vertices) + 0.08)
    weights = 0.5 + rng.uniform(lattice.n_control) * 3.0
    dp = 0.04 * rng.normal((lattice.n_control, 3))
    delta = cffd_correct(lattice, dp, sphere, c, weights=weights)
    influence = lattice.influence(sphere.vertices)
    composite = np.einsum("qlc,lp,cd->qpd", c.matrix.reshape(3, -1, 3),
                          influence, lattice.a_phi).reshape(3, -1)
    # correction must lie in the row space of diag(w)^-2 (A_c B)^T
    w_full = np.repeat(weights, 3)
    g = composite.T / (w_full ** 2)[:, None]
    lam, *_ = np.linalg.lstsq(g, delta.reshape(-1), rcond=None)
    assert np.linalg.norm(g @ lam - delta.reshape(-1)) < 1e-9


def test_cffd_pinned_points_exact_zero(sphere):
    lattice = box_lattice(sphere)
    weights = np.ones(lattice.n_control)
    local = lattice.control_points_local()
    pinned = local[:, 0] == 0.0  # cut plane i = 0
    weights[pinned] = 0.0
    c = barycenter_constraint(sphere.n_vertices,
                              barycenter_of(sphere.vertices) + 0.05)
    delta = cffd_correct(lattice, lattice.zero_displacement(), sphere, c,
                         weights=weights)
    assert np.all(delta[pinned] == 0.0)
    assert np.any(delta[~pinned] != 0.0)


def test_cffd_all_pinned_infeasible(sphere):
    lattice = box_lattice(sphere)
    c = barycenter_constraint(sphere.n_vertices, np.zeros(3))
    with pytest.raises(InfeasibleConstraintError):
        cffd_correct(lattice, lattice.zero_displacement(), sphere, c,
                     weights=np.zeros(lattice.n_control))


def test_cffd_volume(sphere):
    rng = Rng(6)
    lattice = box_lattice(sphere)
    v0 = volume_of(sphere)
    c = VolumeConstraint(v0)
    for trial in range(3):
        dp = 0.03 * rng.derive(trial).normal((lattice.n_control, 3))
        delta = cffd_correct(lattice, dp, sphere, c)
        deformed, _ = ffd_map(lattice, dp + delta, sphere.vertices)
        out = TriSurface(deformed, sphere.faces)
        assert abs(volume_of(out) - v0) <= 1e-9 * v0


# --- dataset sampling ---------------------------------------------------------

def test_dataset_deterministic_and_constrained(tmp_path, sphere):
    lattice = box_lattice(sphere)
    v0 = volume_of(sphere)
    c = VolumeConstraint(v0)
    samples1 = sample_cffd_dataset(lattice, sphere, c, 3, 0.03, Rng(77))
    samples2 = sample_cffd_dataset(lattice, sphere, c, 3, 0.03, Rng(77))
    for s1, s2 in zip(samples1, samples2):
        assert np.array_equal(s1.surface.vertices, s2.surface.vertices)
        assert abs(volume_of(s1.surface) - v0) <= 1e-9 * v0
    d1, d2 = tmp_path / "a", tmp_path / "b"
    write_dataset(d1, samples1, c)
    write_dataset(d2, samples2, c)
    for name in ("sample_00000.stl", "sample_00001.stl", "manifest.tsv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_dataset_sigma_zero_copies(sphere):
    lattice = box_lattice(sphere)
    c = barycenter_constraint(sphere.n_vertices, barycenter_of(sphere.vertices))
    samples = sample_cffd_dataset(lattice, sphere, c, 2, 0.0, Rng(1))
    for s in samples:
        assert np.max(np.abs(s.surface.vertices - sphere.vertices)) < 1e-12


def test_constraint_survives_stl_round_trip(tmp_path, sphere):
    from cgmkit.stl_io import stl_read, stl_write
    lattice = box_lattice(sphere)
    target = barycenter_of(sphere.vertices)
    c = barycenter_constraint(sphere.n_vertices, target)
    samples = sample_cffd_dataset(lattice, sphere, c, 2, 0.05, Rng(9))
    for i, s in enumerate(samples):
        path = tmp_path / f"s{i}.stl"
        stl_write(s.surface, path)
        back = stl_read(path)
        assert np.max(np.abs(barycenter_of(back.vertices) - target)) <= 1e-9
