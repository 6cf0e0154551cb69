"""Orthogonal mode bases, RBF interpolation and mesh morphing, Gaussian
process regression, POD-with-interpolation surrogates and the active
subspaces method with bootstrap bands."""

from dataclasses import dataclass

import numpy as np

from .errors import (ConditioningError, ConfigError, DegenerateSitesError,
                     DimensionError)
from .linalg import eigh_symmetric, fix_eigvec_signs
from .nn import AdamW, mlp_stack
from .rng import Rng


@dataclass
class PcaBasis:
    """Mean-centered principal modes, columns ordered by descending
    singular value."""

    modes: np.ndarray          # (D, r)
    mean: np.ndarray           # (D,)
    singular_values: np.ndarray
    tolerance: float
    reconstruction_error: float

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]

    def project(self, x) -> np.ndarray:
        return (np.atleast_2d(x) - self.mean) @ self.modes

    def reconstruct(self, coeffs) -> np.ndarray:
        return np.atleast_2d(coeffs) @ self.modes.T + self.mean


def pca_fit(snapshots, tolerance=None, n_modes=None) -> PcaBasis:
    """Smallest mode count meeting the Frobenius reconstruction bound
    ||(I - U U^T)(X - mean)||_F <= tolerance, or a fixed n_modes.

    Always returns at least one mode."""
    x = np.asarray(snapshots, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigError("need an (n >= 2, D) snapshot matrix")
    if n_modes is None and (tolerance is None or tolerance <= 0):
        raise ConfigError("give a positive tolerance or a fixed mode count")
    mean = x.mean(axis=0)
    centered = x - mean
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    tail = np.sqrt(np.maximum(np.cumsum(s[::-1] ** 2)[::-1], 0.0))
    tail = np.append(tail, 0.0)  # tail[r] = error with r modes
    if n_modes is not None:
        r = int(n_modes)
        if r < 1 or r > s.size:
            raise ConfigError(f"n_modes must lie in 1..{s.size}")
    else:
        meets = np.nonzero(tail <= tolerance)[0]
        r = max(1, int(meets[0])) if meets.size else s.size
    modes = fix_eigvec_signs(vt[:r].T)
    return PcaBasis(modes=modes, mean=mean, singular_values=s,
                    tolerance=float(tolerance) if tolerance else 0.0,
                    reconstruction_error=float(tail[r]))


# ---------------------------------------------------------------------------
# Radial basis function interpolation

def _kernel(name, r, shape):
    if name == "linear":
        return r
    if name == "thin_plate":
        out = np.zeros_like(r)
        mask = r > 0
        out[mask] = r[mask] ** 2 * np.log(r[mask])
        return out
    if name == "gaussian":
        return np.exp(-((r / shape) ** 2))
    raise ConfigError(f"unknown RBF kernel {name!r}")


@dataclass
class RbfInterpolant:
    """s(x) = q(x) + sum_i beta_i xi(||x - x_i||) with a degree-1 polynomial
    tail q and side conditions sum_i beta_i q(x_i) = 0."""

    kernel: str
    shape: float
    points: np.ndarray   # (N, d)
    beta: np.ndarray     # (N, out)
    poly: np.ndarray     # (d + 1, out), constant row first

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        r = np.linalg.norm(x[:, None, :] - self.points[None, :, :], axis=2)
        phi = _kernel(self.kernel, r, self.shape)
        ones = np.ones((len(x), 1))
        return phi @ self.beta + np.hstack([ones, x]) @ self.poly


def rbf_fit(x, y, kernel="linear", shape=None) -> RbfInterpolant:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n, d = x.shape
    if n < d + 1:
        raise DegenerateSitesError(f"need at least d + 1 = {d + 1} sites, got {n}")
    if shape is None:
        dists = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
        positive = dists[dists > 0]
        shape = float(np.median(positive)) if positive.size else 1.0
    r = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    phi = _kernel(kernel, r, shape)
    p = np.hstack([np.ones((n, 1)), x])
    system = np.block([[phi, p], [p.T, np.zeros((d + 1, d + 1))]])
    rhs = np.vstack([y, np.zeros((d + 1, y.shape[1]))])
    try:
        sol = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as err:
        raise DegenerateSitesError(f"singular interpolation system: {err}") from None
    if not np.all(np.isfinite(sol)):
        raise DegenerateSitesError("interpolation system produced non-finite weights")
    model = RbfInterpolant(kernel=kernel, shape=float(shape), points=x,
                           beta=sol[:n], poly=sol[n:])
    side = p.T @ model.beta
    if np.max(np.abs(side)) > 1e-9 * max(1.0, np.abs(model.beta).max()):
        raise DegenerateSitesError("side conditions violated; sites degenerate")
    return model


def morph_mesh(reference_cloud, deformed_cloud, fixed_points, mesh_vertices,
               kernel="linear") -> np.ndarray:
    """Deform mesh vertices through an RBF map fitted from the reference
    cloud (plus fixed points) to the deformed cloud (plus the same fixed
    points, which therefore map to themselves)."""
    reference_cloud = np.atleast_2d(np.asarray(reference_cloud, dtype=np.float64))
    deformed_cloud = np.atleast_2d(np.asarray(deformed_cloud, dtype=np.float64))
    if reference_cloud.shape != deformed_cloud.shape:
        raise DimensionError("reference and deformed clouds differ in shape")
    fixed_points = np.asarray(fixed_points, dtype=np.float64).reshape(-1, 3)
    sources = np.vstack([reference_cloud, fixed_points])
    targets = np.vstack([deformed_cloud, fixed_points])
    interp = rbf_fit(sources, targets, kernel=kernel)
    return interp(np.atleast_2d(mesh_vertices))


# ---------------------------------------------------------------------------
# Gaussian process regression (squared-exponential kernel)

@dataclass
class GprModel:
    x: np.ndarray
    y_mean: float
    alpha: np.ndarray
    length_scale: float
    signal_variance: float
    nugget: float


def _se_kernel(a, b, length_scale, signal_variance):
    r2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    return signal_variance * np.exp(-0.5 * r2 / length_scale ** 2)


def _chol_with_escalation(k):
    # the 1e-12 floor keeps training-site interpolation below 1e-6 even for
    # crowded one-dimensional site sets
    nugget = 1e-12
    scale = float(np.mean(np.diag(k))) or 1.0
    while nugget <= 1e-4:
        try:
            chol = np.linalg.cholesky(k + nugget * scale * np.eye(len(k)))
            return chol, nugget * scale
        except np.linalg.LinAlgError:
            nugget *= 10.0
    raise ConditioningError("kernel matrix not positive definite at nugget 1e-4")


def gpr_fit(x, y, length_scale=None, signal_variance=None) -> GprModel:
    """Zero-mean GP on centered targets. The length scale defaults to the
    median pairwise distance, refined on a 5-point log grid against
    held-out error when enough data is available."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(x) != y.size or len(x) < 1:
        raise DimensionError("need matching, nonempty inputs and targets")
    y_mean = float(y.mean())
    resid = y - y_mean
    if signal_variance is None:
        signal_variance = float(resid.var()) or 1.0
    if length_scale is None:
        dists = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
        positive = dists[dists > 0]
        base = float(np.median(positive)) if positive.size else 1.0
        candidates = base * np.logspace(-1, 1, 5)
        length_scale = base
        if len(x) >= 8:
            hold = np.arange(len(x)) % 5 == 0
            best = np.inf
            for cand in candidates:
                sub = _fit_at(x[~hold], resid[~hold], cand, signal_variance)
                pred = _predict_resid(sub, x[hold])
                err = float(np.mean((pred - resid[hold]) ** 2))
                if err < best:
                    best, length_scale = err, float(cand)
    model = _fit_at(x, resid, float(length_scale), float(signal_variance))
    model.y_mean = y_mean
    return model


def _fit_at(x, resid, length_scale, signal_variance):
    k = _se_kernel(x, x, length_scale, signal_variance)
    chol, nugget = _chol_with_escalation(k)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, resid))
    return GprModel(x=x, y_mean=0.0, alpha=alpha, length_scale=length_scale,
                    signal_variance=signal_variance, nugget=nugget)


def _predict_resid(model, xq):
    k = _se_kernel(np.atleast_2d(xq), model.x, model.length_scale,
                   model.signal_variance)
    return k @ model.alpha


def gpr_predict(model: GprModel, xq) -> np.ndarray:
    return _predict_resid(model, xq) + model.y_mean


# ---------------------------------------------------------------------------
# POD with interpolation

@dataclass
class PodiModel:
    basis: PcaBasis
    regressor_kind: str
    regressors: object

    def coefficients(self, inputs) -> np.ndarray:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if self.regressor_kind == "rbf":
            return self.regressors(inputs)
        if self.regressor_kind == "gpr":
            return np.column_stack([gpr_predict(m, inputs) for m in self.regressors])
        return self.regressors.predict(inputs)


class _NnRegressor:
    """Two relu hidden layers, no norm or dropout, AdamW full-batch."""

    def __init__(self, width, epochs, lr, rng: Rng):
        self.width = width
        self.epochs = epochs
        self.lr = lr
        self.rng = rng

    def fit(self, x, y):
        self.x_mean, self.x_std = x.mean(0), x.std(0) + 1e-12
        self.y_mean, self.y_std = y.mean(0), y.std(0) + 1e-12
        xn = (x - self.x_mean) / self.x_std
        yn = (y - self.y_mean) / self.y_std
        self.net = mlp_stack(x.shape[1], y.shape[1], self.width, 2,
                             self.rng.derive("init"), dropout=0.0,
                             hidden_norm=False)
        opt = AdamW(self.net.parameters(), lr=self.lr)
        for epoch in range(self.epochs):
            out, cache = self.net.forward(xn)
            grads, _ = self.net.backward(cache, (out - yn) / len(xn))
            opt.step(grads)
            self.net.note_update()
        self.net.eval()
        return self

    def predict(self, x):
        xn = (np.atleast_2d(x) - self.x_mean) / self.x_std
        out, _ = self.net.forward(xn)
        return out * self.y_std + self.y_mean


def podi_fit(inputs, snapshots, n_pod_modes, regressor="rbf", rng: Rng = None,
             nn_width=64, nn_epochs=1000, nn_lr=1e-3) -> PodiModel:
    """POD basis over the snapshots plus a parameter-to-coefficient
    regressor (rbf interpolation, per-coefficient gpr, or a feed-forward
    network)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    snapshots = np.atleast_2d(np.asarray(snapshots, dtype=np.float64))
    if len(inputs) != len(snapshots):
        raise DimensionError("inputs and snapshots disagree in sample count")
    if len(inputs) < n_pod_modes:
        raise ConfigError("need at least as many samples as POD modes")
    basis = pca_fit(snapshots, n_modes=n_pod_modes)
    coeffs = basis.project(snapshots)
    if regressor == "rbf":
        fitted = rbf_fit(inputs, coeffs)
    elif regressor == "gpr":
        fitted = [gpr_fit(inputs, coeffs[:, j]) for j in range(coeffs.shape[1])]
    elif regressor == "nn":
        fitted = _NnRegressor(nn_width, nn_epochs, nn_lr,
                              rng if rng is not None else Rng(0)).fit(inputs, coeffs)
    else:
        raise ConfigError(f"unknown regressor {regressor!r}")
    return PodiModel(basis=basis, regressor_kind=regressor, regressors=fitted)


def podi_predict(model: PodiModel, inputs) -> np.ndarray:
    return model.basis.reconstruct(model.coefficients(inputs))


# ---------------------------------------------------------------------------
# Active subspaces

@dataclass
class AsSubspace:
    eigenvalues: np.ndarray
    active: np.ndarray       # (R, r_as)
    inactive: np.ndarray     # (R, R - r_as)
    band_min: np.ndarray
    band_max: np.ndarray
    band_mean: np.ndarray


def as_fit(samples, gradients, n_active, n_bootstrap=100,
           rng: Rng = None) -> AsSubspace:
    """Eigendecomposition of the Monte Carlo uncentered gradient covariance
    (1/n) sum grad grad^T, plus min/max/mean eigenvalue bands over bootstrap
    resamples of the gradient rows."""
    gradients = np.atleast_2d(np.asarray(gradients, dtype=np.float64))
    n, dim = gradients.shape
    if not 1 <= n_active <= dim:
        raise ConfigError(f"n_active must lie in 1..{dim}")
    cov = gradients.T @ gradients / n
    evals, evecs = eigh_symmetric(cov)
    evals = np.maximum(evals, 0.0)
    if rng is None:
        rng = Rng(0)
    boots = np.empty((max(n_bootstrap, 1), dim))
    if n_bootstrap >= 1:
        for b in range(n_bootstrap):
            idx = rng.derive("bootstrap", b).integers(0, n, n)
            g = gradients[idx]
            bw, _ = eigh_symmetric(g.T @ g / n)
            boots[b] = np.maximum(bw, 0.0)
    else:
        boots[0] = evals
    return AsSubspace(eigenvalues=evals,
                      active=evecs[:, :n_active],
                      inactive=evecs[:, n_active:],
                      band_min=boots.min(axis=0),
                      band_max=boots.max(axis=0),
                      band_mean=boots.mean(axis=0))


@dataclass
class AsResponseSurface:
    subspace: AsSubspace
    gpr: list

    def predict(self, mu) -> np.ndarray:
        active = np.atleast_2d(mu) @ self.subspace.active
        return gpr_predict(self.gpr, active)


def as_response_surface(subspace: AsSubspace, samples, values,
                        length_scale=None) -> AsResponseSurface:
    """GPR surrogate on the active variables W1^T mu."""
    active = np.atleast_2d(samples) @ subspace.active
    model = gpr_fit(active, np.asarray(values, dtype=np.float64),
                    length_scale=length_scale)
    return AsResponseSurface(subspace=subspace, gpr=model)


def save_matrix(path, matrix):
    """Plain binary matrix: text header 'CGMMAT rows cols' then row-major
    little-endian float64 payload."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "wb") as fh:
        fh.write(f"CGMMAT {matrix.shape[0]} {matrix.shape[1]}\n".encode("utf-8"))
        fh.write(matrix.astype("<f8").tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8").split()
        if len(header) != 3 or header[0] != "CGMMAT":
            raise ConfigError(f"{path}: not a matrix file")
        rows, cols = int(header[1]), int(header[2])
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    return data.reshape(rows, cols).astype(np.float64)


def fd_gradients(f, samples, h=1e-5) -> np.ndarray:
    """Central finite differences of a scalar black box per coordinate."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, dim = samples.shape
    grads = np.empty((n, dim))
    for i in range(n):
        for j in range(dim):
            up = samples[i].copy()
            up[j] += h
            down = samples[i].copy()
            down[j] -= h
            grads[i, j] = (f(up) - f(down)) / (2.0 * h)
    return grads
