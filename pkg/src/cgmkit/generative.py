"""Constrained generative models over PCA-compressed point clouds.

Four model kinds share the same output path: decode a latent, reconstruct
the full cloud through the PCA modes, then project onto the constraint set
with a final enforcing layer. The enforcing layer runs in training and in
sampling, so every emitted sample satisfies the constraint exactly; its
backward pass uses the projector (I - A^+ A) for linear constraints and
treats the per-pass volume rows as constants (stop-gradient on the
linearization)."""

import ast
from dataclasses import dataclass, field, fields

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .constraints import (LinearConstraint, VolumeConstraint,
                          barycenter_constraint, volume_gradient)
from .datasets import cloud_matrix, shared_faces
from .errors import ConfigError, DivergenceError
from .geometry import TriSurface, is_closed, volume_of
from .nn import AdamW, mlp_stack
from .reduction import PcaBasis, pca_fit
from .rng import Rng

MODEL_KINDS = ("ae", "vae", "aae", "began")
_CLAMP = 1e-7  # discriminator outputs are clamped to (eps, 1 - eps) before log


@dataclass
class GmConfig:
    latent_dim: int = 8
    pca_modes: int = 10
    hidden_width: int = 64
    hidden_depth: int = 3
    dropout: float = 0.1
    disc_dropout: float = 0.95
    epochs: int = 500
    batch_size: int = 200
    lr: float = 1e-3
    weight_decay: float = 1e-2
    alpha: float = 1e-2      # KL weight of the variational model
    sigma: float = 1.0       # decoder observation scale
    gamma: float = 0.5       # equilibrium target ratio
    k_gain: float = 1e-3     # proportional gain of the k update
    k0: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim > self.pca_modes:
            raise ConfigError("latent dim must not exceed the PCA mode count")
        if self.batch_size < 2:
            raise ConfigError("batch size must be at least 2")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0.0 <= self.k0 <= 1.0:
            raise ConfigError("k0 must lie in [0, 1]")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")


# ---------------------------------------------------------------------------
# Enforcing layers (batched, with manual backward)

class LinearEnforcer:
    """x -> x + A^+ (c - A x), the minimum-norm projection onto A x = c."""

    def __init__(self, constraint: LinearConstraint):
        self.constraint = constraint
        self.matrix = constraint.matrix
        self.target = constraint.target
        self.gain = np.linalg.pinv(self.matrix)  # A^T (A A^T)^-1 for full row rank

    def forward(self, clouds):
        residual = clouds @ self.matrix.T - self.target
        return clouds - residual @ self.gain.T, None

    def backward(self, cache, grad):
        return grad - (grad @ self.gain) @ self.matrix


class VolumeEnforcer:
    """Sequential per-component volume projection of each cloud in a batch.

    The backward pass applies the transposed frozen-row projectors in
    reverse pass order."""

    def __init__(self, constraint: VolumeConstraint, faces):
        self.constraint = constraint
        self.faces = np.asarray(faces, dtype=np.int64)
        # closedness depends only on the connectivity, so it is checked once
        # here and skipped in the per-sample hot path
        probe = TriSurface(np.zeros((int(self.faces.max()) + 1, 3)), self.faces)
        if not is_closed(probe):
            raise ConfigError("volume enforcement needs closed connectivity")

    def forward(self, clouds):
        clouds = np.array(clouds, dtype=np.float64)
        passes = []
        comp_of = {"x": 0, "y": 1, "z": 2}
        for b in range(len(clouds)):
            vertices = clouds[b].reshape(-1, 3).copy()
            surf = TriSurface(vertices, self.faces)
            current = volume_of(surf, closed=False)
            sample_passes = []
            for component, pass_target in self.constraint.pass_plan(current):
                c = comp_of[component]
                row = volume_gradient(surf)[:, c]
                if not np.any(row):
                    raise ConfigError("degenerate sample: all-zero volume row")
                deficit = pass_target - current
                vertices[:, c] += row * (deficit / (row @ row))
                surf = TriSurface(vertices, self.faces)
                current = volume_of(surf, closed=False)
                sample_passes.append((c, row))
            clouds[b] = vertices.reshape(-1)
            passes.append(sample_passes)
        return clouds, passes

    def backward(self, passes, grad):
        grad = np.array(grad, dtype=np.float64)
        for b, sample_passes in enumerate(passes):
            g = grad[b].reshape(-1, 3)
            for c, row in reversed(sample_passes):
                g[:, c] -= row * (row @ g[:, c]) / (row @ row)
            grad[b] = g.reshape(-1)
        return grad


def build_enforcer(constraint, faces=None):
    if isinstance(constraint, VolumeConstraint):
        if faces is None:
            raise ConfigError("volume enforcement needs the face connectivity")
        return VolumeEnforcer(constraint, faces)
    return LinearEnforcer(constraint)


# ---------------------------------------------------------------------------
# Model container

@dataclass
class GenerativeModel:
    kind: str
    config: GmConfig
    pca: PcaBasis
    nets: dict
    enforcer: object
    constraint: object
    faces: np.ndarray
    sampler_mean: np.ndarray = None   # fitted latent normal (ae only)
    sampler_chol: np.ndarray = None
    epoch_losses: list = field(default_factory=list)

    def eval(self):
        for net in self.nets.values():
            net.eval()
        return self

    def decode(self, latents) -> np.ndarray:
        """Latent batch to enforced cloud batch, eval mode."""
        self.eval()
        net = self.nets["gen"] if self.kind == "began" else self.nets["dec"]
        y, _ = net.forward(np.atleast_2d(latents))
        out, _ = self.enforcer.forward(self.pca.reconstruct(y))
        return out

    def encode(self, clouds) -> np.ndarray:
        self.eval()
        coords = self.pca.project(np.atleast_2d(clouds))
        key = "enc_mean" if self.kind == "vae" else "enc"
        if self.kind == "began":
            key = "disc_enc"
        z, _ = self.nets[key].forward(coords)
        return z

    def draw_latents(self, n, rng: Rng) -> np.ndarray:
        eps = rng.normal((n, self.config.latent_dim))
        if self.kind == "ae":
            return self.sampler_mean + eps @ self.sampler_chol.T
        return eps

    def sample(self, n, rng: Rng):
        """n constraint-feasible surfaces plus their latent records."""
        latents = self.draw_latents(n, rng.derive("latents"))
        clouds = self.decode(latents)
        surfaces = [TriSurface(c.reshape(-1, 3), self.faces) for c in clouds]
        return surfaces, latents


# ---------------------------------------------------------------------------
# Shared training plumbing

def _prepare(surfaces, constraint, config: GmConfig):
    clouds = cloud_matrix(surfaces)
    faces = shared_faces(surfaces)
    n, dim = clouds.shape
    if n < config.batch_size:
        raise ConfigError(f"dataset size {n} below batch size {config.batch_size}")
    if config.pca_modes > min(n, dim):
        raise ConfigError("more PCA modes than the dataset can support")
    pca = pca_fit(clouds, n_modes=config.pca_modes)
    enforcer = build_enforcer(constraint, faces)
    return clouds, faces, pca, enforcer


def _batches(n, batch_size, rng: Rng):
    perm = rng.permutation(n)
    start = 0
    while start + batch_size <= n:
        yield perm[start:start + batch_size]
        start += batch_size
    if n - start >= 2:
        yield perm[start:]


def _check_finite(value, epoch):
    if not np.isfinite(value):
        raise DivergenceError(f"loss became {value}", epoch=epoch)


def _norm_rows(x):
    return np.linalg.norm(x, axis=1)


def softplus(x):
    return np.logaddexp(0.0, x)


def kl_normal(mean, scale) -> np.ndarray:
    """Closed-form KL(N(mean, diag(scale^2)) || N(0, I)) per sample."""
    return 0.5 * np.sum(mean ** 2 + scale ** 2 - 1.0 - 2.0 * np.log(scale),
                        axis=-1)


def _fit_latent_normal(latents):
    mean = latents.mean(axis=0)
    centered = latents - mean
    cov = centered.T @ centered / max(len(latents) - 1, 1)
    jitter = 1e-12
    while True:
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(len(cov)))
            return mean, chol
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > 1e-3:
                raise


def _stack_params(*nets):
    params = []
    for net in nets:
        params.extend(net.parameters())
    return params


# ---------------------------------------------------------------------------
# Model-specific training loops

def train_ae(surfaces, constraint, config: GmConfig) -> GenerativeModel:
    """Plain autoencoder on the L2 reconstruction loss, with the enforcing
    layer inside the reconstruction path. The latent sampler is a normal
    fitted to the encoded training set."""
    clouds, faces, pca, enforcer = _prepare(surfaces, constraint, config)
    coords = pca.project(clouds)
    rng = Rng(config.seed, ("train-ae",))
    enc = mlp_stack(config.pca_modes, config.latent_dim, config.hidden_width,
                    config.hidden_depth, rng.derive("enc"),
                    dropout=config.dropout, final_batch_norm=True)
    dec = mlp_stack(config.latent_dim, config.pca_modes, config.hidden_width,
                    config.hidden_depth, rng.derive("dec"),
                    dropout=config.dropout)
    opt = AdamW(_stack_params(enc, dec), lr=config.lr,
                weight_decay=config.weight_decay)
    epoch_losses = []
    for epoch in range(config.epochs):
        losses = []
        for idx in _batches(len(clouds), config.batch_size,
                            rng.derive("shuffle", epoch)):
            drop = rng.derive("drop", epoch, int(idx[0]))
            x = clouds[idx]
            z, enc_cache = enc.forward(coords[idx], rng=drop)
            y, dec_cache = dec.forward(z, rng=drop)
            out, enf_cache = enforcer.forward(pca.reconstruct(y))
            resid = out - x
            norms = _norm_rows(resid)
            loss = float(norms.mean())
            _check_finite(loss, epoch)
            losses.append(loss)
            safe = np.maximum(norms, 1e-300)[:, None]
            g_out = np.where(norms[:, None] > 0, resid / safe, 0.0) / len(x)
            g_y = enforcer.backward(enf_cache, g_out) @ pca.modes
            dec_grads, g_z = dec.backward(dec_cache, g_y)
            enc_grads, _ = enc.backward(enc_cache, g_z)
            opt.step(enc_grads + dec_grads)
            enc.note_update()
            dec.note_update()
        epoch_losses.append(float(np.mean(losses)))
    model = GenerativeModel(kind="ae", config=config, pca=pca,
                            nets={"enc": enc, "dec": dec}, enforcer=enforcer,
                            constraint=constraint, faces=faces,
                            epoch_losses=epoch_losses)
    latents = model.encode(clouds)
    model.sampler_mean, model.sampler_chol = _fit_latent_normal(latents)
    return model


def train_vae(surfaces, constraint, config: GmConfig) -> GenerativeModel:
    """Variational model: Gaussian posterior with encoder mean and
    softplus-positive scale, reparameterized sampling, closed-form KL
    weighted by alpha."""
    clouds, faces, pca, enforcer = _prepare(surfaces, constraint, config)
    coords = pca.project(clouds)
    rng = Rng(config.seed, ("train-vae",))
    enc_mean = mlp_stack(config.pca_modes, config.latent_dim,
                         config.hidden_width, config.hidden_depth,
                         rng.derive("enc-mean"), dropout=config.dropout,
                         final_batch_norm=True)
    enc_scale = mlp_stack(config.pca_modes, config.latent_dim,
                          config.hidden_width, config.hidden_depth,
                          rng.derive("enc-scale"), dropout=config.dropout)
    dec = mlp_stack(config.latent_dim, config.pca_modes, config.hidden_width,
                    config.hidden_depth, rng.derive("dec"),
                    dropout=config.dropout)
    opt = AdamW(_stack_params(enc_mean, enc_scale, dec), lr=config.lr,
                weight_decay=config.weight_decay)
    two_sigma_sq = 2.0 * config.sigma ** 2
    epoch_losses = []
    for epoch in range(config.epochs):
        losses = []
        for idx in _batches(len(clouds), config.batch_size,
                            rng.derive("shuffle", epoch)):
            drop = rng.derive("drop", epoch, int(idx[0]))
            x = clouds[idx]
            b = len(x)
            a, a_cache = enc_mean.forward(coords[idx], rng=drop)
            raw, raw_cache = enc_scale.forward(coords[idx], rng=drop)
            scale = softplus(raw) + 1e-12  # floor keeps log and 1/scale finite
            eps = rng.derive("reparam", epoch, int(idx[0])).normal(a.shape)
            z = a + scale * eps
            y, dec_cache = dec.forward(z, rng=drop)
            out, enf_cache = enforcer.forward(pca.reconstruct(y))
            resid = out - x
            recon = float(np.sum(resid ** 2) / (two_sigma_sq * b))
            kl = float(kl_normal(a, scale).mean())
            loss = recon + config.alpha * kl
            _check_finite(loss, epoch)
            losses.append(loss)
            g_out = resid / (config.sigma ** 2 * b)
            g_y = enforcer.backward(enf_cache, g_out) @ pca.modes
            dec_grads, g_z = dec.backward(dec_cache, g_y)
            g_a = g_z + config.alpha * a / b
            g_scale = g_z * eps + config.alpha * (scale - 1.0 / scale) / b
            g_raw = g_scale / (1.0 + np.exp(-raw))
            mean_grads, _ = enc_mean.backward(a_cache, g_a)
            scale_grads, _ = enc_scale.backward(raw_cache, g_raw)
            opt.step(mean_grads + scale_grads + dec_grads)
            for net in (enc_mean, enc_scale, dec):
                net.note_update()
        epoch_losses.append(float(np.mean(losses)))
    return GenerativeModel(kind="vae", config=config, pca=pca,
                           nets={"enc_mean": enc_mean, "enc_scale": enc_scale,
                                 "dec": dec},
                           enforcer=enforcer, constraint=constraint,
                           faces=faces, epoch_losses=epoch_losses)


def _bce_grad(outputs, want_real, b):
    """Gradient of -log(D) (want_real) or -log(1 - D) w.r.t. D, averaged
    over the batch, zero where the clamp saturates."""
    clamped = np.clip(outputs, _CLAMP, 1.0 - _CLAMP)
    inside = (outputs > _CLAMP) & (outputs < 1.0 - _CLAMP)
    if want_real:
        g = -1.0 / clamped
    else:
        g = 1.0 / (1.0 - clamped)
    return np.where(inside, g, 0.0) / b


def adversarial_terms(d_real, d_fake):
    """(-mean log D(real), -mean log(1 - D(fake))) with clamped outputs."""
    real = -np.log(np.clip(d_real, _CLAMP, 1.0 - _CLAMP))
    fake = -np.log(1.0 - np.clip(d_fake, _CLAMP, 1.0 - _CLAMP))
    return float(real.mean()), float(fake.mean())


def train_aae(surfaces, constraint, config: GmConfig) -> GenerativeModel:
    """Adversarial autoencoder: a latent discriminator learns to tell prior
    draws (real) from encodings (fake); the encoder fights back while the
    encoder/decoder pair minimizes the Gaussian reconstruction term."""
    clouds, faces, pca, enforcer = _prepare(surfaces, constraint, config)
    coords = pca.project(clouds)
    rng = Rng(config.seed, ("train-aae",))
    enc = mlp_stack(config.pca_modes, config.latent_dim, config.hidden_width,
                    config.hidden_depth, rng.derive("enc"),
                    dropout=config.dropout, final_batch_norm=True)
    dec = mlp_stack(config.latent_dim, config.pca_modes, config.hidden_width,
                    config.hidden_depth, rng.derive("dec"),
                    dropout=config.dropout)
    disc = mlp_stack(config.latent_dim, 1, config.hidden_width,
                     config.hidden_depth, rng.derive("disc"),
                     dropout=config.disc_dropout, final_activation="sigmoid")
    opt_ae = AdamW(_stack_params(enc, dec), lr=config.lr,
                   weight_decay=config.weight_decay)
    opt_disc = AdamW(disc.parameters(), lr=config.lr,
                     weight_decay=config.weight_decay)
    epoch_losses = []
    for epoch in range(config.epochs):
        losses = []
        for idx in _batches(len(clouds), config.batch_size,
                            rng.derive("shuffle", epoch)):
            drop = rng.derive("drop", epoch, int(idx[0]))
            x = clouds[idx]
            b = len(x)
            # discriminator step: real = prior draws, fake = encodings
            z_fake, _ = enc.forward(coords[idx], rng=drop)
            z_real = rng.derive("prior", epoch, int(idx[0])).normal(z_fake.shape)
            d_real, real_cache = disc.forward(z_real, rng=drop)
            d_fake, fake_cache = disc.forward(z_fake, rng=drop)
            g_real = _bce_grad(d_real, True, b)
            g_fake = _bce_grad(d_fake, False, b)
            real_grads, _ = disc.backward(real_cache, g_real)
            fake_grads, _ = disc.backward(fake_cache, g_fake)
            opt_disc.step([a + c for a, c in zip(real_grads, fake_grads)])
            disc.note_update()
            # reconstruction + adversarial step for encoder/decoder
            z, enc_cache = enc.forward(coords[idx], rng=drop)
            y, dec_cache = dec.forward(z, rng=drop)
            out, enf_cache = enforcer.forward(pca.reconstruct(y))
            resid = out - x
            recon = float(np.sum(resid ** 2) / (2.0 * config.sigma ** 2 * b))
            d_adv, adv_cache = disc.forward(z, rng=drop)
            adv = float(-np.log(np.clip(d_adv, _CLAMP, 1.0 - _CLAMP)).mean())
            loss = recon + adv
            _check_finite(loss, epoch)
            losses.append(loss)
            g_out = resid / (config.sigma ** 2 * b)
            g_y = enforcer.backward(enf_cache, g_out) @ pca.modes
            dec_grads, g_z = dec.backward(dec_cache, g_y)
            _, g_z_adv = disc.backward(adv_cache, _bce_grad(d_adv, True, b))
            enc_grads, _ = enc.backward(enc_cache, g_z + g_z_adv)
            opt_ae.step(enc_grads + dec_grads)
            enc.note_update()
            dec.note_update()
        epoch_losses.append(float(np.mean(losses)))
    return GenerativeModel(kind="aae", config=config, pca=pca,
                           nets={"enc": enc, "dec": dec, "disc": disc},
                           enforcer=enforcer, constraint=constraint,
                           faces=faces, epoch_losses=epoch_losses)


def began_k_update(k, gain, gamma, loss_real, loss_generated) -> float:
    """k_t = clamp(k_{t-1} + gain * (gamma * E[f(x)] - E[f(G(z))]), 0, 1)."""
    return float(np.clip(k + gain * (gamma * loss_real - loss_generated),
                         0.0, 1.0))


def train_began(surfaces, constraint, config: GmConfig) -> GenerativeModel:
    """Boundary-equilibrium adversarial training.

    The discriminator is an autoencoder scored by f(u) = ||u - D(u)||; per
    batch it minimizes f(real) - k_t * f(G(Enc(real))), the generator
    minimizes f(G(z)), and k_t is updated by the proportional control rule
    and clamped to [0, 1]."""
    clouds, faces, pca, enforcer = _prepare(surfaces, constraint, config)
    rng = Rng(config.seed, ("train-began",))
    disc_enc = mlp_stack(config.pca_modes, config.latent_dim,
                         config.hidden_width, config.hidden_depth,
                         rng.derive("disc-enc"), dropout=config.dropout,
                         final_batch_norm=True)
    disc_dec = mlp_stack(config.latent_dim, config.pca_modes,
                         config.hidden_width, config.hidden_depth,
                         rng.derive("disc-dec"), dropout=config.dropout)
    gen = mlp_stack(config.latent_dim, config.pca_modes, config.hidden_width,
                    config.hidden_depth, rng.derive("gen"),
                    dropout=config.dropout)
    opt_disc = AdamW(_stack_params(disc_enc, disc_dec), lr=config.lr,
                     weight_decay=config.weight_decay)
    opt_gen = AdamW(gen.parameters(), lr=config.lr,
                    weight_decay=config.weight_decay)
    k = float(config.k0)
    epoch_losses = []

    def disc_f(u, drop):
        """f(u) = ||u - D(u)|| rowwise plus everything backward needs."""
        pu = pca.project(u)
        h, ce = disc_enc.forward(pu, rng=drop)
        w, cd = disc_dec.forward(h, rng=drop)
        du = pca.reconstruct(w)
        resid = u - du
        norms = np.maximum(_norm_rows(resid), 1e-300)
        unit = resid / norms[:, None]
        return norms, unit, ce, cd

    def f_input_grad(unit, ce, cd, coeff, accumulate):
        """Gradient of coeff * mean f w.r.t. the f input, optionally
        accumulating discriminator parameter gradients."""
        b = len(unit)
        g_du = -coeff * unit / b
        dd_grads, g_h = disc_dec.backward(cd, g_du @ pca.modes)
        de_grads, g_pu = disc_enc.backward(ce, g_h)
        if accumulate is not None:
            for total, g in zip(accumulate, de_grads + dd_grads):
                total += g
        return coeff * unit / b + g_pu @ pca.modes.T

    for epoch in range(config.epochs):
        losses = []
        for idx in _batches(len(clouds), config.batch_size,
                            rng.derive("shuffle", epoch)):
            drop = rng.derive("drop", epoch, int(idx[0]))
            x = clouds[idx]
            b = len(x)
            n_enc = len(disc_enc.parameters())
            disc_grads = [np.zeros_like(p) for _, p in
                          _stack_params(disc_enc, disc_dec)]
            # shared encoder pass feeds both the real reconstruction and the
            # generator's fake input
            px = pca.project(x)
            h, ce = disc_enc.forward(px, rng=drop)
            wx, cd = disc_dec.forward(h, rng=drop)
            dx = pca.reconstruct(wx)
            resid_x = x - dx
            norms_x = np.maximum(_norm_rows(resid_x), 1e-300)
            unit_x = resid_x / norms_x[:, None]
            f_real = float(norms_x.mean())
            # fake path G(Enc(x)) through the enforcing layer
            yg, cg = gen.forward(h, rng=drop)
            fake, enf_cache = enforcer.forward(pca.reconstruct(yg))
            norms_g, unit_g, ce2, cd2 = disc_f(fake, drop)
            f_fake = float(norms_g.mean())
            loss_d = f_real - k * f_fake
            _check_finite(loss_d, epoch)
            # discriminator gradients: real term output path
            g_du = -unit_x / b
            dd_grads, g_h_real = disc_dec.backward(cd, g_du @ pca.modes)
            for total, g in zip(disc_grads[n_enc:], dd_grads):
                total += g
            # fake term: -k * mean f(fake), both through D and through Enc
            g_fake_input = f_input_grad(unit_g, ce2, cd2, -k, disc_grads)
            g_yg = enforcer.backward(enf_cache, g_fake_input) @ pca.modes
            _, g_h_fake = gen.backward(cg, g_yg)  # generator frozen here
            de_grads, _ = disc_enc.backward(ce, g_h_real + g_h_fake)
            for total, g in zip(disc_grads[:n_enc], de_grads):
                total += g
            opt_disc.step(disc_grads)
            disc_enc.note_update()
            disc_dec.note_update()
            # generator step on fresh prior draws
            z = rng.derive("prior", epoch, int(idx[0])).normal(
                (b, config.latent_dim))
            yg2, cg2 = gen.forward(z, rng=drop)
            gen_out, enf_cache2 = enforcer.forward(pca.reconstruct(yg2))
            norms_z, unit_z, ce3, cd3 = disc_f(gen_out, drop)
            f_gen = float(norms_z.mean())
            _check_finite(f_gen, epoch)
            g_gen_input = f_input_grad(unit_z, ce3, cd3, 1.0, None)
            g_yg2 = enforcer.backward(enf_cache2, g_gen_input) @ pca.modes
            gen_grads, _ = gen.backward(cg2, g_yg2)
            opt_gen.step(gen_grads)
            gen.note_update()
            k = began_k_update(k, config.k_gain, config.gamma, f_real, f_gen)
            losses.append(loss_d)
        epoch_losses.append(float(np.mean(losses)))
    model = GenerativeModel(kind="began", config=config, pca=pca,
                            nets={"disc_enc": disc_enc, "disc_dec": disc_dec,
                                  "gen": gen},
                            enforcer=enforcer, constraint=constraint,
                            faces=faces, epoch_losses=epoch_losses)
    model.k_final = k
    return model


TRAINERS = {"ae": train_ae, "vae": train_vae, "aae": train_aae,
            "began": train_began}


def train_model(kind, surfaces, constraint, config: GmConfig) -> GenerativeModel:
    if kind not in TRAINERS:
        raise ConfigError(f"unknown model kind {kind!r}")
    return TRAINERS[kind](surfaces, constraint, config)


# ---------------------------------------------------------------------------
# Checkpoints

def _net_specs(kind, config: GmConfig):
    r, w, d, latent = (config.pca_modes, config.hidden_width,
                       config.hidden_depth, config.latent_dim)
    enc = dict(in_dim=r, out_dim=latent, hidden_width=w, hidden_depth=d,
               dropout=config.dropout, final_batch_norm=True)
    dec = dict(in_dim=latent, out_dim=r, hidden_width=w, hidden_depth=d,
               dropout=config.dropout)
    if kind == "ae":
        return {"enc": enc, "dec": dec}
    if kind == "vae":
        return {"enc_mean": enc, "enc_scale": dict(dec, in_dim=r, out_dim=latent),
                "dec": dec}
    if kind == "aae":
        disc = dict(in_dim=latent, out_dim=1, hidden_width=w, hidden_depth=d,
                    dropout=config.disc_dropout, final_activation="sigmoid")
        return {"enc": enc, "dec": dec, "disc": disc}
    return {"disc_enc": enc, "disc_dec": dec, "gen": dict(dec)}


def save_model(model: GenerativeModel, path):
    """Checkpoint = tensor container plus a text sidecar (path + '.txt')
    recording kind, config and constraint."""
    tensors = {
        "pca.modes": model.pca.modes,
        "pca.mean": model.pca.mean,
        "pca.singular_values": model.pca.singular_values,
        "faces": model.faces.astype(np.float64),
    }
    for net_name, net in model.nets.items():
        for tensor_name, arr in net.state_tensors():
            tensors[f"net.{net_name}.{tensor_name}"] = arr
    if model.sampler_mean is not None:
        tensors["sampler.mean"] = model.sampler_mean
        tensors["sampler.chol"] = model.sampler_chol
    constraint = model.constraint
    if isinstance(constraint, VolumeConstraint):
        tensors["constraint.target"] = np.array([constraint.target])
    else:
        tensors["constraint.matrix"] = constraint.matrix
        tensors["constraint.target"] = constraint.target
    save_tensors(path, tensors)
    lines = [f"kind={model.kind}"]
    for f in fields(GmConfig):
        lines.append(f"config.{f.name}={getattr(model.config, f.name)!r}")
    if isinstance(constraint, VolumeConstraint):
        lines.append("constraint.kind=volume")
        lines.append(f"constraint.order={','.join(constraint.order)}")
        lines.append(f"constraint.split={constraint.split}")
    else:
        lines.append(f"constraint.kind={constraint.kind}")
    with open(str(path) + ".txt", "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> GenerativeModel:
    tensors = load_tensors(path)
    meta = {}
    with open(str(path) + ".txt") as fh:
        for line in fh:
            key, value = line.strip().split("=", 1)
            meta[key] = value
    kind = meta["kind"]
    kwargs = {}
    for f in fields(GmConfig):
        kwargs[f.name] = ast.literal_eval(meta[f"config.{f.name}"])
    config = GmConfig(**kwargs)
    pca = PcaBasis(modes=tensors["pca.modes"], mean=tensors["pca.mean"],
                   singular_values=tensors["pca.singular_values"],
                   tolerance=0.0, reconstruction_error=0.0)
    faces = tensors["faces"].astype(np.int64)
    if meta["constraint.kind"] == "volume":
        constraint = VolumeConstraint(float(tensors["constraint.target"][0]),
                                      order=tuple(meta["constraint.order"].split(",")),
                                      split=meta["constraint.split"])
    elif meta["constraint.kind"] == "barycenter":
        constraint = barycenter_constraint(
            tensors["constraint.matrix"].shape[1] // 3,
            tensors["constraint.target"])
    else:
        constraint = LinearConstraint(tensors["constraint.matrix"],
                                      tensors["constraint.target"])
    nets = {}
    init_rng = Rng(0, ("load",))
    for net_name, spec in _net_specs(kind, config).items():
        net = mlp_stack(rng=init_rng, **spec)
        for tensor_name, arr in net.state_tensors():
            arr[...] = tensors[f"net.{net_name}.{tensor_name}"]
        nets[net_name] = net.eval()
    model = GenerativeModel(kind=kind, config=config, pca=pca, nets=nets,
                            enforcer=build_enforcer(constraint, faces),
                            constraint=constraint, faces=faces)
    if "sampler.mean" in tensors:
        model.sampler_mean = tensors["sampler.mean"]
        model.sampler_chol = tensors["sampler.chol"]
    return model
