"""Minimal feed-forward network stack with manual backprop.

Each hidden unit is a linear layer, an optional batch-norm layer, an
activation (relu / sigmoid / identity) and an inverted-scaling dropout
layer. Training is plain AdamW. Everything is float64 and deterministic
given an Rng.

Batch norm uses biased (1/B) batch variance for both normalization and the
running statistics; eval mode is a fixed affine transform, so it needs no
rescaling and is safe for finite-difference gradient checks.
"""

import numpy as np

from .errors import CacheMismatchError, DegenerateBatchError, DimensionError
from .rng import Rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_ACTIVATIONS = ("relu", "sigmoid", "identity")


class MlpLayer:
    """One linear + batch-norm + activation + dropout unit."""

    def __init__(self, in_dim, out_dim, rng: Rng, activation="identity",
                 batch_norm=False, bn_affine=True, dropout=0.0):
        if activation not in _ACTIVATIONS:
            raise DimensionError(f"unknown activation {activation!r}")
        if not 0.0 <= dropout < 1.0:
            raise DimensionError("dropout rate must lie in [0, 1)")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.activation = activation
        self.batch_norm = bool(batch_norm)
        self.bn_affine = bool(bn_affine)
        self.dropout = float(dropout)
        limit = np.sqrt(6.0 / self.in_dim)
        self.weight = (2.0 * rng.uniform((self.out_dim, self.in_dim)) - 1.0) * limit
        self.bias = np.zeros(self.out_dim)
        if self.batch_norm:
            self.gamma = np.ones(self.out_dim)
            self.beta = np.zeros(self.out_dim)
            self.running_mean = np.zeros(self.out_dim)
            self.running_var = np.ones(self.out_dim)

    def parameters(self):
        params = [("weight", self.weight), ("bias", self.bias)]
        if self.batch_norm and self.bn_affine:
            params += [("gamma", self.gamma), ("beta", self.beta)]
        return params

    def state_tensors(self):
        state = [("weight", self.weight), ("bias", self.bias)]
        if self.batch_norm:
            state += [("gamma", self.gamma), ("beta", self.beta),
                      ("running_mean", self.running_mean),
                      ("running_var", self.running_var)]
        return state


class Mlp:
    """Ordered layer stack with train/eval modes and manual backprop."""

    def __init__(self, layers):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        self.layers = list(layers)
        self.mode = "train"
        self.version = 0

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def note_update(self):
        """Invalidate outstanding forward caches after a parameter update."""
        self.version += 1

    def parameters(self):
        """Trainable arrays in a fixed order, named layer{i}.{field}."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.parameters():
                out.append((f"layer{i}.{name}", arr))
        return out

    def state_tensors(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.state_tensors():
                out.append((f"layer{i}.{name}", arr))
        return out

    def forward(self, batch, rng: Rng = None):
        """Run the stack on a (B, in_dim) batch.

        Returns (output, cache). Train mode draws dropout masks from rng,
        applies batch statistics and updates the running stats; eval mode is
        deterministic.
        """
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                f"batch shape {x.shape} incompatible with input dim {self.in_dim}")
        train = self.mode == "train"
        if train and x.shape[0] < 2 and any(l.batch_norm for l in self.layers):
            raise DegenerateBatchError(
                "train-mode batch norm needs a batch of at least 2")
        steps = []
        for layer in self.layers:
            step = {"x": x}
            z = x @ layer.weight.T + layer.bias
            if layer.batch_norm:
                if train:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    inv_std = 1.0 / np.sqrt(var + BN_EPS)
                    layer.running_mean *= 1.0 - BN_MOMENTUM
                    layer.running_mean += BN_MOMENTUM * mu
                    layer.running_var *= 1.0 - BN_MOMENTUM
                    layer.running_var += BN_MOMENTUM * var
                else:
                    mu = layer.running_mean
                    inv_std = 1.0 / np.sqrt(layer.running_var + BN_EPS)
                zhat = (z - mu) * inv_std
                step["zhat"] = zhat
                step["inv_std"] = inv_std
                h = layer.gamma * zhat + layer.beta if layer.bn_affine else zhat
            else:
                h = z
            step["h"] = h
            if layer.activation == "relu":
                a = np.maximum(h, 0.0)
            elif layer.activation == "sigmoid":
                a = 1.0 / (1.0 + np.exp(-h))
                step["sig"] = a
            else:
                a = h
            if train and layer.dropout > 0.0:
                if rng is None:
                    raise DimensionError("train-mode dropout requires an rng")
                keep = rng.uniform(a.shape) >= layer.dropout
                step["drop_mask"] = keep
                a = a * keep / (1.0 - layer.dropout)
            steps.append(step)
            x = a
        cache = {"net": id(self), "version": self.version,
                 "train": train, "steps": steps, "out": x}
        return x, cache

    def backward(self, cache, grad_out):
        """Backprop grad_out through a cached forward pass.

        Returns (grads, grad_input) with grads aligned to parameters().
        """
        if cache["net"] != id(self) or cache["version"] != self.version:
            raise CacheMismatchError("cache does not match current network state")
        train = cache["train"]
        g = np.asarray(grad_out, dtype=np.float64)
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            step = cache["steps"][i]
            if train and layer.dropout > 0.0:
                g = g * step["drop_mask"] / (1.0 - layer.dropout)
            if layer.activation == "relu":
                g = g * (step["h"] > 0.0)
            elif layer.activation == "sigmoid":
                sig = step["sig"]
                g = g * sig * (1.0 - sig)
            layer_grads = {}
            if layer.batch_norm:
                zhat = step["zhat"]
                if layer.bn_affine:
                    layer_grads["gamma"] = (g * zhat).sum(axis=0)
                    layer_grads["beta"] = g.sum(axis=0)
                    gz = g * layer.gamma
                else:
                    gz = g
                inv_std = step["inv_std"]
                if train:
                    b = gz.shape[0]
                    g = (inv_std / b) * (
                        b * gz - gz.sum(axis=0) - zhat * (gz * zhat).sum(axis=0))
                else:
                    g = gz * inv_std
            x = step["x"]
            layer_grads["weight"] = g.T @ x
            layer_grads["bias"] = g.sum(axis=0)
            grads[i] = layer_grads
            g = g @ layer.weight
        flat = []
        for i, layer in enumerate(self.layers):
            for name, _ in layer.parameters():
                flat.append(grads[i][name])
        return flat, g


def mlp_stack(in_dim, out_dim, hidden_width, hidden_depth, rng: Rng,
              dropout=0.1, hidden_norm=True, final_batch_norm=False,
              final_activation="identity") -> Mlp:
    """Hidden units of linear + batch-norm + relu + dropout, then a bare
    final linear layer (optionally with a non-affine batch norm or an
    output activation)."""
    dims = [in_dim] + [hidden_width] * hidden_depth
    layers = []
    for a, b in zip(dims, dims[1:]):
        layers.append(MlpLayer(a, b, rng, activation="relu",
                               batch_norm=hidden_norm, dropout=dropout))
    layers.append(MlpLayer(dims[-1], out_dim, rng,
                           activation=final_activation,
                           batch_norm=final_batch_norm, bn_affine=False))
    return Mlp(layers)


class AdamW:
    """Decoupled weight-decay Adam over a flat list of parameter arrays."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=1e-2):
        self.params = [p for _, p in params] if params and isinstance(
            params[0], tuple) else list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise DimensionError(
                f"got {len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise DimensionError("gradient shape mismatch")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p -= self.lr * (mhat / (np.sqrt(vhat) + self.eps)
                            + self.weight_decay * p)
