"""Flat key=value pipeline configuration.

Files hold `section.key = value` lines ('#' comments allowed). Environment
variables prefixed CGM_ override file values: CGM_DATASET_N_TRAIN maps to
dataset.n_train (first underscore-separated token is the section). Command
line flags override both."""

import os
from dataclasses import dataclass, field

import numpy as np

from .constraints import VolumeConstraint, barycenter_constraint
from .errors import ConfigError
from .generative import GmConfig
from .geometry import FfdLattice, barycenter_of, synth_shape, volume_of
from .synthfield import FieldSpec

DEFAULTS = {
    "pipeline.seed": "0",
    "pipeline.out": "out",
    "pipeline.threads": "1",
    "shape.kind": "icosphere",
    "shape.subdivision": "2",
    "shape.radii": "1 1 1",
    "lattice.grid": "2 2 2",
    "lattice.margin": "0.05",
    "lattice.pin_planes": "",
    "constraint.kind": "barycenter",
    "constraint.target": "keep",
    "dataset.n_train": "60",
    "dataset.n_test": "20",
    "dataset.sigma_d": "0.05",
    "rom.n_train": "80",
    "rom.n_test": "20",
    "rom.pod_modes": "3",
    "rom.as_dim": "1",
    "rom.bootstrap": "100",
    "rom.nn_width": "64",
    "rom.nn_epochs": "1000",
    "field.kind": "bump",
    "gm.latent_dim": "8",
    "gm.pca_modes": "10",
    "gm.hidden_width": "64",
    "gm.hidden_depth": "3",
    "gm.dropout": "0.1",
    "gm.disc_dropout": "0.95",
    "gm.epochs": "500",
    "gm.batch_size": "200",
    "gm.lr": "1e-3",
    "gm.weight_decay": "1e-2",
    "gm.alpha": "1e-2",
    "gm.sigma": "1.0",
    "gm.gamma": "0.5",
    "gm.k_gain": "1e-3",
    "gm.k0": "0.0",
}

_PIN_PLANES = ("imin", "imax", "jmin", "jmax", "kmin", "kmax")


def parse_config_text(text) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"line {lineno}: key {key!r} needs one dotted section")
        values[key] = value
    return values


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith("CGM_") or name.count("_") < 2:
            continue
        _, section, key = name.split("_", 2)
        out[f"{section.lower()}.{key.lower()}"] = value
    return out


def resolve_config(path=None, environ=None, overrides=None) -> dict:
    values = dict(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            file_values = parse_config_text(fh.read())
        unknown = set(file_values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for key, value in env_overrides(environ).items():
        if key in DEFAULTS:
            values[key] = value
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return values


def write_resolved(values: dict, path):
    with open(path, "w", newline="\n") as fh:
        for key in sorted(values):
            fh.write(f"{key} = {values[key]}\n")


def _floats(text) -> np.ndarray:
    return np.array([float(t) for t in text.replace(",", " ").split()])


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


@dataclass
class PipelineConfig:
    """Typed view over the resolved key=value mapping."""

    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __post_init__(self):
        self.seed = int(self.values["pipeline.seed"])
        self.out = self.values["pipeline.out"]
        self.threads = int(self.values["pipeline.threads"])
        self.n_train = int(self.values["dataset.n_train"])
        self.n_test = int(self.values["dataset.n_test"])
        self.sigma_d = float(self.values["dataset.sigma_d"])
        self.rom_train = int(self.values["rom.n_train"])
        self.rom_test = int(self.values["rom.n_test"])
        self.pod_modes = int(self.values["rom.pod_modes"])
        self.as_dim = int(self.values["rom.as_dim"])
        self.bootstrap = int(self.values["rom.bootstrap"])
        if self.n_train < 1 or self.rom_train < 1:
            raise ConfigError("dataset and ROM training sizes must be positive")

    @classmethod
    def load(cls, path=None, environ=None, overrides=None) -> "PipelineConfig":
        return cls(resolve_config(path, environ, overrides))

    def base_shape(self):
        radii = _floats(self.values["shape.radii"])
        return synth_shape(self.values["shape.kind"],
                           int(self.values["shape.subdivision"]), radii)

    def lattice(self, surface) -> FfdLattice:
        grid = _ints(self.values["lattice.grid"])
        margin = float(self.values["lattice.margin"])
        lower = surface.vertices.min(axis=0) - margin
        upper = surface.vertices.max(axis=0) + margin
        return FfdLattice.from_box(grid, lower, upper)

    def weights(self, lattice: FfdLattice):
        """Per-control-point weights; pinned cut planes get weight zero."""
        tokens = self.values["lattice.pin_planes"].split()
        if not tokens:
            return None
        weights = np.ones(lattice.n_control)
        local = lattice.control_points_local()
        m, n, o = lattice.grid
        for token in tokens:
            if token not in _PIN_PLANES:
                raise ConfigError(f"unknown pin plane {token!r}")
            axis = "ijk".index(token[0])
            value = 0.0 if token.endswith("min") else 1.0
            weights[local[:, axis] == value] = 0.0
        return weights

    def constraint(self, surface):
        kind = self.values["constraint.kind"]
        target = self.values["constraint.target"]
        if kind == "barycenter":
            value = (barycenter_of(surface.vertices) if target == "keep"
                     else _floats(target))
            return barycenter_constraint(surface.n_vertices, value)
        if kind == "volume":
            value = volume_of(surface) if target == "keep" else float(target)
            return VolumeConstraint(value)
        raise ConfigError(f"unknown constraint kind {kind!r}")

    def gm_config(self, seed=None) -> GmConfig:
        g = lambda k: self.values[f"gm.{k}"]
        return GmConfig(
            latent_dim=int(g("latent_dim")), pca_modes=int(g("pca_modes")),
            hidden_width=int(g("hidden_width")),
            hidden_depth=int(g("hidden_depth")), dropout=float(g("dropout")),
            disc_dropout=float(g("disc_dropout")), epochs=int(g("epochs")),
            batch_size=int(g("batch_size")), lr=float(g("lr")),
            weight_decay=float(g("weight_decay")), alpha=float(g("alpha")),
            sigma=float(g("sigma")), gamma=float(g("gamma")),
            k_gain=float(g("k_gain")), k0=float(g("k0")),
            seed=self.seed if seed is None else seed)

    def field_spec(self) -> FieldSpec:
        return FieldSpec(self.values["field.kind"])
