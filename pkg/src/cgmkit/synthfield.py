"""Analytic parametric scalar fields over surface vertices.

Stands in for expensive physics solves when exercising the surrogate
pipeline: each field is a deterministic, smooth function of the geometry
through its barycenter and second moments, so snapshot families over a
smooth shape family have rapidly decaying singular values."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import TriSurface, barycenter_of


@dataclass
class FieldSpec:
    """kind "bump" (single Gaussian bump at the barycenter) or "multibump"
    (six bumps offset along the axes by the per-axis rms spread). A scale
    of None uses the mean squared distance to the barycenter."""

    kind: str = "bump"
    scale: float = None

    def __post_init__(self):
        if self.kind not in ("bump", "multibump"):
            raise ConfigError(f"unknown field kind {self.kind!r}")
        if self.scale is not None and self.scale <= 0:
            raise ConfigError("field scale must be positive")


def snapshot_of(surface: TriSurface, spec: FieldSpec) -> np.ndarray:
    """One field value per vertex."""
    v = surface.vertices
    center = barycenter_of(v)
    rel = v - center
    msd = float(np.mean(np.sum(rel ** 2, axis=1)))
    scale = spec.scale if spec.scale is not None else max(msd, 1e-300)
    if spec.kind == "bump":
        return np.exp(-np.sum(rel ** 2, axis=1) / scale)
    spread = np.sqrt(np.mean(rel ** 2, axis=0))  # per-axis rms
    field = np.zeros(len(v))
    for axis in range(3):
        for sign in (-1.0, 1.0):
            offset = np.zeros(3)
            offset[axis] = sign * spread[axis]
            field += np.exp(-np.sum((rel - offset) ** 2, axis=1) / scale)
    return field / 6.0
