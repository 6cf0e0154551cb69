"""On-disk dataset layout.

A dataset directory holds `sample_00000.stl` ... plus `manifest.tsv` (one
row per sample: file, seed, constraint kind, target value, achieved value,
displacement norm) and `meta.txt` (key=value lines with the lattice spec,
sigma_d, weld tolerance and constraint)."""

import os

import numpy as np

from .constraints import target_value
from .errors import ConfigError
from .stl_io import WELD_TOL, stl_read, stl_write

MANIFEST_COLUMNS = ("file", "seed", "constraint", "target", "achieved",
                    "displacement_norm")


def _join_floats(values) -> str:
    return ",".join(format(float(v), ".17g") for v in np.atleast_1d(values))


def _split_floats(cell: str) -> np.ndarray:
    return np.array([float(v) for v in cell.split(",")])


def write_dataset(directory, samples, constraint, meta=None):
    """Write CffdSample-like records (surface, seed_tag, achieved,
    displacement_norm) into a dataset directory. Samples carrying a
    control-point displacement also get a row in displacements.bin."""
    os.makedirs(directory, exist_ok=True)
    rows = []
    displacements = []
    target = _join_floats(target_value(constraint))
    for i, sample in enumerate(samples):
        name = f"sample_{i:05d}.stl"
        stl_write(sample.surface, os.path.join(directory, name))
        if getattr(sample, "displacement", None) is not None:
            displacements.append(np.reshape(sample.displacement, -1))
        rows.append("\t".join([
            name,
            str(getattr(sample, "seed_tag", "")),
            constraint.kind,
            target,
            _join_floats(sample.achieved),
            format(float(sample.displacement_norm), ".17g"),
        ]))
    if len(displacements) == len(samples):
        from .reduction import save_matrix
        save_matrix(os.path.join(directory, "displacements.bin"),
                    np.stack(displacements))
    with open(os.path.join(directory, "manifest.tsv"), "w", newline="\n") as fh:
        fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
        fh.write("\n".join(rows) + "\n")
    lines = {"constraint": constraint.kind, "target": target,
             "weld_tol": format(WELD_TOL, ".17g"), "n_samples": str(len(samples))}
    if meta:
        lines.update({k: str(v) for k, v in meta.items()})
    with open(os.path.join(directory, "meta.txt"), "w", newline="\n") as fh:
        for key in lines:
            fh.write(f"{key}={lines[key]}\n")


def read_manifest(directory):
    path = os.path.join(directory, "manifest.tsv")
    with open(path) as fh:
        lines = [l.rstrip("\n") for l in fh if l.strip()]
    header = tuple(lines[0].split("\t"))
    if header != MANIFEST_COLUMNS:
        raise ConfigError(f"unexpected manifest columns {header}")
    rows = []
    for line in lines[1:]:
        cells = line.split("\t")
        rows.append({
            "file": cells[0],
            "seed": cells[1],
            "constraint": cells[2],
            "target": _split_floats(cells[3]),
            "achieved": _split_floats(cells[4]),
            "displacement_norm": float(cells[5]),
        })
    return rows


def read_meta(directory):
    meta = {}
    with open(os.path.join(directory, "meta.txt")) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                meta[key] = value
    return meta


def read_dataset(directory):
    """Load all samples back as TriSurfaces, in manifest order."""
    rows = read_manifest(directory)
    surfaces = [stl_read(os.path.join(directory, row["file"])) for row in rows]
    return surfaces, rows


def cloud_matrix(surfaces) -> np.ndarray:
    """Stack vectorized clouds into an (n, 3M) matrix; all surfaces must
    share the vertex count."""
    counts = {s.n_vertices for s in surfaces}
    if len(counts) != 1:
        raise ConfigError(f"point counts differ across dataset: {sorted(counts)}")
    return np.stack([s.vertices.reshape(-1) for s in surfaces])


def shared_faces(surfaces) -> np.ndarray:
    faces = surfaces[0].faces
    for s in surfaces[1:]:
        if not np.array_equal(s.faces, faces):
            raise ConfigError("connectivity differs across dataset")
    return faces
