"""Pipeline command line: dataset generation, model training, sampling,
validation, surrogate fitting and report collation.

Every command is deterministic given its config and seed, writes a copy of
the resolved configuration into its output directory, and exits nonzero
with a diagnostic naming the failing sample when a postcondition (such as
a constraint residual bound) does not hold."""

import argparse
import os
import sys

import numpy as np

from . import datasets
from .config import PipelineConfig, write_resolved
from .constraints import (achieved_value, constraint_residual,
                          parallel_map, sample_cffd_dataset)
from .errors import CgmError
from .generative import MODEL_KINDS, load_model, save_model, train_model
from .reduction import (as_fit, as_response_surface, fd_gradients,
                        load_matrix, podi_fit, podi_predict, save_matrix)
from .rng import Rng
from .synthfield import snapshot_of
from .validation import metric_report

RESIDUAL_BOUND = 1e-9


class CommandFailure(Exception):
    """Raised when a postcondition check fails; carries the exit message."""


def _ensure_out(config: PipelineConfig):
    os.makedirs(config.out, exist_ok=True)
    write_resolved(config.values, os.path.join(config.out, "config.resolved.txt"))
    return config.out


def _check_residuals(constraint, samples, label):
    for i, surface in enumerate(samples):
        residual = constraint_residual(constraint, surface)
        if not residual <= RESIDUAL_BOUND:
            raise CommandFailure(
                f"{label} sample {i}: constraint residual {residual:.3e} "
                f"exceeds {RESIDUAL_BOUND:.0e}")


def cmd_generate(config: PipelineConfig) -> int:
    out = _ensure_out(config)
    base = config.base_shape()
    lattice = config.lattice(base)
    constraint = config.constraint(base)
    rng = Rng(config.seed, ("generate",))
    n = config.n_train + config.n_test
    samples = sample_cffd_dataset(lattice, base, constraint, n,
                                  config.sigma_d, rng,
                                  weights=config.weights(lattice),
                                  threads=config.threads)
    _check_residuals(constraint, [s.surface for s in samples], "generated")
    meta = {
        "shape": config.values["shape.kind"],
        "subdivision": config.values["shape.subdivision"],
        "lattice_grid": config.values["lattice.grid"],
        "lattice_margin": config.values["lattice.margin"],
        "pin_planes": config.values["lattice.pin_planes"],
        "sigma_d": config.sigma_d,
        "n_train": config.n_train,
        "n_test": config.n_test,
        "seed": config.seed,
    }
    datasets.write_dataset(out, samples, constraint, meta=meta)
    print(f"generate: wrote {n} samples to {out}")
    return 0


def _dataset_constraint(surfaces, rows):
    from .constraints import VolumeConstraint, barycenter_constraint
    kind = rows[0]["constraint"]
    target = rows[0]["target"]
    if kind == "barycenter":
        return barycenter_constraint(surfaces[0].n_vertices, target)
    if kind == "volume":
        return VolumeConstraint(float(target[0]))
    raise CommandFailure(f"dataset carries unsupported constraint {kind!r}")


def cmd_train(config: PipelineConfig, kind, data_dir=None) -> int:
    out = _ensure_out(config)
    data_dir = data_dir or out
    surfaces, rows = datasets.read_dataset(data_dir)
    train_surfaces = surfaces[:config.n_train]
    constraint = _dataset_constraint(surfaces, rows)
    model = train_model(kind, train_surfaces, constraint,
                        config.gm_config())
    path = os.path.join(out, f"model_{kind}.cgmt")
    save_model(model, path)
    print(f"train: {kind} final epoch loss {model.epoch_losses[-1]:.6g}, "
          f"checkpoint {path}")
    return 0


def cmd_sample(config: PipelineConfig, checkpoint, n, seed) -> int:
    out = _ensure_out(config)
    model = load_model(checkpoint)
    rng = Rng(seed, ("sample",))
    surfaces, latents = model.sample(n, rng)
    _check_residuals(model.constraint, surfaces, "sampled")

    class _Record:
        def __init__(self, surface, i):
            self.surface = surface
            self.seed_tag = f"{seed}:sample:{i}"
            self.achieved = achieved_value(model.constraint, surface)
            self.displacement_norm = 0.0

    records = [_Record(s, i) for i, s in enumerate(surfaces)]
    datasets.write_dataset(out, records, model.constraint,
                           meta={"checkpoint": str(checkpoint), "seed": seed,
                                 "kind": model.kind})
    save_matrix(os.path.join(out, "latents.bin"), latents)
    print(f"sample: wrote {n} samples from {model.kind} to {out}")
    return 0


def cmd_validate(config: PipelineConfig, reference_dir, generated_dir) -> int:
    out = _ensure_out(config)
    reference, _ = datasets.read_dataset(reference_dir)
    generated, _ = datasets.read_dataset(generated_dir)
    base = config.base_shape()
    constraint = config.constraint(base)
    report = metric_report(reference, generated, constraint=constraint)
    report.write_tsv(os.path.join(out, "metrics.tsv"))
    report.write_histograms(os.path.join(out, "histograms"))
    for name, value in report.rows:
        print(f"validate: {name} = {value:.6g}")
    residual = report.value("max_constraint_residual")
    if not residual <= RESIDUAL_BOUND:
        raise CommandFailure(
            f"generated dataset violates the constraint: residual {residual:.3e}")
    return 0


def _surrogate_errors(predict, inputs, snapshots):
    pred = predict(inputs)
    return float(np.linalg.norm(pred - snapshots)
                 / max(np.linalg.norm(snapshots), 1e-300))


def cmd_surrogate(config: PipelineConfig, source, method, seed) -> int:
    """Fit a surrogate either over a checkpoint's latent space (samples are
    drawn from the model) or over a dataset directory (inputs are the
    stored control-point displacements)."""
    out = _ensure_out(config)
    rng = Rng(seed, ("surrogate",))
    n = config.rom_train + config.rom_test
    model = None
    if os.path.isdir(source):
        if method == "as":
            raise CommandFailure(
                "the as method needs a checkpoint (gradients are taken in "
                "the model's latent space)")
        surfaces, _ = datasets.read_dataset(source)
        disp_path = os.path.join(source, "displacements.bin")
        if not os.path.exists(disp_path):
            raise CommandFailure(f"{source} has no displacements.bin")
        latents = load_matrix(disp_path)
        if len(surfaces) < n:
            raise CommandFailure(
                f"dataset holds {len(surfaces)} samples, ROM split needs {n}")
        surfaces, latents = surfaces[:n], latents[:n]
        # constant columns (pinned control points) carry no information
        latents = latents[:, latents.std(axis=0) > 0]
    else:
        model = load_model(source)
        surfaces, latents = model.sample(n, rng)
    spec = config.field_spec()
    snapshots = np.stack(parallel_map(
        lambda s: snapshot_of(s, spec), surfaces, config.threads))
    save_matrix(os.path.join(out, "snapshots.bin"), snapshots)
    save_matrix(os.path.join(out, "inputs.bin"), latents)
    split = config.rom_train
    mu_train, mu_test = latents[:split], latents[split:]
    s_train, s_test = snapshots[:split], snapshots[split:]
    lines = ["method\ttrain_error\ttest_error"]
    if method in ("rbf", "gpr", "nn"):
        podi = podi_fit(mu_train, s_train, config.pod_modes, regressor=method,
                        rng=rng.derive("nn"),
                        nn_width=int(config.values["rom.nn_width"]),
                        nn_epochs=int(config.values["rom.nn_epochs"]))
        train_err = _surrogate_errors(lambda m: podi_predict(podi, m),
                                      mu_train, s_train)
        test_err = _surrogate_errors(lambda m: podi_predict(podi, m),
                                     mu_test, s_test)
        truncation = podi.basis.reconstruction_error / max(
            np.linalg.norm(s_train - s_train.mean(axis=0)), 1e-300)
        lines.append(f"{method}-podi\t{train_err:.12g}\t{test_err:.12g}")
        lines.append(f"pod-truncation\t{truncation:.12g}\t-")
        if method == "rbf" and not np.all(np.isfinite([train_err, test_err])):
            raise CommandFailure("rbf-podi produced non-finite errors")
    elif method == "as":
        f_train = s_train.mean(axis=1)
        f_test = s_test.mean(axis=1)

        def f_of(mu):
            cloud = model.decode(np.atleast_2d(mu))[0]
            from .geometry import TriSurface
            return float(snapshot_of(
                TriSurface(cloud.reshape(-1, 3), model.faces), spec).mean())

        grads = fd_gradients(lambda m: f_of(m), mu_train, h=1e-4)
        subspace = as_fit(mu_train, grads, config.as_dim,
                          n_bootstrap=config.bootstrap, rng=rng.derive("boot"))
        surface = as_response_surface(subspace, mu_train, f_train)
        train_err = float(np.linalg.norm(surface.predict(mu_train) - f_train)
                          / max(np.linalg.norm(f_train), 1e-300))
        test_err = float(np.linalg.norm(surface.predict(mu_test) - f_test)
                         / max(np.linalg.norm(f_test), 1e-300))
        lines.append(f"as-gpr\t{train_err:.12g}\t{test_err:.12g}")
        save_matrix(os.path.join(out, "as_eigenvalues.bin"),
                    subspace.eigenvalues[None, :])
    else:
        raise CommandFailure(f"unknown surrogate method {method!r}")
    with open(os.path.join(out, "errors.tsv"), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines[1:]:
        print("surrogate:", line.replace("\t", "  "))
    return 0


def cmd_report(run_dir) -> int:
    """Collate whatever artifacts a run directory holds."""
    sections = []
    manifest = os.path.join(run_dir, "manifest.tsv")
    if os.path.exists(manifest):
        rows = datasets.read_manifest(run_dir)
        worst = max(float(np.max(np.abs(r["achieved"] - r["target"])))
                    for r in rows)
        sections.append(f"dataset: {len(rows)} samples, "
                        f"worst |achieved - target| = {worst:.3e}")
    for name in ("metrics.tsv", "errors.tsv"):
        path = os.path.join(run_dir, name)
        if os.path.exists(path):
            with open(path) as fh:
                body = fh.read().strip()
            sections.append(f"{name}:\n{body}")
    if not sections:
        raise CommandFailure(f"no artifacts found under {run_dir}")
    text = "\n\n".join(sections)
    print(text)
    with open(os.path.join(run_dir, "summary.txt"), "w", newline="\n") as fh:
        fh.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgmkit", description="constrained shape generation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None)

    common(sub.add_parser("generate", help="write a constrained dataset"))

    p_train = sub.add_parser("train", help="train a generative model")
    common(p_train)
    p_train.add_argument("--kind", choices=MODEL_KINDS, required=True)
    p_train.add_argument("--data", default=None,
                         help="dataset directory (default: the out dir)")

    p_sample = sub.add_parser("sample", help="sample from a checkpoint")
    common(p_sample)
    p_sample.add_argument("checkpoint")
    p_sample.add_argument("--n", type=int, default=100)

    p_val = sub.add_parser("validate", help="compare two datasets")
    common(p_val)
    p_val.add_argument("reference")
    p_val.add_argument("generated")

    p_sur = sub.add_parser("surrogate", help="fit a reduced-order surrogate")
    common(p_sur)
    p_sur.add_argument("source",
                       help="model checkpoint, or a dataset directory whose "
                            "stored displacements become the inputs")
    p_sur.add_argument("--method", choices=("rbf", "gpr", "nn", "as"),
                       required=True)

    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.run_dir)
        overrides = {}
        if args.seed is not None:
            overrides["pipeline.seed"] = str(args.seed)
        if args.out is not None:
            overrides["pipeline.out"] = args.out
        if args.threads is not None:
            overrides["pipeline.threads"] = str(args.threads)
        config = PipelineConfig.load(args.config, overrides=overrides)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "train":
            return cmd_train(config, args.kind, data_dir=args.data)
        if args.command == "sample":
            return cmd_sample(config, args.checkpoint, args.n, config.seed)
        if args.command == "validate":
            return cmd_validate(config, args.reference, args.generated)
        if args.command == "surrogate":
            return cmd_surrogate(config, args.source, args.method,
                                 config.seed)
        raise CommandFailure(f"unknown command {args.command!r}")
    except (CommandFailure, CgmError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
