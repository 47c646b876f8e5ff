"""Command-line entry point: train, eval, time, ablate, synth."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import datasets, ensemble as ens, evaluation
from .drosonet import DrosoNetConfig
from .errors import FormatError, InvalidInputError
from .partition import PAPER_GRIDS, PartitionPlan

log = logging.getLogger("regiondrosonet")

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID = 0, 1, 2


@dataclass
class RunConfig:
    grids: list[list[int]] = field(default_factory=PAPER_GRIDS.to_pairs)
    z_per_region: int = 2
    k_votes: int = 20
    d_hidden: int = 2048
    epochs: int = 200
    learning_rate: float = 0.001
    master_seed: int = 0
    dataset: Optional[datasets.DatasetSpec] = None

    def ensemble_config(self) -> ens.EnsembleConfig:
        return ens.EnsembleConfig(
            grids=PartitionPlan.from_pairs(self.grids),
            z_per_region=self.z_per_region,
            k_votes=self.k_votes,
            drosonet=DrosoNetConfig(d_hidden=self.d_hidden, epochs=self.epochs, learning_rate=self.learning_rate),
            master_seed=self.master_seed,
        )

    def require_dataset(self) -> datasets.DatasetSpec:
        if self.dataset is None:
            raise InvalidInputError("configuration has no 'dataset' section")
        return self.dataset


_DATASET_KEYS = {"reference_dir", "query_dir", "tolerance", "gt_file"}


def _check_type(path, key, value):
    if key == "grids":
        ok = isinstance(value, list) and value and all(
            isinstance(g, list) and len(g) == 2 and all(type(v) is int for v in g) for g in value)
        if not ok:
            raise InvalidInputError(f"{path}: grids must be a non-empty list of [rows, cols] integer pairs")
    elif key == "learning_rate":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidInputError(f"{path}: learning_rate must be a number")
    elif type(value) is not int:
        raise InvalidInputError(f"{path}: {key} must be an integer")


def load_config(path: Optional[str | Path]) -> RunConfig:
    """Parse a JSON run configuration; unknown keys are errors. Paths resolve against the file."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise InvalidInputError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise InvalidInputError(f"{path}: top level must be an object")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise InvalidInputError(f"{path}: unknown config keys {sorted(unknown)}")
    ds = raw.pop("dataset", None)
    for key, value in raw.items():
        _check_type(path, key, value)
    cfg = RunConfig(**raw)
    if ds is not None:
        if not isinstance(ds, dict):
            raise InvalidInputError(f"{path}: 'dataset' must be an object")
        bad = set(ds) - _DATASET_KEYS
        if bad:
            raise InvalidInputError(f"{path}: unknown dataset keys {sorted(bad)}")
        for key in ("reference_dir", "query_dir"):
            if key not in ds:
                raise InvalidInputError(f"{path}: dataset.{key} is required")
        base = path.parent

        def resolve(p):
            return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

        tolerance = ds.get("tolerance", 0)
        if type(tolerance) is not int:
            raise InvalidInputError(f"{path}: dataset.tolerance must be an integer")
        cfg.dataset = datasets.DatasetSpec(resolve(ds["reference_dir"]), resolve(ds["query_dir"]),
                                           tolerance, resolve(ds.get("gt_file")))
    cfg.ensemble_config()  # validates every field
    return cfg


def _load_model(path) -> ens.Ensemble:
    if not Path(path).is_file():
        raise InvalidInputError(f"{path}: model file not found")
    return ens.load(path)


def _queries_and_gt(cfg: RunConfig, model: ens.Ensemble):
    spec = cfg.require_dataset()
    queries = datasets.load_traversal(spec.query_dir)
    if spec.reference_dir is not None and Path(spec.reference_dir).is_dir():
        n_ref = len([p for p in Path(spec.reference_dir).iterdir() if p.suffix.lower() in datasets.IMAGE_SUFFIXES])
        if n_ref != model.n_places:
            raise InvalidInputError(
                f"model was trained on {model.n_places} places but {spec.reference_dir} holds {n_ref} frames"
            )
    gt = datasets.load_ground_truth(spec, len(queries), model.n_places)
    return queries, gt


def _train(config: ens.EnsembleConfig, images, threads: int) -> ens.Ensemble:
    model = ens.Ensemble.build(config, len(images))
    return model.train_all(images, workers=threads)


def cmd_train(cfg: RunConfig, output: Path, threads: int = 1) -> int:
    spec = cfg.require_dataset()
    reference = datasets.load_traversal(spec.reference_dir)
    config = cfg.ensemble_config()
    print(f"P={config.region_count} T={config.total_nets} N={len(reference)}")
    model = _train(config, reference.images, threads)
    ens.save(model, output)
    for p, group in enumerate(model.groups):
        losses = [net.loss_history[-1] for net in group]
        grid, row, col = model.plan.region_labels()[p]
        print(f"region {p:3d} grid {grid} cell ({row},{col}): final loss {np.mean(losses):.4f}")
    print(f"wrote {output}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, model_path: Path, results_dir: Path) -> int:
    model = _load_model(model_path)
    queries, gt = _queries_and_gt(cfg, model)
    result = evaluation.evaluate(model, queries.images, gt)
    results_dir.mkdir(parents=True, exist_ok=True)
    evaluation.write_matches_json(result.records, results_dir / "matches.json")
    evaluation.write_pr_csv(result.records, results_dir / "pr_curve.csv")
    evaluation.write_metrics_json(result.metrics, results_dir / "metrics.json",
                                  queries=len(result.records),
                                  top1=float(np.mean([r.correct for r in result.records])))
    evaluation.write_per_region_csv(model, result.region_metrics, results_dir / "per_region.csv")
    m = result.metrics
    print(f"AUC={m.auc:.4f} EP={m.ep:.4f} R_P100={m.r_p100:.4f} P_R0={m.p_r0:.4f}")
    return EXIT_OK


def cmd_time(cfg: RunConfig, model_path: Path) -> int:
    model = _load_model(model_path)
    queries = datasets.load_traversal(cfg.require_dataset().query_dir)
    stats = evaluation.time_inference(model.match, queries.images)
    print(f"queries={stats.samples} mean={stats.mean_ms:.2f}ms median={stats.median_ms:.2f}ms "
          f"p99={stats.p99_ms:.2f}ms FPS={stats.fps:.2f}")
    return EXIT_OK


def _parse_grid_value(text: str) -> list[list[int]]:
    pairs = []
    for part in text.split("+"):
        try:
            r, c = part.lower().split("x")
            pairs.append([int(r), int(c)])
        except ValueError:
            raise InvalidInputError(f"grid values look like '4x4' or '1x1+2x4', got {text!r}") from None
    PartitionPlan.from_pairs(pairs)
    return pairs


def cmd_ablate(cfg: RunConfig, axis: str, values: list[str], results_dir: Path, threads: int = 1) -> int:
    if axis not in ("grids", "k", "z"):
        raise InvalidInputError(f"axis must be one of grids, k, z; got {axis!r}")
    if not values:
        raise InvalidInputError("ablation needs at least one value")
    spec = cfg.require_dataset()
    reference = datasets.load_traversal(spec.reference_dir)
    queries = datasets.load_traversal(spec.query_dir)
    gt = datasets.load_ground_truth(spec, len(queries), len(reference))
    rows = []

    def run(model, k):
        result = evaluation.evaluate(model, queries.images, gt, k=k, per_region=False)
        timing = evaluation.time_inference(lambda img: model.match(img, k=k), queries.images)
        return result.metrics.auc, result.metrics.ep, timing.mean_ms

    if axis == "k":
        ks = []
        for v in values:
            try:
                ks.append(int(v))
            except ValueError:
                raise InvalidInputError(f"K values must be integers, got {v!r}") from None
            if ks[-1] < 1:
                raise InvalidInputError(f"K must be >= 1, got {v}")
        model = _train(cfg.ensemble_config(), reference.images, threads)
        for k in ks:
            rows.append((k, *run(model, k)))
    else:
        for v in values:
            if axis == "grids":
                variant = replace(cfg, grids=_parse_grid_value(v))
            else:
                try:
                    variant = replace(cfg, z_per_region=int(v))
                except ValueError:
                    raise InvalidInputError(f"Z values must be integers, got {v!r}") from None
            model = _train(variant.ensemble_config(), reference.images, threads)
            rows.append((v, *run(model, variant.k_votes)))
            del model
    results_dir.mkdir(parents=True, exist_ok=True)
    with open(results_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "auc", "ep", "mean_ms"])
        w.writerows(rows)
    for row in rows:
        print(f"{axis}={row[0]}: AUC={row[1]:.4f} EP={row[2]:.4f} mean={row[3]:.2f}ms")
    return EXIT_OK


def cmd_synth(spec: datasets.SynthSpec, output_dir: Path) -> int:
    reference, query, gt = datasets.generate_synthetic(spec)
    try:
        datasets.write_dataset(reference, query, gt, output_dir)
    except OSError as exc:
        raise InvalidInputError(f"{output_dir}: cannot write dataset ({exc})") from None
    print(f"wrote {spec.n_places} places to {output_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regiondrosonet", description=__doc__)
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override master_seed (synth: generator seed)")
    parser.add_argument("--threads", type=int, default=1, help="training workers (ignored by time)")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an ensemble on the reference traversal")
    p.add_argument("output", type=Path, help="model file to write")

    p = sub.add_parser("eval", help="match the query traversal and write metrics")
    p.add_argument("model", type=Path)
    p.add_argument("results_dir", type=Path)

    p = sub.add_parser("time", help="single-threaded inference timing over the query traversal")
    p.add_argument("model", type=Path)

    p = sub.add_parser("ablate", help="sweep grids, K or Z")
    p.add_argument("--axis", required=True, choices=["grids", "k", "z"])
    p.add_argument("--values", required=True, nargs="+", help="e.g. 1 5 20, or grids like 4x4 1x1+2x4")
    p.add_argument("--results-dir", required=True, type=Path)

    p = sub.add_parser("synth", help="generate a synthetic reference/query dataset")
    p.add_argument("output_dir", type=Path)
    p.add_argument("--n-places", type=int, default=100)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--brightness", type=float, default=0.0, help="query brightness delta (luma units)")
    p.add_argument("--shift", type=int, default=0, help="lateral query shift in pixels")
    p.add_argument("--noise", type=float, default=0.0, help="query noise sigma (luma units)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            pert = datasets.Perturbation(args.brightness, args.shift, args.noise)
            spec = datasets.SynthSpec(args.n_places, args.width, args.height, args.seed or 0, pert)
            return cmd_synth(spec, args.output_dir)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
            cfg.ensemble_config()
        threads = max(1, args.threads)
        if args.command == "train":
            return cmd_train(cfg, args.output, threads)
        if args.command == "eval":
            return cmd_eval(cfg, args.model, args.results_dir)
        if args.command == "time":
            return cmd_time(cfg, args.model)
        return cmd_ablate(cfg, args.axis, args.values, args.results_dir, threads)
    except (InvalidInputError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
