"""Command-line pipeline: gen, features, train, predict, eval, ph.

Exit codes: 0 success, 1 usage, 2 I/O, 3 integrity, 4 numerical failure.

``predict`` must never reach the persistent-homology oracle, so this module only
imports :mod:`harmonicpd.oracle` inside the commands that need ground truth.
"""

from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .features import HarmonicFeatureSet, IncomparableError, OverlapMode, extract_features
from .geometry import SHAPES, MalformedCloudError, PointCloud, ScaleGrid, generate, make_scale_grid, pairwise_distances, read_cloud, write_cloud
from .kernel import KernelConfig, component_grams, gram
from .spectral import EigensolverError
from .svm import (DEFAULT_BAND_GRID, DEFAULT_GAMMA_REG, DEFAULT_LAMBDA_GRID, DEFAULT_REG_GRID, LsSvmModel,
                  SingularSystemError, TrainingSet, cross_validate, predict, train)

log = logging.getLogger("harmonicpd")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTEGRITY, EXIT_NUMERICAL = 0, 1, 2, 3, 4
RUN_DIR_ENV = "HARMONICPD_RUN_DIR"

CV_PRESETS = {
    "default": (DEFAULT_LAMBDA_GRID, DEFAULT_BAND_GRID, DEFAULT_REG_GRID),
    "quick": (((1.0, 1.0, 1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)), (1.0,), (1.0, 16.0, 256.0)),
}


class UsageError(Exception):
    pass


class IntegrityError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path: str | Path, text: str) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


class Manifest:
    """Append-only JSON-lines record of one command run."""

    def __init__(self, command: str, argv: list[str], run_dir: Path):
        self.record = {"command": command, "argv": argv, "version": __version__,
                       "config": {}, "inputs": {}, "outputs": {}, "seeds": {}}
        self.run_dir = run_dir
        self.t0 = time.perf_counter()

    def input(self, path):
        self.record["inputs"][str(path)] = sha256_file(path)

    def output(self, path):
        self.record["outputs"][str(path)] = sha256_file(path)

    def commit(self):
        self.record["timings"] = {"wall_seconds": round(time.perf_counter() - self.t0, 6)}
        self.run_dir.mkdir(parents=True, exist_ok=True)
        with open(self.run_dir / "manifest.jsonl", "a") as fh:
            fh.write(json.dumps(self.record, sort_keys=True) + "\n")


def _run_dir(args) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    if os.environ.get(RUN_DIR_ENV):
        return Path(os.environ[RUN_DIR_ENV])
    out = Path(args.out).resolve()
    # eval writes into a directory; everything else writes a single file
    return out if args.command == "eval" else out.parent


def _load_features(path: str | Path) -> HarmonicFeatureSet:
    return HarmonicFeatureSet.from_json(Path(path).read_text())


def _is_feature_file(path: Path) -> bool:
    if path.suffix != ".json":
        return False
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError:
        return False
    return isinstance(doc, dict) and "betti" in doc and "states" in doc


def _feature_config(args) -> dict:
    return {"T": args.scales, "K": args.max_dim, "grid_policy": args.grid,
            "overlap": OverlapMode.parse(args.overlap, args.seed, args.basis).to_dict()}


def features_for_cloud(cloud: PointCloud, cfg: dict) -> HarmonicFeatureSet:
    if cfg["K"] >= cloud.n:
        raise UsageError(f"max dimension {cfg['K']} must be below the point count {cloud.n}")
    grid = make_scale_grid(pairwise_distances(cloud), cfg["T"], cfg["grid_policy"])
    return extract_features(cloud, grid, cfg["K"], OverlapMode.from_dict(cfg["overlap"]))


# --- commands ---------------------------------------------------------------

def cmd_gen(args, man: Manifest):
    cloud = generate(args.shape, args.n, args.noise, args.seed)
    write_cloud(cloud, args.out)
    man.record["config"] = {"shape": args.shape, "n": args.n, "noise": args.noise}
    man.record["seeds"] = {"generator": args.seed}
    man.output(args.out)
    man.output(str(args.out) + ".json")


def cmd_features(args, man: Manifest):
    cloud = read_cloud(args.input)
    man.input(args.input)
    cfg = _feature_config(args)
    feats = features_for_cloud(cloud, cfg)
    _write(args.out, feats.to_json())
    man.record["config"] = cfg
    man.record["seeds"] = {"overlap": args.seed}
    man.output(args.out)


def _labels_for(paths: list[Path], args) -> tuple[list[int], dict[int, str]]:
    if args.labels_from_generator:
        names = []
        for p in paths:
            shape = json.loads(p.read_text())["config"].get("cloud", {}).get("shape")
            if shape is None:
                raise UsageError(f"{p} has no generator label")
            names.append(shape)
    else:
        mapping = json.loads(Path(args.labels).read_text())
        names = []
        for p in paths:
            key = next((k for k in (str(p), p.name, p.stem, p.name.split(".")[0]) if k in mapping), None)
            if key is None:
                raise UsageError(f"no label for {p}")
            names.append(mapping[key])
    if all(isinstance(x, int) for x in names):
        ids = [int(x) for x in names]
        return ids, {i: str(i) for i in sorted(set(ids))}
    names = [str(x) for x in names]
    present = set(names)
    order = [s for s in SHAPES if s in present] + sorted(present - set(SHAPES))
    id_of = {name: i + 1 for i, name in enumerate(order)}
    return [id_of[x] for x in names], {i: name for name, i in id_of.items()}


def cmd_train(args, man: Manifest):
    paths = sorted({Path(p) for pattern in args.features for p in glob.glob(pattern)})
    if not paths:
        raise FileNotFoundError(f"no feature files match {args.features}")
    feats = [_load_features(p) for p in paths]
    for p in paths:
        man.input(p)
    labels, names = _labels_for(paths, args)
    if len(set(labels)) < 2:
        raise UsageError("need >= 2 classes")
    ts = TrainingSet(feats, labels, names)
    for f in feats:
        feats[0].check_comparable(f)

    overlap = feats[0].mode
    comps = component_grams(feats, mode=overlap)
    report = {}
    if args.cv == "off":
        config = KernelConfig(overlap=overlap)
        gamma_reg = args.gamma_reg
    else:
        lam, band, reg = CV_PRESETS[args.cv]
        cv = cross_validate(ts, lam, band, reg, folds=args.folds, seed=args.seed, overlap=overlap, components=comps)
        config, gamma_reg = cv.config, cv.gamma_reg
        report["cv"] = {"best": {"kernel_config": config.to_dict(), "gamma_reg": gamma_reg,
                                 "accuracy": cv.accuracy}, "table": cv.table}
    km = gram(feats, config, components=comps)
    model = train(km, ts, gamma_reg, truncation=args.truncation)

    out = Path(args.out)
    doc = model.to_dict()
    doc["class_names"] = {str(k): v for k, v in names.items()}
    doc["training_features"] = [os.path.relpath(p.resolve(), out.resolve().parent) for p in paths]
    doc["feature_config"] = {"T": feats[0].T, "K": feats[0].K, "grid_policy": feats[0].grid.policy,
                             "overlap": overlap.to_dict()}
    if feats[0].grid.policy == "fixed":
        doc["feature_config"]["scales"] = feats[0].grid.scales.tolist()
    _write(out, json.dumps(doc, sort_keys=True, indent=1))
    train_pred = [predict(model, f)[0] for f in feats]
    report.update({
        "train_accuracy": float(np.mean(np.array(train_pred) == np.array(labels))),
        "residuals": list(model.residuals),
        "shift_applied": km.shift_applied,
        "min_eigenvalue": km.min_eigenvalue,
        "L": model.L,
        "M": model.M,
    })
    report_path = Path(args.report) if args.report else out.with_name(out.stem + ".report.json")
    _write(report_path, json.dumps(report, sort_keys=True, indent=1))
    man.record["config"] = {"cv": args.cv, "kernel_config": config.to_dict(), "gamma_reg": gamma_reg,
                            "truncation": args.truncation}
    man.record["seeds"] = {"cv": args.seed}
    man.output(out)
    man.output(report_path)


def load_model(path: str | Path) -> tuple[LsSvmModel, dict]:
    """Load a model file and its training features, verifying their digests."""
    path = Path(path)
    doc = json.loads(path.read_text())
    feats = []
    for rel, digest in zip(doc["training_features"], doc["training_feature_digests"]):
        fpath = (path.parent / rel)
        f = _load_features(fpath)
        if f.digest != digest:
            raise IntegrityError(f"digest mismatch for training features {fpath}: "
                                 f"expected {digest[:12]}, found {f.digest[:12]}")
        feats.append(f)
    if len(feats) != len(doc["training_feature_digests"]):
        raise IntegrityError("model lists a different number of training features and digests")
    per_class = doc["per_class"]
    model = LsSvmModel(
        biases=np.array([c["bias"] for c in per_class]),
        alphas=np.array([c["alphas"] for c in per_class]),
        gamma_reg=doc["gamma_reg"],
        config=KernelConfig.from_dict(doc["kernel_config"]),
        truncation=doc.get("truncation"),
        train_features=tuple(feats),
        class_names={int(k): v for k, v in doc.get("class_names", {}).items()},
    )
    return model, doc


def _features_for_model(path: Path, doc: dict) -> HarmonicFeatureSet:
    if _is_feature_file(path):
        return _load_features(path)
    cfg = doc["feature_config"]
    cloud = read_cloud(path)
    if cfg["grid_policy"] == "fixed":
        return extract_features(cloud, ScaleGrid(cfg["scales"]), cfg["K"], OverlapMode.from_dict(cfg["overlap"]))
    return features_for_cloud(cloud, cfg)


def cmd_predict(args, man: Manifest):
    model, doc = load_model(args.model)
    man.input(args.model)
    inp = Path(args.input)
    feats = _features_for_model(inp, doc)
    man.input(inp)
    model.train_features[0].check_comparable(feats)
    cid, values, tie = predict(model, feats)
    result = {"class_id": cid, "class_name": model.class_names.get(cid), "decision_values": values.tolist(),
              "tie_broken": tie, "features_digest": feats.digest}
    _write(args.out, json.dumps(result, sort_keys=True, indent=1))
    man.output(args.out)


def cmd_eval(args, man: Manifest):
    from .oracle import DiagramClassCatalog, assign_class, compute_ph

    model, doc = load_model(args.model)
    man.input(args.model)
    clouds = sorted(Path(args.test_dir).glob("*.csv"))
    if not clouds:
        raise UsageError(f"empty test set: no .csv clouds in {args.test_dir}")
    names = model.class_names
    catalog = DiagramClassCatalog({}, names, radius=0.0, policy="generator_label")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(path: Path):
        cloud = read_cloud(path)
        feats = _features_for_model(path, doc)
        cid, values, _ = predict(model, feats)
        diagram = compute_ph(pairwise_distances(cloud), feats.K, provenance=dict(cloud.metadata))
        truth, _ = assign_class(diagram, catalog)
        consistent = all(
            diagram.betti_at(s, k) == feats.betti[j, k]
            for j, s in enumerate(feats.grid.scales) for k in range(feats.K + 1)
        )
        return path, feats, cid, truth, consistent

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(work, clouds))

    L = model.L
    confusion = np.zeros((L, L), dtype=int)
    samples = []
    for path, feats, cid, truth, consistent in results:
        man.input(path)
        confusion[truth - 1, cid - 1] += 1
        samples.append({"file": path.name, "predicted": cid, "truth": truth, "oracle_betti_consistent": consistent})
    accuracy = float(np.trace(confusion) / confusion.sum())
    metrics = {"accuracy": accuracy, "confusion": confusion.tolist(),
               "class_names": {str(k): v for k, v in names.items()}, "samples": samples}
    written = [_write(out / "metrics.json", json.dumps(metrics, sort_keys=True, indent=1))]

    K = results[0][1].K
    for k in range(K + 1):
        p = out / f"betti_curve_k{k}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "scale_index", "scale", "betti"])
            for path, feats, *_ in results:
                for j, s in enumerate(feats.grid.scales):
                    w.writerow([path.name, j, repr(float(s)), int(feats.betti[j, k])])
        written.append(p)
        p = out / f"persistence_curve_k{k}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "scale_index", "scale", "next_scale", "persistence"])
            for path, feats, *_ in results:
                sc = feats.grid.scales
                for j in range(feats.T - 1):
                    w.writerow([path.name, j, repr(float(sc[j])), repr(float(sc[j + 1])),
                                repr(float(feats.persistence[k, j]))])
        written.append(p)
    for p in written:
        man.output(p)


def cmd_ph(args, man: Manifest):
    from .oracle import compute_ph

    cloud = read_cloud(args.input)
    man.input(args.input)
    if args.max_dim + 1 > cloud.n:
        raise UsageError(f"max dimension {args.max_dim} needs more than {cloud.n} points")
    diagram = compute_ph(pairwise_distances(cloud), args.max_dim, args.max_scale, provenance=dict(cloud.metadata))
    _write(args.out, diagram.to_json() + "\n")
    man.record["config"] = {"max_dim": args.max_dim, "max_scale": args.max_scale}
    man.output(args.out)


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="harmonicpd", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1, help="bound on internal parallelism")
    parser.add_argument("--run-dir", default=None, help=f"manifest directory (default ${RUN_DIR_ENV} or the output's directory)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic point cloud")
    p.add_argument("--shape", required=True, choices=SHAPES)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("features", help="extract multi-scale harmonic features")
    p.add_argument("--input", required=True)
    p.add_argument("--scales", type=int, default=12, help="number of scales T")
    p.add_argument("--max-dim", type=int, default=2, help="largest homology dimension K")
    p.add_argument("--grid", choices=("uniform", "quantile"), default="uniform")
    p.add_argument("--overlap", default="exact", help="'exact' or 'shots:S'")
    p.add_argument("--basis", choices=("canonical", "projector"), default="canonical")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the one-vs-rest LS-SVM")
    p.add_argument("--features", required=True, nargs="+", help="feature files or glob patterns")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--labels", help="JSON map from feature file (path, file name, or name up to the first dot) to class id or name")
    g.add_argument("--labels-from-generator", action="store_true")
    p.add_argument("--cv", choices=("off", *CV_PRESETS), default="default")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--gamma-reg", type=float, default=DEFAULT_GAMMA_REG)
    p.add_argument("--truncation", type=float, default=None, help="effective condition number cap")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="classify a cloud or feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="accuracy, confusion matrix and curve data on a test directory")
    p.add_argument("--model", required=True)
    p.add_argument("--test-dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ph", help="persistence diagram by boundary-matrix reduction")
    p.add_argument("--input", required=True)
    p.add_argument("--max-dim", type=int, default=1)
    p.add_argument("--max-scale", type=float, default=None)
    p.add_argument("--out", required=True)
    return parser


COMMANDS = {"gen": cmd_gen, "features": cmd_features, "train": cmd_train, "predict": cmd_predict,
            "eval": cmd_eval, "ph": cmd_ph}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    man = Manifest(args.command, argv, _run_dir(args))
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            COMMANDS[args.command](args, man)
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (EigensolverError, SingularSystemError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, UnicodeDecodeError, json.JSONDecodeError, MalformedCloudError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, IncomparableError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    man.commit()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
