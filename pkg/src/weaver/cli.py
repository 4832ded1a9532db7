"""``weaver`` command line: ingest, fit, select, eval, scaling-fit, synth, export-distill.

Every command resolves a run config (JSON file, then flags on top), records
its hash and the dataset hash in each artifact, and writes JSON without
timestamps so identical inputs give byte-identical outputs.  Invalid input
exits with code 2; any other failure exits with 1.  Either way a JSON error
object goes to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import THRESHOLD_MODES, compute_difficulty, fit_per_cluster, partition
from .datastore import DatasetBundle, load_dataset, save_dataset, split_dev, validate
from .errors import DatasetError, PreprocessError, WeaverError
from .evaluation import MetricsReport, best_of_k_monte_carlo, pass_at_k_per_query, per_verifier_diagnostics
from .pipeline import WeaverConfig, WeaverModel, fit_weaver
from .preprocess import STRATEGIES as BINARIZATIONS
from .preprocess import binarize, normalize
from .scaling import fit_coverage_power, fit_selection_curve, holdout_split, prediction_mse, read_curve_csv
from .selection import SelectionResult
from .strategies import STRATEGIES, make_strategy
from .synth import SynthSpec, generate
from .ws import estimate_prior, export_pseudolabels

__all__ = ["main", "build_parser", "resolve_config", "config_hash"]

DEFAULTS = {
    "seed": 0,
    "dev_fraction": 0.05,
    "weaver": WeaverConfig().to_dict(),
    "strategies": ["weaver", "majority", "naive", "first"],
    "ks": [1],
    "trials": 20,
    "include_dev": True,
    "clusters": 1,
    "threshold_mode": "global",
}


# ------------------------------------------------------------------ plumbing


def _clean(obj):
    """Make ``obj`` JSON-safe: numpy scalars to Python, NaN/inf to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _canonical(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return "sha256:" + hashlib.sha256(_canonical(cfg).encode()).hexdigest()


def _file_hash(path: Path) -> str:
    return "sha256:" + hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(doc: dict, path: str | Path | None) -> None:
    text = json.dumps(_clean(doc), indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` JSON file, then explicit flags."""
    cfg = json.loads(json.dumps(DEFAULTS))
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DatasetError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise DatasetError(f"config {args.config} is not valid JSON: {exc.msg}") from None
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise DatasetError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = _merge(cfg, doc)
    flags = {
        "seed": "seed",
        "dev_fraction": "dev_fraction",
        "trials": "trials",
        "clusters": "clusters",
        "threshold_mode": "threshold_mode",
    }
    for attr, key in flags.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "strategies", None):
        cfg["strategies"] = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if getattr(args, "k", None):
        try:
            cfg["ks"] = [int(k) for k in args.k.split(",") if k.strip()]
        except ValueError:
            raise DatasetError(f"--k must be a comma-separated list of integers, got {args.k!r}") from None
    if getattr(args, "exclude_dev", False):
        cfg["include_dev"] = False
    if getattr(args, "binarization", None):
        cfg["weaver"]["binarization"]["strategy"] = args.binarization
    if getattr(args, "no_filter", False):
        cfg["weaver"]["filtering"] = False
    # one seed drives every random choice
    cfg["weaver"]["fit"]["seed"] = cfg["seed"]
    return cfg


def _weaver_config(cfg: dict) -> WeaverConfig:
    try:
        return WeaverConfig.from_dict(cfg["weaver"])
    except TypeError as exc:
        raise DatasetError(f"bad weaver config: {exc}") from None


def _load(args) -> DatasetBundle:
    return load_dataset(args.data, format=args.format, manifest=args.manifest)


def _with_dev(bundle: DatasetBundle, cfg: dict) -> DatasetBundle:
    return bundle.with_labels(split_dev(bundle, cfg["dev_fraction"], cfg["seed"]))


def _stamp(cfg: dict, bundle_hash: str) -> dict:
    return {"weaver_version": __version__, "config_hash": config_hash(cfg), "dataset_hash": bundle_hash}


# ------------------------------------------------------------------ fit/load


def _fit_model(bundle: DatasetBundle, cfg: dict):
    wcfg = _weaver_config(cfg)
    if cfg["threshold_mode"] not in THRESHOLD_MODES:
        raise DatasetError(f"unknown threshold mode {cfg['threshold_mode']!r}")
    model = fit_weaver(bundle, bundle.labels, wcfg)
    if cfg["clusters"] <= 1:
        return model, None
    part = partition(compute_difficulty(bundle.labels), cfg["clusters"])
    return model, fit_per_cluster(bundle, part, cfg["threshold_mode"], wcfg, bundle.labels)


class _RoutedModel:
    """Per-query dispatch to the cluster models recorded in a fit artifact."""

    def __init__(self, doc: dict):
        self.routes = {}
        self.models = []
        for c, entry in enumerate(doc["clusters"]):
            self.models.append(WeaverModel.from_dict(entry["fit"]))
            for q in entry["queries"]:
                self.routes[q] = c

    def posteriors(self, bundle: DatasetBundle) -> np.ndarray:
        missing = [q for q in bundle.query_ids if q not in self.routes]
        if missing:
            raise DatasetError(f"query {missing[0]!r} is not assigned to any fitted cluster")
        route = np.array([self.routes[q] for q in bundle.query_ids])
        out = np.empty((bundle.n, bundle.K))
        for c, model in enumerate(self.models):
            idx = np.flatnonzero(route == c)
            if idx.size:
                out[idx] = model.posteriors(bundle.take_queries(idx))
        return out

    def select(self, bundle: DatasetBundle) -> SelectionResult:
        return SelectionResult.from_scores(self.posteriors(bundle), "weaver_clustered")


def _read_fit(path: str):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read fit artifact {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"fit artifact {path} is not valid JSON: {exc.msg}") from None
    try:
        if doc.get("clustering"):
            return _RoutedModel(doc["clustering"]), doc
        return WeaverModel.from_dict(doc), doc
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetError(f"malformed fit artifact {path}: {exc}") from None


# ------------------------------------------------------------------ commands


def cmd_ingest(args) -> int:
    bundle = _load(args)
    report = validate(bundle).to_dict()
    report.update(dataset_hash=bundle.content_hash, source=str(args.data))
    _write_json(report, args.out)
    if args.normalized_out:
        cfg = resolve_config(args)
        normed, _ = normalize(bundle.scores, _weaver_config(cfg).normalization)
        save_dataset(bundle.with_scores(normed), args.normalized_out)
    return 0


def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    bundle = _with_dev(_load(args), cfg)
    model, clustered = _fit_model(bundle, cfg)
    doc = model.to_dict()
    doc["config"] = cfg
    doc.update(_stamp(cfg, bundle.content_hash))
    doc["dev_queries"] = [q for q, d in zip(bundle.query_ids, bundle.labels.dev_mask) if d]
    if clustered is not None:
        doc["clustering"] = clustered.to_dict(bundle.query_ids)
    _write_json(doc, args.out)
    return 0


def cmd_select(args) -> int:
    bundle = _load(args)
    model, fit_doc = _read_fit(args.fit)
    result = model.select(bundle)
    doc = result.to_dict(bundle.query_ids)
    if args.with_scores:
        for rec, row in zip(doc["selections"], result.scores):
            rec["posteriors"] = row.tolist()
    doc.update(config_hash=fit_doc.get("config_hash"), dataset_hash=bundle.content_hash,
               fit_dataset_hash=fit_doc.get("dataset_hash"))
    _write_json(doc, args.out)
    return 0


def _strategy(name: str, cfg: dict, fitted):
    if name == "weaver" and fitted is not None:
        return fitted.select
    if name == "weaver" and cfg["clusters"] > 1:
        wcfg = _weaver_config(cfg)

        def clustered(b: DatasetBundle) -> SelectionResult:
            part = partition(compute_difficulty(b.labels), cfg["clusters"])
            return fit_per_cluster(b, part, cfg["threshold_mode"], wcfg, b.labels).select(b)
        return clustered
    if name not in STRATEGIES:
        raise DatasetError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
    return make_strategy(name, _weaver_config(cfg))


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    raw = _load(args)
    if raw.labels is None or not raw.labels.fully_labeled:
        raise DatasetError("eval needs a label for every response")
    bundle = _with_dev(raw, cfg)
    ks = sorted(set(cfg["ks"]))
    for k in ks:
        if not 1 <= k <= bundle.K:
            raise DatasetError(f"k={k} outside [1, K={bundle.K}]")
    mask = np.ones(bundle.n, dtype=bool) if cfg["include_dev"] else ~bundle.labels.dev_mask
    if not mask.any():
        raise DatasetError("no queries left to evaluate after excluding the dev set")
    fitted = _read_fit(args.fit)[0] if args.fit else None
    y = bundle.y
    passk = {k: float(pass_at_k_per_query(y, k)[mask].mean()) for k in ks}
    success = {}
    for name in cfg["strategies"]:
        strat = _strategy(name, cfg, fitted)
        success[name] = {
            k: best_of_k_monte_carlo(
                strat, bundle, k, 1 if k == bundle.K else cfg["trials"], cfg["seed"], mask
            )
            for k in ks
        }
    wcfg = _weaver_config(cfg)
    normed, _ = normalize(bundle.scores, wcfg.normalization)
    votes = binarize(normed, wcfg.binarization, bundle.labels, estimate_prior(bundle.labels)).votes
    diag = per_verifier_diagnostics(normed.scores[mask], y[mask], votes[mask], normed.ids)
    notes = []
    if args.fit:
        notes.append("weaver uses the supplied fit artifact without refitting")
    report = MetricsReport(
        bundle.K, passk, success, diag["verifiers"], notes,
        meta={
            **_stamp(cfg, bundle.content_hash),
            "config": cfg,
            "evaluated_queries": int(mask.sum()),
            "accuracy_range": diag["accuracy_range"],
            "mean_pairwise_correlation": diag["mean_pairwise_correlation"],
        },
    )
    _write_json(report.to_dict(), args.out)
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


def cmd_scaling_fit(args) -> int:
    cfg = resolve_config(args)
    path = Path(args.input)
    points = read_curve_csv(path)
    fitter = fit_selection_curve if args.form == "selection" else fit_coverage_power
    doc = {}
    if args.holdout is not None:
        train, test = holdout_split(points, args.holdout)
        fit = fitter(train, seed=cfg["seed"])
        doc["holdout"] = {"fraction": args.holdout, "train_points": len(train),
                          "test_points": len(test), "mse": prediction_mse(fit, test)}
    else:
        fit = fitter(points, seed=cfg["seed"])
    doc = {**fit.to_dict(), **doc, "config_hash": config_hash({"seed": cfg["seed"], "form": args.form,
                                                                "holdout": args.holdout}),
           "dataset_hash": _file_hash(path)}
    _write_json(doc, args.out)
    return 0


def cmd_synth(args) -> int:
    try:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8")) if args.spec else {}
    except OSError as exc:
        raise DatasetError(f"cannot read spec {args.spec}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"spec {args.spec} is not valid JSON: {exc.msg}") from None
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = SynthSpec.from_dict(doc)
    except TypeError as exc:
        raise DatasetError(f"bad synth spec: {exc}") from None
    bundle = generate(spec)
    out = save_dataset(bundle, args.out)
    truth_path = Path(args.truth) if args.truth else out.parent / "truth.json"
    truth = dict(bundle.truth)
    truth.update(config_hash=config_hash(spec.to_dict()), dataset_hash=bundle.content_hash)
    _write_json(truth, truth_path)
    return 0


def cmd_export_distill(args) -> int:
    bundle = _load(args)
    model, fit_doc = _read_fit(args.fit)
    post = model.posteriors(bundle)
    count = export_pseudolabels(post, bundle, args.out)
    meta = {"records": count, "config_hash": fit_doc.get("config_hash"),
            "dataset_hash": bundle.content_hash, "fit_dataset_hash": fit_doc.get("dataset_hash")}
    _write_json(meta, Path(str(args.out) + ".meta.json"))
    return 0


# ------------------------------------------------------------------ parser


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="dataset file (.jsonl or .csv)")
    p.add_argument("--format", choices=("jsonl", "csv"), help="override format detection")
    p.add_argument("--manifest", help="verifier manifest (default: <stem>.manifest.json)")


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--dev-fraction", dest="dev_fraction", type=float)
    p.add_argument("--binarization", choices=BINARIZATIONS)
    p.add_argument("--no-filter", dest="no_filter", action="store_true")
    p.add_argument("--clusters", type=int)
    p.add_argument("--threshold-mode", dest="threshold_mode", choices=THRESHOLD_MODES)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="weaver", description="Aggregate weak verifiers to select responses.")
    ap.add_argument("--version", action="version", version=f"weaver {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset and write a report")
    _data_args(p)
    p.add_argument("--config")
    p.add_argument("--out", help="report JSON (default stdout)")
    p.add_argument("--normalized-out", dest="normalized_out",
                   help="also write percentile-normalized scores here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit the Weaver label model")
    _data_args(p)
    _run_args(p)
    p.add_argument("--out", help="fit artifact JSON (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="pick one response per query with a fitted model")
    _data_args(p)
    p.add_argument("--fit", required=True, help="fit artifact from 'weaver fit'")
    p.add_argument("--with-scores", dest="with_scores", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval", help="Pass@k and best-of-k success rates per strategy")
    _data_args(p)
    _run_args(p)
    p.add_argument("--strategies", help=f"comma list from {','.join(STRATEGIES)}")
    p.add_argument("--k", help="comma list of k values")
    p.add_argument("--trials", type=int, help="Monte-Carlo subsets per k < K")
    p.add_argument("--exclude-dev", dest="exclude_dev", action="store_true",
                   help="score only queries outside the dev set")
    p.add_argument("--fit", help="use this fit artifact for 'weaver' instead of refitting")
    p.add_argument("--out")
    p.add_argument("--csv", help="flat CSV copy of the metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scaling-fit", help="fit a coverage or Selection@1 curve")
    p.add_argument("--input", required=True, help="CSV with k,value[,stderr]")
    p.add_argument("--form", choices=("selection", "coverage"), default="selection")
    p.add_argument("--holdout", type=float, help="fit on this leading fraction, report MSE on the rest")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_scaling_fit)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON synth spec")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="data file (.jsonl or .csv)")
    p.add_argument("--truth", help="truth JSON (default: truth.json next to --out)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-distill", help="write posterior pseudolabels as JSONL")
    _data_args(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_distill)
    return ap


def _fail(exc: Exception, code: int) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (DatasetError, PreprocessError) as exc:
        return _fail(exc, 2)
    except (WeaverError, RuntimeError, ValueError, OSError) as exc:
        return _fail(exc, 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
