"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 bad input
(manifest, image, store file), 4 backend failure, 5 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .catalog import _read_jsonl, load_catalog
from .config import ConfigError, build_backends, load_config
from .errors import BackendError, SignRAGError, StageError
from .evaluation import bench_latency, evaluate, load_dataset
from .fixtures import CALIBRATION_FORMAT, build_corpus
from .generation import recognize
from .indexing import index_catalog
from .retrieval import retrieve
from .scope_filter import LABELS, DistanceSample, FilterModel, calibrate, density_report, write_samples
from .vector_store import VectorStore

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_BACKEND, EXIT_INTERNAL = 0, 2, 3, 4, 5
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")

log = logging.getLogger("signrag")


def _err(msg):
    print(msg, file=sys.stderr)


def _config(args):
    overrides = {name: getattr(args, name, None) for name in
                 ("descriptor", "embedder", "generator", "k", "dimension", "seed", "template_version",
                  "max_workers")}
    if getattr(args, "strict", False):
        overrides["strict"] = True
    if getattr(args, "verbose", False):
        overrides["verbose"] = True
    return load_config(args.config, overrides=overrides)


def _load_filter(args, config):
    path = getattr(args, "filter", None) or config.threshold_path
    return FilterModel.load(path) if path else None


def cmd_index(args):
    config = _config(args)
    catalog = load_catalog(args.manifest, dimension=config.dimension)
    backends = build_backends(config, catalog=catalog)
    result = index_catalog(catalog, backends.descriptor, backends.embedder, strict=config.strict)
    result.store.save(args.output)
    print(json.dumps({"store": str(args.output), "count": len(result.store),
                      "dimension": result.store.dimension, "abstraction_violations": result.n_violations}))
    for code, found in result.violations.items():
        _err(f"warning: {code}: concrete content {[v.text for v in found]} should be placeholders")
    return EXIT_OK


def cmd_inspect(args):
    store = VectorStore.load(args.store)
    info = {"dimension": store.dimension, "count": len(store), "codes": store.codes}
    if args.descriptions:
        info["descriptions"] = {c: store.description(c).appearance for c in store.codes}
    print(json.dumps(info, indent=2))
    return EXIT_OK


def _images(target):
    p = Path(target)
    if p.is_dir():
        return sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
    if not p.is_file():
        raise FileNotFoundError(f"image not found: {p}")
    return [p]


def cmd_recognize(args):
    config = _config(args)
    store = VectorStore.load(args.store)
    backends = build_backends(config)
    scope = _load_filter(args, config)
    failed = 0
    for image in _images(args.image):
        outcomes = recognize(image, store, backends, config.k, scope_filter=scope,
                             max_workers=config.max_workers, template_version=config.template_version)
        if not outcomes:
            _err(f"{image}: no sign found")
        for o in outcomes:
            print(json.dumps(dict(image=str(image), **o.to_dict()), sort_keys=True))
            where = o.retrieval.query_description.location if o.retrieval else "-"
            _err(f"{image}: {o.final_code} ({o.source}) {where}" + (f" error: {o.error}" if o.error else ""))
            failed += o.error is not None
    return EXIT_BACKEND if failed else EXIT_OK


def cmd_eval(args):
    config = _config(args)
    store = VectorStore.load(args.store)
    dataset = load_dataset(args.dataset)
    backends = build_backends(config)
    result = evaluate(dataset, store, backends, runs=args.runs, k=config.k,
                      scope_filter=_load_filter(args, config), audit_path=args.audit,
                      max_workers=config.max_workers)
    sys.stdout.write(result.report("plain-table"))
    Path(args.metrics).write_text(result.report("delimited"), encoding="utf-8")
    _err(f"metrics written to {args.metrics}, audit log to {args.audit}")
    return EXIT_OK


def _load_calibration(path):
    path = Path(path)
    items = []
    for lineno, record in _read_jsonl(path, CALIBRATION_FORMAT):
        if record.get("label") not in LABELS:
            raise SignRAGError(f"{path}:{lineno}: label must be one of {LABELS}")
        items.append((path.parent / record["image"], record["label"]))
    return items


def cmd_calibrate_filter(args):
    config = _config(args)
    store = VectorStore.load(args.store)
    backends = build_backends(config)
    samples = []
    for image, label in _load_calibration(args.calibration):
        sets = retrieve(image, store, backends, config.k)
        if not sets:
            _err(f"warning: {image}: no sign described, skipped")
            continue
        samples.append(DistanceSample(label, sets[0].rank1_distance))
    model = calibrate(samples)
    model.save(args.output)
    out = Path(args.output)
    density = Path(args.density) if args.density else out.with_suffix(".density.tsv")
    density.write_text(density_report(samples).to_table(), encoding="utf-8")
    samples_path = Path(args.samples) if args.samples else out.with_suffix(".samples.tsv")
    write_samples(samples_path, samples)
    print(json.dumps({"threshold": model.threshold, "balanced_accuracy": model.balanced_accuracy,
                      "separable": model.separable, "model": str(out), "density": str(density)}))
    if model.degenerate:
        _err("warning: calibration samples are not separable; threshold is not informative")
    return EXIT_OK


def cmd_bench(args):
    config = _config(args)
    store = VectorStore.load(args.store)
    dataset = load_dataset(args.dataset)
    backends = build_backends(config)
    rep = bench_latency(dataset, store, backends, trials=args.trials, k=config.k,
                        scope_filter=_load_filter(args, config))
    print(rep.summary())
    sys.stdout.write(rep.to_table())
    Path(args.output).write_text(json.dumps(rep.to_dict(), indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_make_fixtures(args):
    corpus = build_corpus(args.directory, seed=args.seed, dimension=args.dimension)
    print(json.dumps({k: str(v) for k, v in vars(corpus).items()}, indent=2))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--descriptor", choices=("mock", "remote"))
    common.add_argument("--embedder", choices=("mock", "remote"))
    common.add_argument("--generator", choices=("oracle", "noisy", "guess", "remote"))
    common.add_argument("-k", "--k", type=int, help="number of retrieved candidates")
    common.add_argument("--dimension", type=int, help="embedding dimension")
    common.add_argument("--seed", type=int)
    common.add_argument("--template-version", dest="template_version")
    common.add_argument("--max-workers", dest="max_workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true", help="log backend traffic (keys redacted)")

    parser = argparse.ArgumentParser(prog="signrag", description="Zero-shot road sign recognition.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="build a store from a catalog manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True, help="store file to write")
    p.add_argument("--strict", action="store_true", help="fail on abstraction violations")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("inspect", help="summarize a store file")
    p.add_argument("store")
    p.add_argument("--descriptions", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("recognize", parents=[common], help="recognize signs in an image or directory")
    p.add_argument("image")
    p.add_argument("--store", required=True)
    p.add_argument("--filter", help="scope filter model file")
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("eval", parents=[common], help="repeated-run accuracy evaluation")
    p.add_argument("dataset")
    p.add_argument("--store", required=True)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--filter", help="scope filter model file")
    p.add_argument("--metrics", default="metrics.tsv")
    p.add_argument("--audit", default="audit.jsonl")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate-filter", parents=[common], help="fit the rank-1 distance threshold")
    p.add_argument("calibration")
    p.add_argument("--store", required=True)
    p.add_argument("-o", "--output", required=True, help="filter model file to write")
    p.add_argument("--density", help="KDE table to write")
    p.add_argument("--samples", help="distance samples to write")
    p.set_defaults(func=cmd_calibrate_filter)

    p = sub.add_parser("bench", parents=[common], help="per-stage latency benchmark")
    p.add_argument("dataset")
    p.add_argument("--store", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--filter", help="scope filter model file")
    p.add_argument("-o", "--output", default="latency.json")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("make-fixtures", help="write the synthetic fixture corpus")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dimension", type=int, default=64)
    p.set_defaults(func=cmd_make_fixtures)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except (StageError, BackendError) as exc:
        _err(f"backend error: {exc}")
        return EXIT_BACKEND
    except (SignRAGError, OSError, ValueError) as exc:
        _err(f"input error: {exc}")
        return EXIT_INPUT
    except KeyboardInterrupt:
        _err("interrupted")
        return 130
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        _err(f"internal error: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
