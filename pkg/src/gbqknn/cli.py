"""Command-line entry point.

Subcommands run the library in-process. ``search`` and ``classify`` can
instead forward to a running service with ``--server``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import bench
from .classifier import FitConfig, fit, neighbors, predict, read_model, write_model
from .datasets_io import DatasetSpec, load_csv, make_blobs, quantize_dataset
from .errors import DataError
from .granular_ball import GenerationStats, generate
from .quantum_sim import SimilarityBackend

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SEED_ENV = "GBQKNN_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _add_common(p: argparse.ArgumentParser, seed: int) -> None:
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--output", help="output file (default: stdout)")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--config", help="JSON file of option defaults")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV dataset")
    p.add_argument("--label-column", default="-1", help="label column name or index")
    p.add_argument("--no-header", action="store_true")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--purity-threshold", type=float, default=1.0)
    p.add_argument("--max-neighbors", type=int, default=4)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--backend", choices=["exact", "sampled"], default="exact")
    p.add_argument("--shots", type=int, default=1024)
    p.add_argument("--cmp-bits", type=int, default=16)
    p.add_argument("--full-layer-candidates", action="store_true")


def build_parser(seed: int = 0) -> argparse.ArgumentParser:
    parser = _Parser(prog="gbqknn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-blobs", help="write a synthetic Gaussian-blob CSV")
    _add_common(p, seed)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--spread", type=float, default=1.0)
    p.set_defaults(format="csv")

    p = sub.add_parser("gen-balls", help="reduce a dataset to granular-balls")
    _add_common(p, seed)
    _add_data(p)
    p.add_argument("--purity-threshold", type=float, default=1.0)
    p.add_argument("--bits", type=int, default=8)

    p = sub.add_parser("build", help="fit a model and write it to --index")
    _add_common(p, seed)
    _add_data(p)
    _add_model(p)
    p.add_argument("--index", required=True, help="model file to write")

    for name, text in (("search", "nearest balls per query"), ("classify", "predict labels")):
        p = sub.add_parser(name, help=text)
        _add_common(p, seed)
        _add_data(p)
        p.add_argument("--index", required=True, help="model file")
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--server", help="forward to a running service at this URL")
        p.add_argument("--model-id", help="model already loaded on the server")

    p = sub.add_parser("bench", help="scaling benchmark over ball counts")
    _add_common(p, seed)
    p.add_argument("--sizes", default="256,1024,4096,16384")
    p.add_argument("--seeds", default=None, help="comma list (default: --seed)")
    p.add_argument("--max-neighbors", type=int, default=4)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--backend", choices=["exact", "sampled"], default="exact")
    p.add_argument("--shots", type=int, default=1024)
    p.add_argument("--cmp-bits", type=int, default=16)
    p.add_argument("--queries", type=int, default=50)
    p.add_argument("--granular", action="store_true", help="sizes are point counts")
    p.add_argument("--purity-threshold", type=float, default=1.0)
    p.add_argument("--full-layer-candidates", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-wall-times", action="store_true", help="omit timing fields")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--index", action="append", default=[], help="model file to preload")
    p.add_argument("--config", help=argparse.SUPPRESS)
    return parser


def parse_args(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    parser = build_parser(_default_seed())
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(overrides, dict):
            raise UsageError("config file must hold a JSON object")
        # config supplies defaults; explicit flags still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(k.replace("-", "_") for k in overrides) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
        args = parser.parse_args(argv)
    return args


def _emit(args: argparse.Namespace, rows: list[dict], payload: Optional[dict] = None) -> None:
    if args.format == "csv":
        buf = io.StringIO()
        names = list(rows[0]) if rows else []
        writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in row.items()})
        text = buf.getvalue()
    else:
        text = json.dumps(payload if payload is not None else rows, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _spec(args: argparse.Namespace) -> DatasetSpec:
    return DatasetSpec(args.input, label_column=args.label_column, has_header=not args.no_header)


def _backend(args: argparse.Namespace) -> SimilarityBackend:
    return SimilarityBackend(args.backend, args.shots, args.cmp_bits)


def cmd_make_blobs(args: argparse.Namespace) -> None:
    records = make_blobs(args.n_per_class, args.classes, args.dim, args.separation, args.spread, args.seed)
    rows = [{**{f"x{j}": v for j, v in enumerate(r.features)}, "label": r.label} for r in records]
    if args.format == "csv":
        _emit(args, rows)
        return
    header = {"columns": list(rows[0]), "label_column": "label", "seed": args.seed}
    lines = [json.dumps({"header": header}, sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_gen_balls(args: argparse.Namespace) -> None:
    records = load_csv(args.input, _spec(args))
    points, quantizer, labels = quantize_dataset(records, args.bits)
    stats = GenerationStats()
    balls = generate(points, args.purity_threshold, np.random.default_rng(args.seed), stats)
    rows = [
        {
            "center": b.center.tolist(),
            "radius": b.radius,
            "label": labels[b.label],
            "purity": b.purity,
            "member_count": b.member_count,
        }
        for b in balls
    ]
    payload = {
        "header": {"bits": args.bits, "bounds": quantizer.bounds, "labels": labels,
                   "n_points": len(points), "splits": stats.splits},
        "balls": rows,
    }
    _emit(args, rows, payload)


def cmd_build(args: argparse.Namespace) -> None:
    records = load_csv(args.input, _spec(args))
    points, quantizer, labels = quantize_dataset(records, args.bits)
    config = FitConfig(
        threshold=args.purity_threshold,
        m=args.max_neighbors,
        k=args.k,
        bits=args.bits,
        backend=_backend(args),
        seed=args.seed,
        full_layer_candidates=args.full_layer_candidates,
    )
    model = fit(points, config, labels, quantizer)
    write_model(model, args.index)
    row = {"index": args.index, **asdict(model.stats)}
    _emit(args, [row], row)


def _queries(args: argparse.Namespace, model) -> tuple[list[list[int]], list[Optional[str]]]:
    records = load_csv(args.input, _spec(args))
    if model.quantizer is not None:
        q = model.quantizer.transform(np.asarray([r.features for r in records]))
        points = q.tolist()
    else:
        points = [[int(round(v)) for v in r.features] for r in records]
    return points, [r.label for r in records]


@contextmanager
def _remote(args: argparse.Namespace):
    """Client for ``--server`` plus the id of the model to query."""
    import httpx

    try:
        with httpx.Client(base_url=args.server, timeout=60.0) as client:
            model_id = args.model_id
            if model_id is None:
                resp = client.post("/models/load", json={"path": str(Path(args.index).resolve())})
                _check(resp)
                model_id = resp.json()["model_id"]
            yield client, model_id
    except httpx.HTTPError as exc:
        raise UsageError(f"cannot reach server {args.server}: {exc}") from None


def _check(resp) -> None:
    if resp.status_code == 422:
        raise DataError(str(resp.json().get("detail")))
    if resp.status_code >= 400:
        raise UsageError(f"server returned {resp.status_code}: {resp.text}")


def cmd_search(args: argparse.Namespace) -> None:
    model = read_model(args.index)
    points, _ = _queries(args, model)
    rows = []
    if args.server:
        with _remote(args) as (client, model_id):
            for qi, p in enumerate(points):
                resp = client.post(f"/models/{model_id}/search", json={"point": p, "k": args.k})
                _check(resp)
                for rank, n in enumerate(resp.json()["neighbors"]):
                    rows.append({"query": qi, "rank": rank, "ball_id": n["ball_id"],
                                 "dissimilarity": n["dissimilarity"], "label": model.labels[n["label"]]})
    else:
        for qi, p in enumerate(points):
            for rank, (d, i) in enumerate(neighbors(model, p, args.k)):
                rows.append({"query": qi, "rank": rank, "ball_id": i, "dissimilarity": d,
                             "label": model.labels[model.index.balls[i].label]})
    _emit(args, rows)


def cmd_classify(args: argparse.Namespace) -> None:
    model = read_model(args.index)
    points, truth = _queries(args, model)
    if args.server:
        with _remote(args) as (client, model_id):
            resp = client.post(f"/models/{model_id}/classify", json={"points": points})
            _check(resp)
            predicted = resp.json()["labels"]
    else:
        predicted = [predict(model, p) for p in points]
    rows = [
        {"query": i, "predicted": model.labels[lab], "label": t}
        for i, (lab, t) in enumerate(zip(predicted, truth))
    ]
    correct = sum(r["predicted"] == r["label"] for r in rows)
    payload = {"accuracy": correct / len(rows) if rows else None, "predictions": rows}
    _emit(args, rows, payload)


def _int_list(text: str, name: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name} must be a comma-separated list of integers") from None


def cmd_bench(args: argparse.Namespace) -> None:
    config = bench.ScalingConfig(
        sizes=_int_list(args.sizes, "sizes"),
        seeds=_int_list(args.seeds, "seeds") if args.seeds else [args.seed],
        m=args.max_neighbors,
        k=args.k,
        d=args.dim,
        bits=args.bits,
        backend=_backend(args),
        queries=args.queries,
        granular=args.granular,
        threshold=args.purity_threshold,
        full_layer_candidates=args.full_layer_candidates,
    )
    report = bench.run_scaling(config, workers=args.workers)
    if args.format == "csv":
        text = report.to_csv()
    else:
        text = report.to_json(wall_times=not args.no_wall_times) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_serve(args: argparse.Namespace) -> None:
    import uvicorn

    from .service.app import ModelRegistry, create_app

    registry = ModelRegistry()
    for path in args.index:
        model_id = registry.add(read_model(path), Path(path).stem)
        print(f"loaded {path} as {model_id}", file=sys.stderr)
    uvicorn.run(create_app(registry), host=args.host, port=args.port)


COMMANDS = {
    "make-blobs": cmd_make_blobs,
    "gen-balls": cmd_gen_balls,
    "build": cmd_build,
    "search": cmd_search,
    "classify": cmd_classify,
    "bench": cmd_bench,
    "serve": cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        try:
            args = parse_args(argv)
        except SystemExit as exc:
            # argparse exits for --help (0) and usage errors (1)
            return exc.code if isinstance(exc.code, int) else EXIT_USAGE
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gbqknn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"gbqknn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
