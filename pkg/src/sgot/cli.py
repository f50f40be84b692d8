"""Command line interface.

    sgot dist A.json B.json            distance between two graphs
    sgot plan A.json B.json -o T.csv   transport plan as CSV
    sgot batch-loss manifest.json      corpus loss report (JSON)
    sgot embed G.json -o X.csv         node embeddings as CSV
    sgot perturb G.json --out-dir D    augmented variants as graph files

Settings come from built-in defaults, then ``--config FILE`` (JSON with
RunConfig keys), then command-line flags. The resolved settings are echoed
to stderr. Exit codes: 0 ok, 1 usage, 2 invalid data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from sgot.augment import PerturbConfig, perturb
from sgot.consistency import ABLATIONS, LossWeights, evaluate_corpus
from sgot.embedding import MODES, WEIGHTINGS, PropagationConfig, featurize, propagate_nonparametric, propagate_parametric, random_weights
from sgot.graph import GraphParseError, GraphValidationError, SceneGraph, dump_graph, load_graph, load_manifest
from sgot.transport import NumericError, SinkhornConfig, cost_matrix, plan_cost, sinkhorn

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    lam: float = 100.0
    lam1: float = 1.0
    lam2: float = 1.0
    dim: int = 8
    layers: int = 2
    mode: str = "nonparametric"
    weighting: str = "distance"
    tol: float = 1e-9
    max_iter: int = 1000
    seed: int = 0
    k: int = 2
    noise: float = 0.01
    p_drop: float = 0.0

    def validate(self) -> None:
        def bad(msg):
            raise UsageError(f"invalid config: {msg}")

        if not (math.isfinite(self.lam) and self.lam > 0):
            bad(f"lam must be positive, got {self.lam}")
        for name in ("lam1", "lam2", "noise"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                bad(f"{name} must be finite and >= 0, got {v}")
        if not self.tol > 0:
            bad(f"tol must be positive, got {self.tol}")
        if self.dim < 1 or self.max_iter < 1 or self.k < 1:
            bad("dim, max_iter and k must be >= 1")
        if self.layers < 0 or (self.mode == "parametric" and self.layers < 1):
            bad(f"layers must be >= 0 (>= 1 in parametric mode), got {self.layers}")
        if self.mode not in MODES:
            bad(f"mode must be one of {MODES}")
        if self.weighting not in WEIGHTINGS:
            bad(f"weighting must be one of {WEIGHTINGS}")
        if not 0.0 <= self.p_drop <= 1.0:
            bad(f"p_drop must lie in [0, 1], got {self.p_drop}")

    def sinkhorn(self) -> SinkhornConfig:
        return SinkhornConfig(lam=self.lam, max_iter=self.max_iter, tol=self.tol)

    def propagation(self) -> PropagationConfig:
        weights = random_weights(self.dim, self.layers, self.seed) if self.mode == "parametric" else None
        return PropagationConfig(self.layers, self.mode, weights, self.weighting)

    def embed(self, g: SceneGraph, prop: Optional[PropagationConfig] = None) -> np.ndarray:
        prop = prop or self.propagation()
        X0 = featurize(g, self.dim, self.seed)
        if prop.mode == "parametric":
            return propagate_parametric(g, X0, prop)
        return propagate_nonparametric(g, X0, prop.layers, prop.weighting)


FIELD_TYPES = {f.name: type(f.default) for f in dataclasses.fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"config {args.config}: expected a JSON object")
        unknown = sorted(set(doc) - set(FIELD_TYPES))
        if unknown:
            raise UsageError(f"config {args.config}: unknown keys {unknown}")
        values.update(doc)
    for name in FIELD_TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    for name, value in values.items():
        kind = FIELD_TYPES[name]
        try:
            if kind is int and (isinstance(value, bool) or float(value) != int(value)):
                raise ValueError
            values[name] = kind(value)
        except (TypeError, ValueError):
            raise UsageError(f"config value {name}={value!r} is not a valid {kind.__name__}") from None
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def echo_config(cfg: RunConfig) -> None:
    print("config: " + json.dumps(dataclasses.asdict(cfg), sort_keys=True), file=sys.stderr)


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
    return buf.getvalue()


def _pair(cfg: RunConfig, a: str, b: str):
    ga, gb = load_graph(a), load_graph(b)
    prop = cfg.propagation()
    Xa, Xb = cfg.embed(ga, prop), cfg.embed(gb, prop)
    M = cost_matrix(Xa, Xb)
    plan = sinkhorn(M, cfg.sinkhorn())
    return ga, gb, M, plan


def _summary(M, plan) -> dict:
    return {
        "distance": max(plan_cost(plan, M), 0.0),
        "iterations": plan.iterations,
        "violation": plan.violation,
        "converged": plan.converged,
    }


def cmd_dist(args, cfg: RunConfig) -> int:
    _, _, M, plan = _pair(cfg, args.graph_a, args.graph_b)
    print(json.dumps(_summary(M, plan)))
    return EXIT_OK


def cmd_plan(args, cfg: RunConfig) -> int:
    ga, gb, M, plan = _pair(cfg, args.graph_a, args.graph_b)
    rows = [[nid, *plan.matrix[i]] for i, nid in enumerate(ga.ids)]
    _write_text(args.output, _csv_text(["", *gb.ids], rows))
    if args.output not in (None, "-"):
        print(json.dumps(_summary(M, plan)))
    return EXIT_OK


def cmd_embed(args, cfg: RunConfig) -> int:
    g = load_graph(args.graph)
    X = cfg.embed(g)
    rows = [[nid, *X[i]] for i, nid in enumerate(g.ids)]
    _write_text(args.output, _csv_text(["id", *(f"x{j}" for j in range(cfg.dim))], rows))
    return EXIT_OK


def cmd_batch_loss(args, cfg: RunConfig) -> int:
    corpus = load_manifest(args.manifest)
    prop = cfg.propagation()
    report = evaluate_corpus(
        corpus,
        lambda g: cfg.embed(g, prop),
        cfg.sinkhorn(),
        LossWeights(cfg.lam1, cfg.lam2),
        L_c=args.lc,
        plus=args.plus,
        all_views=args.all_views,
        ablation=args.ablation,
        jobs=args.jobs,
    )
    doc = report.to_dict()
    doc["variant"] = "plus" if args.plus else "base"
    doc["ablation"] = args.ablation
    _write_text(args.output, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_perturb(args, cfg: RunConfig) -> int:
    g = load_graph(args.graph)
    X = featurize(g, cfg.dim, cfg.seed)
    pcfg = PerturbConfig(cfg.k, cfg.noise, cfg.p_drop, cfg.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.graph).stem
    for i, (variant, _) in enumerate(perturb(g, X, pcfg), start=1):
        path = out / f"{stem}_aug{i}.json"
        dump_graph(variant, path)
        print(path)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    opt = common.add_argument_group("settings (override --config)")
    opt.add_argument("--config", help="JSON file with RunConfig keys")
    opt.add_argument("--lam", type=float, help="entropic coefficient; larger is closer to exact OT")
    opt.add_argument("--lam1", type=float, help="weight of the inter-modal term")
    opt.add_argument("--lam2", type=float, help="weight of the intra-modal term")
    opt.add_argument("--dim", type=int, help="embedding dimension")
    opt.add_argument("--layers", type=int, help="propagation layers")
    opt.add_argument("--mode", choices=MODES)
    opt.add_argument("--weighting", choices=WEIGHTINGS, help="non-parametric neighbor weights")
    opt.add_argument("--tol", type=float, help="marginal tolerance")
    opt.add_argument("--max-iter", dest="max_iter", type=int)
    opt.add_argument("--seed", type=int)
    opt.add_argument("--k", type=int, help="augmented variants per graph")
    opt.add_argument("--noise", type=float, help="embedding jitter scale")
    opt.add_argument("--p-drop", dest="p_drop", type=float, help="attribute drop probability")

    parser = _Parser(prog="sgot", description="Wasserstein distances between scene graphs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dist", parents=[common], help="distance between two graphs")
    p.add_argument("graph_a")
    p.add_argument("graph_b")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("plan", parents=[common], help="write the transport plan as CSV")
    p.add_argument("graph_a")
    p.add_argument("graph_b")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("batch-loss", parents=[common], help="loss report for a corpus manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output")
    p.add_argument("--lc", type=float, default=0.0, help="supervised loss term")
    p.add_argument("--plus", action="store_true", help="add image-side intra-modal pairs")
    p.add_argument("--all-views", action="store_true", help="inter-modal terms for augmented views too")
    p.add_argument("--ablation", choices=ABLATIONS, default="none")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_batch_loss)

    p = sub.add_parser("embed", parents=[common], help="write node embeddings as CSV")
    p.add_argument("graph")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("perturb", parents=[common], help="write augmented variants")
    p.add_argument("graph")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_perturb)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if getattr(args, "lc", None) is not None and not math.isfinite(args.lc):
            raise UsageError(f"--lc must be finite, got {args.lc}")
    except UsageError as exc:
        print(f"sgot: {exc}", file=sys.stderr)
        return EXIT_USAGE
    echo_config(cfg)
    try:
        return args.func(args, cfg)
    except (GraphParseError, GraphValidationError) as exc:
        print(f"sgot: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"sgot: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"sgot: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"sgot: {exc.strerror or exc}: {exc.filename or ''}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
