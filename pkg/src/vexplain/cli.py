"""Command-line front end: rank features, compute bounds, verify queries,
explain single inputs, and score whole datasets.

All subcommands are deterministic given their flags and --seed. Diagnostics
go to stderr and are controlled by the VERIX_LOG environment variable
(quiet, info, or trace). Exit codes: 0 success, 1 error, 2 epsilon-robust
input (explain only).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import detect as detect_mod
from .bounds import crown_bounds, ibp_bounds, perturbation_box
from .explain import explain, result_to_json, write_pgm_mask
from .model import (
    DatasetError,
    ModelError,
    infer,
    load_dataset_file,
    load_model_file,
)
from .traversal import ORDER_METHODS, compute_traversal
from .verifier import (
    UNSAT,
    OracleStats,
    PerturbationSpec,
    Query,
    confidence_ranking,
    solve,
)

log = logging.getLogger("vexplain")

_LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "trace": logging.DEBUG}


def _configure_logging() -> None:
    wanted = os.environ.get("VERIX_LOG", "quiet")
    level = _LOG_LEVELS.get(wanted, logging.ERROR)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(name)s: %(message)s")
    log.setLevel(level)


class _Parser(argparse.ArgumentParser):
    # spec'd exit codes: usage problems are errors (1), not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one explanation run."""

    model_path: str
    data_path: str | None
    row: int | None
    inline_input: str | None
    epsilon: float
    order_method: str
    search: str
    confidence_ranking: bool
    min_box_width: float | None
    max_nodes: int
    delta: float
    out: str | None
    mask_out: str | None
    mask_width: int | None
    mask_height: int | None
    seed: int
    jobs: int

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.order_method not in ORDER_METHODS:
            raise ValueError(f"unknown order method {self.order_method!r}")
        if self.search not in ("sequential", "binary", "quickxplain"):
            raise ValueError(f"unknown search method {self.search!r}")
        if not os.path.exists(self.model_path):
            raise FileNotFoundError(self.model_path)
        if self.data_path is not None and not os.path.exists(self.data_path):
            raise FileNotFoundError(self.data_path)
        if (self.data_path is None) == (self.inline_input is None):
            raise ValueError("provide exactly one of --data/--row or --input")
        if self.mask_out is not None and (
            self.mask_width is None or self.mask_height is None
        ):
            raise ValueError("--mask-out needs --mask-width and --mask-height")


def _spec_from_args(args) -> PerturbationSpec:
    return PerturbationSpec(
        epsilon=args.epsilon,
        delta=getattr(args, "delta", 0.0),
        min_box_width=args.min_box_width,
        max_nodes=args.max_nodes,
    )


def _parse_inline(text: str) -> np.ndarray:
    try:
        return np.array([float(f) for f in text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"unparsable inline input: {exc}") from exc


def _load_input(args, network) -> np.ndarray:
    if getattr(args, "input", None) is not None:
        x = _parse_inline(args.input)
        if x.shape != (network.input_dim,):
            raise DatasetError(
                f"inline input has {x.shape[0]} features, expected {network.input_dim}"
            )
        return x
    if getattr(args, "data", None) is None:
        raise DatasetError("provide exactly one of --data/--row or --input")
    samples = load_dataset_file(args.data, network.input_dim)
    if not 0 <= args.row < len(samples):
        raise DatasetError(f"row {args.row} out of range (dataset has {len(samples)})")
    return samples[args.row].features


def _parse_features(text: str | None, m: int) -> list[int]:
    if text is None or text.strip() == "":
        return list(range(1, m + 1))
    out = []
    for piece in text.split(","):
        i = int(piece)
        if not 1 <= i <= m:
            raise ValueError(f"feature index {i} out of range 1..{m}")
        out.append(i)
    return out


def _emit(doc: dict, out_path: str | None) -> None:
    text = json.dumps(doc) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_explain(args) -> int:
    config = RunConfig(
        model_path=args.model,
        data_path=args.data,
        row=args.row,
        inline_input=args.input,
        epsilon=args.epsilon,
        order_method=args.order,
        search=args.search,
        confidence_ranking=args.confidence_ranking == "on",
        min_box_width=args.min_box_width,
        max_nodes=args.max_nodes,
        delta=args.delta,
        out=args.out,
        mask_out=args.mask_out,
        mask_width=args.mask_width,
        mask_height=args.mask_height,
        seed=args.seed,
        jobs=args.jobs,
    )
    network = load_model_file(config.model_path)
    x = _load_input(args, network)
    spec = _spec_from_args(args)
    traversal = compute_traversal(
        network, x, spec.epsilon, config.order_method, jobs=config.jobs
    )
    log.info("traversal order ready (%s)", traversal.method)
    result = explain(
        network, x, traversal, spec,
        search=config.search,
        confidence_ranking=config.confidence_ranking,
    )
    log.info(
        "explanation size %d of %d features, %d oracle calls",
        len(result.explanation), network.input_dim, result.stats.checkvalid_calls,
    )
    _emit(result_to_json(result), config.out)
    if config.mask_out:
        if config.mask_width * config.mask_height != network.input_dim:
            raise ValueError("mask dimensions do not cover the feature count")
        with open(config.mask_out, "w", encoding="utf-8") as fh:
            write_pgm_mask(
                result.explanation, config.mask_width, config.mask_height, fh
            )
    return 2 if result.robust else 0


def cmd_rank(args) -> int:
    network = load_model_file(args.model)
    x = _load_input(args, network)
    traversal = compute_traversal(network, x, args.epsilon, args.order, jobs=args.jobs)
    _emit(
        {
            "method": traversal.method,
            "order": list(traversal.order),
            "scores": list(traversal.scores),
        },
        args.out,
    )
    return 0


def cmd_bounds(args) -> int:
    network = load_model_file(args.model)
    x = _load_input(args, network)
    free = _parse_features(args.features, network.input_dim)
    box = perturbation_box(network, x, free, args.epsilon)
    out = ibp_bounds(network, box) if args.method == "ibp" else crown_bounds(network, box)
    _emit(
        {
            "method": args.method,
            "epsilon": args.epsilon,
            "lower": [float(v) for v in out.lower],
            "upper": [float(v) for v in out.upper],
        },
        args.out,
    )
    return 0


def cmd_verify(args) -> int:
    network = load_model_file(args.model)
    x = _load_input(args, network)
    free = frozenset(_parse_features(args.features, network.input_dim))
    spec = _spec_from_args(args)
    logits = infer(network, x)
    c = logits.predicted
    if args.target_class is not None:
        challengers = [args.target_class]
    else:
        challengers = confidence_ranking(logits)
    stats = OracleStats()
    verdict, witness, nodes = UNSAT, None, 0
    reported_class = None
    for j in challengers:
        outcome = solve(Query(network=network, base=x, free=free, target_pair=(c, j)), spec)
        stats.record_solve(j, outcome.verdict)
        nodes += outcome.nodes_expanded
        log.debug("class %d: %s (%d nodes)", j, outcome.verdict, outcome.nodes_expanded)
        if outcome.verdict != UNSAT:
            verdict, witness, reported_class = outcome.verdict, outcome.witness, j
            break
    _emit(
        {
            "verdict": verdict,
            "predicted_class": c,
            "challenger_class": reported_class,
            "witness": None if witness is None else [float(v) for v in witness],
            "nodes_expanded": nodes,
            "solve_calls": stats.solve_calls,
        },
        args.out,
    )
    return 0


def cmd_detect(args) -> int:
    network = load_model_file(args.model)
    samples = load_dataset_file(args.data, network.input_dim)
    if args.limit is not None:
        samples = samples[: args.limit]
    spec = _spec_from_args(args)
    scores = detect_mod.score_dataset(
        network,
        samples,
        spec,
        order_method=args.order,
        search_method=args.search,
        confidence_ranking=args.confidence_ranking == "on",
        jobs=args.jobs,
    )
    if args.csv_out:
        with open(args.csv_out, "w", encoding="utf-8") as fh:
            for s in scores:
                if s.error is not None:
                    continue
                correct = "" if s.correct is None else int(s.correct)
                fh.write(
                    f"{s.sample_id},{s.predicted},{correct},"
                    f"{s.max_confidence},{s.explanation_size},{int(s.robust)}\n"
                )
    summary = detect_mod.detection_summary(
        scores, k=args.k, train_frac=args.train_frac, seed=args.seed
    )
    _emit(summary, args.out)
    return 0


def _add_common(p: argparse.ArgumentParser, with_input=True) -> None:
    p.add_argument("--model", required=True, help="JSON model file")
    if with_input:
        p.add_argument("--data", help="CSV dataset file")
        p.add_argument("--row", type=int, default=0, help="row index into --data")
        p.add_argument("--input", help="inline comma-separated feature values")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--min-box-width", type=float, default=None, dest="min_box_width")
    p.add_argument("--max-nodes", type=int, default=100_000, dest="max_nodes")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vexplain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", parents=[], help="compute a verified explanation")
    _add_common(p)
    p.add_argument("--order", choices=ORDER_METHODS, default="bound-crown")
    p.add_argument(
        "--search", choices=("sequential", "binary", "quickxplain"), default="binary"
    )
    p.add_argument("--confidence-ranking", choices=("on", "off"), default="on",
                   dest="confidence_ranking")
    p.add_argument("--mask-out", dest="mask_out", help="write a P2 PGM mask here")
    p.add_argument("--mask-width", type=int, dest="mask_width")
    p.add_argument("--mask-height", type=int, dest="mask_height")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("rank", help="print the feature traversal order")
    _add_common(p)
    p.add_argument("--order", choices=ORDER_METHODS, default="bound-crown")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("bounds", help="print output bounds over a perturbation box")
    _add_common(p)
    p.add_argument("--method", choices=("ibp", "crown"), default="crown")
    p.add_argument("--features", help="free features, e.g. 1,4,7 (default: all)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="decide one prediction-invariance query")
    _add_common(p)
    p.add_argument("--features", help="free features, e.g. 1,4,7 (default: all)")
    p.add_argument("--target-class", type=int, default=None, dest="target_class")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("detect", help="score a dataset and summarize detection")
    _add_common(p, with_input=False)
    p.add_argument("--data", required=True, help="CSV dataset file (labeled rows)")
    p.add_argument("--order", choices=ORDER_METHODS, default="bound-crown")
    p.add_argument(
        "--search", choices=("sequential", "binary", "quickxplain"), default="binary"
    )
    p.add_argument("--confidence-ranking", choices=("on", "off"), default="on",
                   dest="confidence_ranking")
    p.add_argument("--k", type=int, default=5, help="KNN neighbour count")
    p.add_argument("--train-frac", type=float, default=0.7, dest="train_frac")
    p.add_argument("--csv-out", dest="csv_out", help="per-sample CSV output path")
    p.add_argument("--limit", type=int, default=None, help="score only the first N rows")
    p.set_defaults(func=cmd_detect)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except (ModelError, DatasetError, ValueError, IndexError, OSError) as exc:
        print(f"vexplain: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
