from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from compat_estimator.config import Settings, load_settings, setup_logging
from compat_estimator.exceptions import (
    CompatEstimatorError,
    ExperimentConfigError,
    InvalidParameterError,
)
from compat_estimator.services.compatibility import (
    read_compatibility,
    skew_compatibility,
    write_compatibility,
)
from compat_estimator.services.estimation import (
    clipped_result,
    dce_estimate,
    dcer_estimate,
    estimation_result_to_json,
    heuristic_compatibility,
    holdout_estimate,
    lce_estimate,
    mce_from_summaries,
    parse_pattern,
)
from compat_estimator.services.experiment import run_experiment
from compat_estimator.services.experiment_config import load_experiment_config
from compat_estimator.services.generator import (
    balanced_alpha,
    generate_graph,
    write_manifest,
)
from compat_estimator.services.graph_core import (
    explicit_matrix,
    load_edge_list,
    load_labels,
    write_edge_list,
    write_labels,
)
from compat_estimator.services.propagation import (
    label_argmax,
    linbp_propagate,
    write_beliefs_csv,
    write_label_assignment,
)
from compat_estimator.services.summarization import (
    backtracking_summaries,
    factorized_summaries,
    nb_walk_counts_dense,
    read_summaries,
    write_summaries,
)
from compat_estimator.types import (
    DegreeFamily,
    EstimationResult,
    EstimatorConfig,
    GeneratorSpec,
    GraphSummaries,
    LabelSet,
    Method,
    NormalizationVariant,
    PropagationConfig,
    SparseGraph,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

FORMATS_EPILOG = """\
file formats:
  edges        one edge per line: 'u<TAB>v[<TAB>weight]', '#' starts a comment
  labels       one label per line: 'node<TAB>class' with class in [0, k)
  H json       {"k": k, "H": [[...], ...]}
  summaries    {"k", "lmax", "variant", "non_backtracking", "raw", "normalized", "zero_rows"}
  beliefs csv  header 'node,score_0,...,score_{k-1}'
  results csv  header 'method,f,trial,macro_accuracy,l2_to_gs,estimate_seconds,propagate_seconds,error'
"""


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {e}") from e


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compat_estimator",
        description="Estimate class compatibilities from sparsely labeled graphs",
        epilog=FORMATS_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", type=str, default=settings.log_level)
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="plant a labeled synthetic graph")
    generate.add_argument("--nodes", type=int, required=True)
    generate.add_argument("--edges", type=int, required=True)
    generate.add_argument("--classes", type=int, required=True)
    skew = generate.add_mutually_exclusive_group(required=True)
    skew.add_argument("--h-skew", type=float)
    skew.add_argument("--h-file", type=Path)
    generate.add_argument("--alpha", type=_float_list, default=None)
    generate.add_argument(
        "--dist", choices=[d.value for d in DegreeFamily], default=DegreeFamily.UNIFORM.value
    )
    generate.add_argument("--powerlaw-coefficient", type=float, default=0.3)
    generate.add_argument("--seed", type=int, default=settings.seed)
    generate.add_argument("--out", type=str, required=True, help="output prefix")

    summarize = commands.add_parser("summarize", help="write path statistics JSON")
    _add_graph_inputs(summarize)
    summarize.add_argument("--lmax", type=int, default=settings.lmax)
    summarize.add_argument("--variant", type=int, choices=(1, 2, 3), default=settings.variant)
    summarize.add_argument(
        "--plain", action="store_true", help="count all walks instead of non-backtracking paths"
    )
    summarize.add_argument(
        "--verify",
        action="store_true",
        help="cross-check against dense path counts on small graphs",
    )
    summarize.add_argument("--seed", type=int, default=settings.seed)
    summarize.add_argument("--out", type=Path, required=True)

    estimate = commands.add_parser("estimate", help="estimate H and write it as JSON")
    estimate.add_argument(
        "--method",
        choices=("mce", "lce", "dce", "dcer", "holdout", "heuristic"),
        required=True,
    )
    estimate.add_argument("--graph", type=Path)
    estimate.add_argument("--seeds", type=Path)
    estimate.add_argument("--classes", type=int)
    estimate.add_argument("--summaries", type=Path)
    estimate.add_argument("--lmax", type=int, default=settings.lmax)
    estimate.add_argument("--lambda", dest="scaling", type=float, default=settings.scaling)
    estimate.add_argument("--variant", type=int, choices=(1, 2, 3), default=settings.variant)
    estimate.add_argument("--restarts", type=int, default=settings.restarts)
    estimate.add_argument("--delta", type=float, default=None)
    estimate.add_argument("--max-gd-iters", type=int, default=500)
    estimate.add_argument("--splits", type=int, default=1)
    estimate.add_argument("--max-evals", type=int, default=200)
    estimate.add_argument(
        "--clip", action="store_true", help="clip the estimate to [0, 1] and re-project"
    )
    estimate.add_argument("--pattern", type=str, default=None)
    estimate.add_argument("--gap", type=float, default=0.1)
    estimate.add_argument("--s", type=float, default=settings.s)
    estimate.add_argument("--iterations", type=int, default=settings.iterations)
    estimate.add_argument("--seed", type=int, default=settings.seed)
    estimate.add_argument("--out", type=Path, required=True)

    propagate = commands.add_parser("propagate", help="label nodes with LinBP")
    _add_graph_inputs(propagate, classes_required=False)
    propagate.add_argument("--h", type=Path, required=True)
    propagate.add_argument("--iterations", type=int, default=settings.iterations)
    propagate.add_argument("--s", type=float, default=settings.s)
    propagate.add_argument("--epsilon", type=float, default=None)
    propagate.add_argument("--converge-tol", type=float, default=None)
    propagate.add_argument("--seed", type=int, default=settings.seed)
    propagate.add_argument("--out", type=str, required=True, help="output prefix")

    experiment = commands.add_parser("experiment", help="run a sweep from a JSON config")
    experiment.add_argument("--config", type=Path, required=True)
    experiment.add_argument("--out", type=Path, required=True)
    experiment.add_argument("--jobs", type=int, default=None)
    experiment.add_argument("--seed", type=int, default=None)
    return parser


def _add_graph_inputs(parser: argparse.ArgumentParser, classes_required: bool = True) -> None:
    parser.add_argument("--graph", type=Path, required=True)
    parser.add_argument("--seeds", type=Path, required=True)
    parser.add_argument("--classes", type=int, required=classes_required)


# ============================================================================
# Subcommands
# ============================================================================


def cmd_generate(args: argparse.Namespace) -> int:
    if args.h_skew is not None:
        H = skew_compatibility(args.classes, args.h_skew)
    else:
        H = read_compatibility(args.h_file)
        if H.k != args.classes:
            raise CompatEstimatorError(
                f"--classes is {args.classes} but {args.h_file} is {H.k}x{H.k}"
            )
    alpha = balanced_alpha(H.k) if args.alpha is None else np.array(args.alpha)
    spec = GeneratorSpec(
        n=args.nodes,
        m=args.edges,
        alpha=alpha,
        h=H,
        dist=DegreeFamily(args.dist),
        powerlaw_coefficient=args.powerlaw_coefficient,
        seed=args.seed,
    )
    generated = generate_graph(spec)
    write_edge_list(generated.graph, f"{args.out}.edges.tsv")
    write_labels(generated.labels, f"{args.out}.labels.tsv")
    write_manifest(spec, generated, f"{args.out}.manifest.json")
    logger.info(
        "Wrote %s.* with n=%d m=%d (%d attempt(s))",
        args.out,
        generated.graph.n,
        generated.graph.m,
        generated.attempts,
    )
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    g = load_edge_list(args.graph)
    seeds = load_labels(args.seeds, args.classes)
    summarize = backtracking_summaries if args.plain else factorized_summaries
    summaries = summarize(g, seeds, args.lmax, NormalizationVariant(args.variant))
    if args.verify:
        _verify_summaries(summaries, g, seeds)
    write_summaries(summaries, args.out)
    return EXIT_OK


def _verify_summaries(summaries: GraphSummaries, g: SparseGraph, seeds: LabelSet) -> None:
    if not summaries.non_backtracking:
        logger.info("Dense verification only applies to non-backtracking summaries")
        return
    settings = load_settings()
    explicit = explicit_matrix(seeds, g.n)
    worst = 0.0
    for length in range(1, summaries.lmax + 1):
        dense = nb_walk_counts_dense(g, length, cap=settings.dense_cap)
        deviation = np.abs(explicit.T @ dense @ explicit - summaries.raw[length - 1])
        worst = max(worst, float(deviation.max()))
    logger.info("Largest deviation from dense path counts: %.3g", worst)


def _estimator_config(args: argparse.Namespace) -> EstimatorConfig:
    return EstimatorConfig(
        lmax=args.lmax,
        scaling=args.scaling,
        restarts=args.restarts,
        delta=args.delta,
        max_gd_iters=args.max_gd_iters,
        holdout_splits=args.splits,
        holdout_max_evals=args.max_evals,
        variant=NormalizationVariant(args.variant),
        clip=args.clip,
    )


def _run_estimator(args: argparse.Namespace, cfg: EstimatorConfig) -> EstimationResult:
    summary_methods = {"mce", "dce", "dcer"}
    if args.method == "heuristic":
        if args.pattern is None:
            raise CompatEstimatorError("--method heuristic requires --pattern")
        start = time.monotonic()
        H = heuristic_compatibility(parse_pattern(args.pattern), args.gap)
        return EstimationResult(
            h_hat=H,
            energy=0.0,
            restarts_used=1,
            wall_time=time.monotonic() - start,
            method=_method_tag(args.method),
            hyperparameters={"pattern": args.pattern, "gap": args.gap},
        )

    if args.summaries is not None:
        if args.method not in summary_methods:
            raise CompatEstimatorError(
                f"--method {args.method} needs --graph and --seeds, not --summaries"
            )
        summaries = read_summaries(args.summaries)
        if args.method == "mce":
            return mce_from_summaries(summaries)
        if summaries.lmax < cfg.lmax:
            raise CompatEstimatorError(
                f"{args.summaries} holds {summaries.lmax} path lengths, --lmax is {cfg.lmax}"
            )
        summaries = _truncate(summaries, cfg.lmax)
        if args.method == "dce":
            return dce_estimate(summaries, cfg)
        return dcer_estimate(summaries, cfg, seed=args.seed)

    if args.graph is None or args.seeds is None or args.classes is None:
        raise CompatEstimatorError("give --graph, --seeds and --classes, or --summaries")
    g = load_edge_list(args.graph)
    seeds = load_labels(args.seeds, args.classes)
    if args.method == "lce":
        return lce_estimate(g, seeds)
    if args.method == "holdout":
        prop_cfg = PropagationConfig(s=args.s, iterations=args.iterations)
        return holdout_estimate(g, seeds, cfg, prop_cfg, seed=args.seed)
    # summarization is counted in the estimator's wall time
    start = time.monotonic()
    lmax = 1 if args.method == "mce" else cfg.lmax
    summaries = factorized_summaries(g, seeds, lmax, cfg.variant)
    if args.method == "mce":
        result = mce_from_summaries(summaries)
    elif args.method == "dce":
        result = dce_estimate(summaries, cfg)
    else:
        result = dcer_estimate(summaries, cfg, seed=args.seed)
    return replace(result, wall_time=time.monotonic() - start)


def _truncate(summaries: GraphSummaries, lmax: int) -> GraphSummaries:
    return replace(
        summaries,
        lmax=lmax,
        raw=summaries.raw[:lmax],
        normalized=summaries.normalized[:lmax],
        zero_row_mask=summaries.zero_row_mask[:lmax],
    )


def _method_tag(name: str) -> Method:
    lookup = {method.value.lower(): method for method in Method}
    return lookup[name]


def cmd_estimate(args: argparse.Namespace) -> int:
    cfg = _estimator_config(args)
    result = clipped_result(_run_estimator(args, cfg), cfg)
    write_compatibility(result.h_hat, args.out)
    metadata_path = args.out.with_suffix(".meta.json")
    with open(metadata_path, "w", encoding="utf-8") as handle:
        json.dump(estimation_result_to_json(result), handle, indent=2)
        handle.write("\n")
    print(f"energy\t{result.energy!r}")
    print(f"seconds\t{result.wall_time:.6f}")
    return EXIT_OK


def cmd_propagate(args: argparse.Namespace) -> int:
    H = read_compatibility(args.h)
    if args.classes is not None and args.classes != H.k:
        raise CompatEstimatorError(f"--classes is {args.classes} but {args.h} is {H.k}x{H.k}")
    g = load_edge_list(args.graph)
    seeds = load_labels(args.seeds, H.k)
    cfg = PropagationConfig(
        s=args.s,
        iterations=args.iterations,
        epsilon_override=args.epsilon,
        converge_tol=args.converge_tol,
    )
    start = time.monotonic()
    beliefs = linbp_propagate(g, seeds, H, cfg)
    elapsed = time.monotonic() - start
    write_label_assignment(label_argmax(beliefs), f"{args.out}.labels.tsv")
    write_beliefs_csv(beliefs, f"{args.out}.beliefs.csv")
    print(f"seconds\t{elapsed:.6f}")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config)
    # flag, then config file, then COMPAT_JOBS
    jobs = args.jobs if args.jobs is not None else max(cfg.jobs, load_settings().jobs)
    cfg = replace(cfg, jobs=jobs)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    records = run_experiment(cfg, args.out)
    logger.info("Wrote %d rows to %s", len(records), args.out)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "summarize": cmd_summarize,
    "estimate": cmd_estimate,
    "propagate": cmd_propagate,
    "experiment": cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    settings = load_settings()
    parser = build_parser(settings)
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        return COMMANDS[args.command](args)
    except ExperimentConfigError as e:
        for problem in e.errors:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"error: {e.filename}: file not found", file=sys.stderr)
        return EXIT_USAGE
    except InvalidParameterError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CompatEstimatorError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
