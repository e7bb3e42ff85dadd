"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data/validation error. stdout
carries line-delimited JSON summaries; diagnostics go to stderr. Nothing
is written outside --output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DataError
from .features import (
    build_oasm,
    build_sentence_length,
    build_sentence_position,
    build_word_position,
    oasm_sigma_grid,
    sweep_oasm_sigma,
)
from .matrixio import load_manifest, save_matrix
from .pipeline import AnalysisConfig, SplitSpec, build_plan, run_analysis
from .ridge import BandedSearchConfig, banded_search
from .splits import shuffle_plan
from .synthgen import preset, write_dataset

logger = logging.getLogger("encodebench")

PRESETS = ("shuffle-demo", "subsumption-demo", "pereira-exp1", "pereira-exp2",
           "fedorenko", "blank")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _resolve_threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("ENCODEBENCH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip() != ""]


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--output", type=Path, default=None)

    parser = _Parser(prog="encodebench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="write a synthetic dataset (manifest + matrices)")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--units", type=int, default=None)
    p.add_argument("--participants", type=int, default=None)
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--signal-scale", type=float, default=None)
    p.add_argument("--autocorr-sigma", type=float, default=None)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("features", parents=[common],
                       help="build a derived feature space matrix")
    p.add_argument("--kind", required=True, choices=("oasm", "sp", "sl", "wp"))
    p.add_argument("--manifest", type=Path, default=None,
                   help="take block ids from this manifest (oasm)")
    p.add_argument("--blocks", type=_int_list, default=None,
                   help="comma-separated per-sample block ids (oasm)")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--passage-lengths", type=_int_list, default=None)
    p.add_argument("--word-counts", type=_int_list, default=None)
    p.add_argument("--sentences", type=int, default=None)
    p.set_defaults(handler=cmd_features)

    p = sub.add_parser("split", parents=[common],
                       help="emit a fold plan as JSON")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--scheme", required=True,
                   choices=("pereira", "fedorenko", "blank", "grouped"))
    p.add_argument("--mode", default="contiguous",
                   choices=("contiguous", "shuffled"))
    p.add_argument("--n-outer", type=int, default=5)
    p.add_argument("--n-inner", type=int, default=4)
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("fit", parents=[common],
                       help="banded ridge fit of selected feature spaces")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--spaces", default=None,
                   help="comma-separated feature-space names (default: all)")
    p.add_argument("--scheme", required=True,
                   choices=("pereira", "fedorenko", "blank", "grouped"))
    p.add_argument("--mode", default="contiguous",
                   choices=("contiguous", "shuffled"))
    p.add_argument("--n-outer", type=int, default=5)
    p.add_argument("--n-inner", type=int, default=4)
    p.add_argument("--oasm-sigma", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--min-improvement", type=float, default=1e-4)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("oasm-sweep", parents=[common],
                       help="sweep the OASM smoothing width")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--scheme", required=True,
                   choices=("pereira", "fedorenko", "blank", "grouped"))
    p.add_argument("--mode", default="contiguous",
                   choices=("contiguous", "shuffled"))
    p.add_argument("--n-outer", type=int, default=5)
    p.add_argument("--n-inner", type=int, default=4)
    p.set_defaults(handler=cmd_oasm_sweep)

    p = sub.add_parser("compare", parents=[common],
                       help="run a full analysis config and write a report")
    p.add_argument("--config", type=Path, required=True)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("report", parents=[common],
                       help="print summary lines from an existing report")
    p.add_argument("--input", type=Path, required=True)
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    resolved = {k: str(v) for k, v in vars(args).items() if k != "handler"}
    logger.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
    try:
        return args.handler(args)
    except DataError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


def entrypoint() -> None:
    sys.exit(main())


def _require_output(args) -> Path:
    if args.output is None:
        raise DataError("--output is required for this command")
    return args.output


def cmd_synth(args) -> int:
    out = _require_output(args)
    spec, extras = preset(
        args.preset, seed=args.seed, n_units=args.units,
        n_participants=args.participants, noise_scale=args.noise_scale,
        signal_scale=args.signal_scale, autocorr_sigma=args.autocorr_sigma,
    )
    manifest = write_dataset(spec, out, dataset_name=args.preset,
                             extra_features=extras)
    _emit({"event": "synth", "preset": args.preset, "seed": args.seed,
           "manifest": str(manifest), "n_samples": spec.n_samples,
           "n_units": spec.n_units})
    return 0


def cmd_features(args) -> int:
    out = _require_output(args)
    if args.kind == "oasm":
        if args.sigma is None:
            raise DataError("oasm needs --sigma")
        if args.manifest is not None:
            blocks = load_manifest(args.manifest).recording.block_ids
        elif args.blocks is not None:
            blocks = np.asarray(args.blocks)
        else:
            raise DataError("oasm needs --manifest or --blocks")
        fs = build_oasm(len(blocks), blocks, args.sigma)
    elif args.kind == "sp":
        if not args.passage_lengths:
            raise DataError("sp needs --passage-lengths")
        fs = build_sentence_position(args.passage_lengths)
    elif args.kind == "sl":
        if not args.word_counts:
            raise DataError("sl needs --word-counts")
        fs = build_sentence_length(args.word_counts)
    else:
        if not args.sentences:
            raise DataError("wp needs --sentences")
        fs = build_word_position(args.sentences)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(out, fs.data)
    _emit({"event": "features", "kind": args.kind, "path": str(out),
           "rows": fs.n_samples, "cols": fs.n_dims})
    return 0


def _plan_from_args(args):
    dataset = load_manifest(args.manifest)
    split = SplitSpec(scheme=args.scheme, mode=args.mode,
                      shuffle_seed=args.seed, n_outer=args.n_outer,
                      n_inner=args.n_inner)
    plan = build_plan(split, dataset.recording)
    if args.mode == "shuffled":
        plan = shuffle_plan(plan, args.seed)
    return dataset, plan


def cmd_split(args) -> int:
    out = _require_output(args)
    _, plan = _plan_from_args(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(plan.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    _emit({"event": "split", "scheme": plan.scheme, "mode": plan.mode,
           "n_outer": len(plan.outer_folds),
           "n_inner": len(plan.outer_folds[0].inner_folds),
           "path": str(out)})
    return 0


def cmd_fit(args) -> int:
    out = _require_output(args)
    dataset, plan = _plan_from_args(args)
    features = list(dataset.features)
    if args.oasm_sigma is not None:
        features.append(build_oasm(dataset.recording.n_samples,
                                   dataset.recording.block_ids,
                                   args.oasm_sigma))
    if args.spaces:
        wanted = [name.strip() for name in args.spaces.split(",")]
        by_name = {fs.name: fs for fs in features}
        missing = [w for w in wanted if w not in by_name]
        if missing:
            raise DataError(f"unknown feature spaces: {missing}")
        features = [by_name[w] for w in wanted]
    if not features:
        raise DataError("no feature spaces selected")

    cfg = BandedSearchConfig(max_iters=args.max_iters, patience=args.patience,
                             min_improvement=args.min_improvement,
                             seed=args.seed)
    fit = banded_search(features, dataset.recording.responses, plan,
                        search_cfg=cfg, threads=_resolve_threads(args.threads))
    fit.save(out)
    r2 = fit.test_r2(dataset.recording.responses)
    _emit({"event": "fit", "bands": fit.band_names,
           "mean_r2_clipped": float(np.maximum(r2, 0).mean()),
           "mean_r2": float(r2.mean()), "output": str(out)})
    return 0


def cmd_oasm_sweep(args) -> int:
    out = _require_output(args)
    dataset, plan = _plan_from_args(args)
    result = sweep_oasm_sigma(dataset.recording, dataset.recording.block_ids,
                              plan)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "best_sigma": result.best_sigma,
        "grid": oasm_sigma_grid().tolist(),
        "scores": result.scores.tolist(),
    }
    with open(out / "sweep.json", "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _emit({"event": "oasm-sweep", "best_sigma": result.best_sigma,
           "output": str(out / "sweep.json")})
    return 0


def cmd_compare(args) -> int:
    config = AnalysisConfig.from_file(args.config)
    target = args.output or config.output
    if target is None:
        raise DataError("no output directory: pass --output or set it in the config")
    report = run_analysis(config, threads=_resolve_threads(args.threads),
                          output_dir=target)
    summary = report.summary_dict()
    for mode, families in summary["modes"].items():
        for fam_name, doc in families.items():
            line = {"event": "compare", "mode": mode, "family": fam_name,
                    "subsets": {k: v["mean_r2"] for k, v in doc["subsets"].items()}}
            if "omega" in doc:
                line["omega"] = doc["omega"]["mean"]
            if "phi" in doc:
                line["phi"] = doc["phi"]["mean"]
            _emit(line)
    _emit({"event": "compare-done", "output": str(target)})
    return 0


def cmd_report(args) -> int:
    path = args.input / "report.json"
    if not path.exists():
        raise DataError(f"no report.json under {args.input}")
    doc = json.loads(path.read_text())
    _emit({"event": "report", "dataset": doc["dataset"]})
    for mode, families in doc["modes"].items():
        for fam_name, fam_doc in families.items():
            _emit({"event": "report-family", "mode": mode, "family": fam_name,
                   "subsets": {k: v["mean_r2"]
                               for k, v in fam_doc["subsets"].items()},
                   "mean_r2_corrected": fam_doc["mean_r2_corrected"]})
    return 0
