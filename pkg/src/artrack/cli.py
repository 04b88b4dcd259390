"""Command line entry point: ``artrack <subcommand>``.

Exit codes: 0 success, 1 a verification failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .gradsuite import CASES, DEFAULT_SEEDS, TOLERANCE, run_suite
from .metrics import (ExpressionEval, MOTFormatError, aggregate_report, evaluate_expression,
                      read_mot_csv, report_json, write_mot_csv, write_summary_csv)
from .spectral import SPECTRAL_TOLERANCE, verify_spectra
from .synth import SceneSpec, generate_scene, make_expressions, referent_records
from .train import TrainConfig, load_config, save_model, train_toy

log = logging.getLogger("artrack")

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad user input: missing files, malformed configs or CSVs."""


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def cmd_gradcheck(args) -> int:
    seeds = tuple(range(args.seeds)) if args.seeds else DEFAULT_SEEDS
    if args.corrupt and args.corrupt not in T.GRADIENT_OPS:
        raise InputError(f"unknown op {args.corrupt!r}; choose from {sorted(T.GRADIENT_OPS)}")
    try:
        if args.corrupt:
            with T.inject_gradient_fault(args.corrupt, args.factor):
                results = run_suite(seeds, args.case or None)
        else:
            results = run_suite(seeds, args.case or None)
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from None
    failed = 0
    for name in dict.fromkeys(r.name for r in results):
        rows = [r for r in results if r.name == name]
        worst = max(rows, key=lambda r: r.max_rel_error)
        ok = all(r.passed(args.tol) for r in rows)
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:24s} max rel err {worst.max_rel_error:.2e}"
              f"  (seed {worst.seed}, {worst.worst[0]}{list(worst.worst[1])})")
    print(f"{len(results) // len(seeds) - failed}/{len(results) // len(seeds)} cases passed "
          f"over seeds {list(seeds)} at tol {args.tol:g}")
    return EXIT_OK if failed == 0 else EXIT_FAILED


def cmd_spectra_test(args) -> int:
    errors = verify_spectra(args.trials, args.seed)
    ok = True
    for name, err in errors.items():
        passed = err < args.tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:20s} max abs err {err:.3e}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_simulate(args) -> int:
    scene = generate_scene(SceneSpec(args.objects, args.frames, args.seed))
    rng = np.random.default_rng(args.seed)
    expressions = make_expressions(scene, args.expressions, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = scene.to_dict()
    doc["expressions"] = [{"id": e.expression_id, "predicate": e.predicate, "text": e.text(),
                           "referents": e.referents(scene)} for e in expressions]
    _write_json(out / "scene.json", doc)
    write_mot_csv(out / "all_objects.csv", scene.records)
    for e in expressions:
        d = out / e.expression_id
        d.mkdir(exist_ok=True)
        write_mot_csv(d / "gt.csv", referent_records(scene, e))
    print(f"wrote {len(expressions)} expressions over {args.frames} frames to {out}")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else TrainConfig()
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        raise InputError(f"cannot load config {args.config}: {exc}") from None
    if args.seed is not None:
        cfg.seed = args.seed
    scene = generate_scene(SceneSpec(cfg.n_objects, cfg.n_frames, cfg.seed))
    result = train_toy(cfg, scene)
    expr = result.expression
    out = Path(args.out)
    d = out / expr.expression_id
    d.mkdir(parents=True, exist_ok=True)
    gt = referent_records(scene, expr)
    write_mot_csv(d / "gt.csv", gt)
    write_mot_csv(d / "pred.csv", result.predictions)
    report = evaluate_expression(ExpressionEval(expr.expression_id, gt, result.predictions))
    save_model(result.model, out / "params.json")
    _write_json(out / "config.json", cfg.to_dict())
    summary = result.summary()
    summary["metrics"] = report.metrics()
    summary["loss_trace"] = [round(v, 10) for v in result.loss_trace]
    _write_json(out / "train_report.json", summary)
    print(f"{expr.expression_id} '{expr.text()}': loss {summary['initial_loss']:.4f} -> "
          f"{summary['final_loss']:.4f}, referring accuracy {result.referring_accuracy:.3f}, "
          f"chi pos {result.mean_positive_similarity:.3f} / neg {result.mean_negative_similarity:.3f}")
    return EXIT_OK


def _expression_dirs(root: Path) -> list[Path]:
    if (root / "gt.csv").is_file():
        return [root]
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "gt.csv").is_file())
    if not dirs:
        raise InputError(f"no gt.csv found in {root} or its subdirectories")
    return dirs


def cmd_eval(args) -> int:
    root = Path(args.root)
    if not root.is_dir():
        raise InputError(f"{root} is not a directory")
    reports = []
    for d in _expression_dirs(root):
        pred = d / "pred.csv"
        if not pred.is_file():
            raise InputError(f"missing predictions {pred}")
        name = d.name if d != root else "expression"
        reports.append(evaluate_expression(ExpressionEval(name, read_mot_csv(d / "gt.csv"), read_mot_csv(pred))))
    agg = aggregate_report(reports)
    out = Path(args.out) if args.out else root
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(agg), encoding="utf-8", newline="\n")
    write_summary_csv(out / "summary.csv", agg)
    print("  ".join(f"{k} {v:.4f}" for k, v in agg.metrics().items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=0, help=f"number of seeds (default {len(DEFAULT_SEEDS)})")
    p.add_argument("--case", action="append", help=f"restrict to a case; one of {', '.join(CASES)}")
    p.add_argument("--tol", type=float, default=TOLERANCE)
    p.add_argument("--corrupt", metavar="OP", help="scale the backward rule of OP to test the checker")
    p.add_argument("--factor", type=float, default=1.5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("spectra-test", help="FFT vs direct DFT, round trip, convolution theorem")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=SPECTRAL_TOLERANCE)
    p.set_defaults(func=cmd_spectra_test)

    p = sub.add_parser("simulate", help="synthetic scene and per-expression ground truth CSVs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objects", type=int, default=6)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--expressions", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-toy", help="train the toy referring tracker from a JSON config")
    p.add_argument("--config", help="JSON config (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", help="score gt.csv/pred.csv pairs under ROOT")
    p.add_argument("root")
    p.add_argument("--out", help="output directory (default ROOT)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, MOTFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
