"""Command-line entry point: ``splesp {generate,train,evaluate,compare,verify-minimizers}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .detector import load_checkpoint
from .errors import ContractError, TrainingDivergenceError
from .experiment import (
    evaluate_oracle, evaluate_params, find_checkpoint, load_config, obtain_dataset, read_run_config,
    run_comparison, run_generate, run_train, write_run_header,
)
from .metrics import COMPARISON_COLUMNS
from .spl_core import verify_minimizers

log = logging.getLogger("splesp")


def _common(p: argparse.ArgumentParser, mode=False, out_required=True) -> None:
    p.add_argument("--config", metavar="PATH", help="INI experiment config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, metavar="N", help="override the training seed")
    if mode:
        p.add_argument("--mode", metavar="NAME", help="training mode, e.g. AS, ES, HEM, SPL-ESP-BC")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splesp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write the train/test dataset files")
    _common(p)
    p.add_argument("--data-seed", type=int, metavar="N", help="override the dataset seed")

    p = sub.add_parser("train", help="train one mode; writes logs, checkpoints and provenance")
    _common(p, mode=True)
    p.add_argument("--data", metavar="DIR", help="dataset directory from 'generate' (else generated)")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or run directory on the test split")
    _common(p, mode=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--run", metavar="DIR", help="run directory, or a checkpoint file")
    src.add_argument("--oracle", action="store_true", help="evaluate ground-truth-derived predictions")
    p.add_argument("--data", metavar="DIR", help="dataset directory (else regenerated from the config)")

    p = sub.add_parser("compare", help="train and evaluate several modes over several seeds")
    _common(p)
    p.add_argument("--modes", metavar="LIST", help="comma-separated modes (default from config)")
    p.add_argument("--seeds", metavar="LIST", help="comma-separated seeds (default from config)")
    p.add_argument("--jobs", type=int, metavar="N", help="parallel worker processes")

    p = sub.add_parser("verify-minimizers", help="check closed-form weights against exhaustive search")
    p.add_argument("--out", metavar="DIR", help="also write the report as JSON")
    p.add_argument("--grid-points", type=int, default=100_001, metavar="N")
    return parser


def _config(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, mode=getattr(args, "mode", None))


def cmd_generate(args) -> int:
    cfg = _config(args)
    if args.data_seed is not None:
        cfg = replace(cfg, dataset=replace(cfg.dataset, seed=args.data_seed))
    summary = run_generate(cfg, args.out)
    print(json.dumps(summary, indent=1))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = obtain_dataset(cfg, args.data)
    res = run_train(cfg, args.out, ds)
    last = res.log[-1]
    print(f"trained {cfg.train.mode.value} seed {cfg.train.seed}: {len(res.log)} epochs, final loss {last.mean_loss:.4f}")
    print(f"run directory: {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    if args.oracle:
        cfg = _config(args)
        ds = obtain_dataset(cfg, args.data)
        report = evaluate_oracle(cfg, ds)
    else:
        ckpt = find_checkpoint(args.run)
        run_dir = ckpt.parent
        if args.config is None and (run_dir / "config.ini").is_file():
            cfg = read_run_config(run_dir)
        else:
            cfg = load_config(args.config)
        ds = obtain_dataset(cfg, args.data)
        params = load_checkpoint(ckpt)[0]
        report = evaluate_params(params, cfg, ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.oracle:
        write_run_header(out, cfg, {"evaluated": "oracle"})
    report.save(out / "eval.json")
    dr = " ".join(f"d{k}={v:.3f}" for k, v in report.detection_rate.items())
    print(f"ap50={report.ap50:.4f} ap75={report.ap75:.4f} ap={report.ap:.4f} {dr} "
          f"false_detection_rate={report.false_detection_rate:.4f}")
    return 0


def _csv(text, cast):
    if text is None:
        return None
    items = [x.strip() for x in text.split(",") if x.strip()]
    if not items:
        raise ContractError("empty list")
    try:
        return [cast(x) for x in items]
    except ValueError as exc:
        raise ContractError(f"cannot parse list {text!r}") from exc


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    seeds = _csv(args.seeds, int)
    if seeds is None and args.seed is not None:
        seeds = [args.seed]
    rows, _ = run_comparison(cfg, args.out, _csv(args.modes, str), seeds, args.jobs)
    print("\t".join(COMPARISON_COLUMNS))
    for r in rows:
        print("\t".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in COMPARISON_COLUMNS))
    return 0


def cmd_verify_minimizers(args, closed_forms=None) -> int:
    checks = verify_minimizers(closed_forms, grid_points=args.grid_points)
    ok = True
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        ok &= c.passed
        print(f"{status} {c.kind.value:12s} cases={c.cases} max_argmin_deviation={c.max_argmin_deviation:.3e} "
              f"max_objective_excess={c.max_objective_excess:.3e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report = [
            {"kind": c.kind.value, "cases": c.cases, "max_argmin_deviation": c.max_argmin_deviation,
             "max_objective_excess": c.max_objective_excess, "passed": c.passed}
            for c in checks
        ]
        (out / "minimizers.json").write_text(json.dumps(report, indent=1))
    return 0 if ok else 1


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "verify-minimizers": cmd_verify_minimizers,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except TrainingDivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        if exc.record:
            print(f"diagnostic: {json.dumps(exc.record, default=str)}", file=sys.stderr)
        return 3
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
