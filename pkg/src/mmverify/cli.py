"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from mmverify.config import describe, load_config
from mmverify.errors import ConfigError, DatasetError, EmptyEvaluation, VerificationError
from mmverify.harness import (
    Mode,
    build_report,
    dumps_report,
    evaluate_outcomes,
    load_dataset,
    render_table,
    run_batch,
)
from mmverify.model import Claim
from mmverify.tools import DetectorReport, parse_detector_line, run_detector_command

logger = logging.getLogger("mmverify")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _overrides(args: argparse.Namespace) -> dict:
    mode = getattr(args, "mode", None)
    if getattr(args, "hybrid", False):
        mode = Mode.HYBRID.value
    return {
        "search.seed": getattr(args, "seed", None),
        "mode": mode,
        "workers": getattr(args, "workers", None),
        "label_map": getattr(args, "label_map", None),
    }


def _load(args: argparse.Namespace):
    cfg = load_config(args.config, _overrides(args))
    problems = cfg.violations()
    if problems:
        raise ConfigError(problems)
    return cfg


def _detector_from_flag(flag_value: str) -> DetectorReport:
    verdict, _, rest = flag_value.partition(":")
    conf, _, name = rest.partition(":")
    return parse_detector_line(f"{verdict} {conf}", name or "cli_detector")


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        for v in exc.violations:
            _err(v)
        return EXIT_USAGE
    detector = None
    if cfg.mode is Mode.HYBRID:
        if args.detector:
            try:
                detector = _detector_from_flag(args.detector)
            except VerificationError as exc:
                _err(f"--detector: {exc}")
                return EXIT_USAGE
        elif not cfg.get("detector.command"):
            _err("hybrid mode needs --detector or detector.command in the config")
            return EXIT_USAGE
    if not os.path.isfile(args.image_path):
        _err(f"image not found: {args.image_path}")
        return EXIT_RUNTIME
    try:
        if cfg.mode is Mode.HYBRID and detector is None:
            detector = run_detector_command(cfg.get("detector.command"), args.image_path)
        pipeline = cfg.build_pipeline()
        outcome = pipeline.verify(Claim(args.id, args.image_path, args.text), detector)
    except (VerificationError, ValueError, OSError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    v = outcome.verdict
    print(f"label: {v.label.value}")
    print(f"confidence: {v.confidence:.4f}")
    print(f"origin: {v.origin.value}")
    if args.out:
        doc = {"config": cfg.snapshot(), "claim": outcome.claim.to_dict(), "trace": outcome.trace()}
        Path(args.out).write_text(dumps_report(doc), encoding="utf-8")
        print(f"trace: {args.out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        cfg = _load(args)
        records = load_dataset(args.dataset, cfg.get("label_map"))
    except ConfigError as exc:
        for v in exc.violations:
            _err(v)
        return EXIT_USAGE
    except (DatasetError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    if not records:
        _err("EmptyEvaluation: dataset has no records")
        return EXIT_USAGE
    pipeline = cfg.build_pipeline()
    outcomes = run_batch(records, pipeline, cfg.mode, cfg.workers, cfg.get("detector.command"))
    method = "Fact-checking" if cfg.mode is Mode.PLAIN else "Fact-checking + detector (hybrid)"
    failed = sum(not o.ok for o in outcomes)
    try:
        metrics = evaluate_outcomes(outcomes)
    except EmptyEvaluation:
        metrics = None
    doc = build_report(outcomes, metrics, cfg.snapshot(), method)
    out = Path(args.out)
    table = Path(args.table) if args.table else out.with_suffix(".txt")
    out.write_text(dumps_report(doc), encoding="utf-8")
    if metrics is not None:
        text = render_table([(method, metrics)])
        table.write_text(text, encoding="utf-8")
        print(text, end="")
    print(f"records: {len(outcomes)}  failed: {failed}")
    print(f"report: {out}")
    if failed:
        for o in outcomes:
            if not o.ok:
                _err(f"{o.record.claim.id}: {o.error['type']}: {o.error['message']}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_validate_config(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        for v in exc.violations:
            _err(v)
        return EXIT_USAGE
    print(describe(cfg))
    problems = cfg.violations()
    for p in problems:
        print(f"violation: {p}")
    return EXIT_USAGE if problems else EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    from mmverify.synthetic import generate

    path = generate(args.outdir, n=args.n, seed=args.seed or 0)
    print(json.dumps({"config": str(path), "dataset": str(Path(args.outdir) / "dataset.jsonl")}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmverify", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override search.seed")
        p.add_argument("--mode", choices=[m.value for m in Mode], help="plain or hybrid")

    p = sub.add_parser("verify", help="verify one image-text claim")
    p.add_argument("image_path")
    p.add_argument("text")
    common(p)
    p.add_argument("--hybrid", action="store_true", help="same as --mode hybrid")
    p.add_argument("--detector", help="detector report as VERDICT:CONFIDENCE[:NAME], e.g. fake:0.92")
    p.add_argument("--id", default="cli", help="claim id used in traces and script keys")
    p.add_argument("--out", default="verify_trace.json", help="trace file (empty string to skip)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="run a dataset and report metrics")
    p.add_argument("dataset", help="normalized JSONL dataset")
    common(p)
    p.add_argument("--out", default="report.json", help="JSON report path")
    p.add_argument("--table", help="summary table path (default: report path with .txt)")
    p.add_argument("--workers", type=int, help="parallel claim workers")
    p.add_argument("--label-map", dest="label_map", help="label map preset (four_way, dgm4, mmfakebench)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate-config", help="print every resolved setting and its source")
    p.add_argument("config", nargs="?")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_validate_config)

    p = sub.add_parser("synth", help="write a synthetic scripted benchmark")
    p.add_argument("outdir")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
