"""Benchmark harness: dataset ingestion, batch runs, metrics and reports."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from mmverify.errors import DatasetError, EmptyEvaluation, LabelMappingError, MissingDetector, VerificationError
from mmverify.model import BinaryLabel, Claim, Label, verdict_to_binary, Verdict
from mmverify.pipeline import Pipeline
from mmverify.tools import DetectorReport, run_detector_command

logger = logging.getLogger(__name__)

REPORT_FORMAT = "mmverify-report/1"

_FOUR_WAY = {label.value: label for label in Label}

# Dataset-native gold labels -> four-way labels. Keys are matched case-insensitively;
# composite labels ("face_swap&text_attribute") combine their parts.
LABEL_MAPS: dict[str, dict[str, Label]] = {
    "four_way": dict(_FOUR_WAY),
    "dgm4": {
        "orig": Label.REAL,
        "face_swap": Label.IMAGE_FAKE,
        "face_attribute": Label.IMAGE_FAKE,
        "text_swap": Label.TEXT_FAKE,
        "text_attribute": Label.TEXT_FAKE,
    },
    "mmfakebench": {
        "true": Label.REAL,
        "real": Label.REAL,
        "textual_veracity_distortion": Label.TEXT_FAKE,
        "visual_veracity_distortion": Label.IMAGE_FAKE,
        "mixed_veracity_distortion": Label.BOTH_FAKE,
        "cross_modal_consistency_distortion": Label.TEXT_FAKE,
        "mismatch": Label.TEXT_FAKE,
    },
}


class Mode(str, Enum):
    PLAIN = "plain"
    HYBRID = "hybrid"


def resolve_label_map(mapping: str | Mapping[str, str] | None) -> dict[str, Label]:
    """Build a label map from a preset name or an explicit ``{native: label}`` table.

    Four-way label names always map to themselves.
    """
    table = {k.lower(): v for k, v in _FOUR_WAY.items()}
    if mapping is None:
        return table
    if isinstance(mapping, str):
        if mapping not in LABEL_MAPS:
            raise LabelMappingError(f"unknown label map preset {mapping!r}")
        table.update(LABEL_MAPS[mapping])
        return table
    for native, target in mapping.items():
        try:
            table[str(native).lower()] = Label(str(getattr(target, "value", target)).upper())
        except ValueError:
            raise LabelMappingError(f"label map target {target!r} is not a four-way label") from None
    return table


def map_gold_label(native: str, table: Mapping[str, Label]) -> Label:
    key = str(native).strip().lower()
    if key in table:
        return table[key]
    parts = [p for p in re.split(r"[&,+|]", key) if p.strip()]
    if len(parts) > 1:
        labels = [map_gold_label(p, table) for p in parts]
        text = any(l in (Label.TEXT_FAKE, Label.BOTH_FAKE) for l in labels)
        image = any(l in (Label.IMAGE_FAKE, Label.BOTH_FAKE) for l in labels)
        if text and image:
            return Label.BOTH_FAKE
        return Label.TEXT_FAKE if text else Label.IMAGE_FAKE if image else Label.REAL
    raise LabelMappingError(f"gold label {native!r} has no mapping")


@dataclass(frozen=True)
class ClaimRecord:
    claim: Claim
    gold_label: str
    gold_verdict: Label
    detector_report: DetectorReport | None = None


def _parse_record(row: Any, table: Mapping[str, Label]) -> ClaimRecord:
    if not isinstance(row, dict):
        raise ValueError("record is not a JSON object")
    for key in ("id", "image_path", "text", "gold_label"):
        if key not in row or row[key] in (None, ""):
            raise ValueError(f"missing field {key!r}")
    detector = None
    if row.get("detector") is not None:
        d = row["detector"]
        detector = DetectorReport(d["verdict"], float(d["confidence"]), str(d.get("name", "detector")))
    claim = Claim(str(row["id"]), str(row["image_path"]), str(row["text"]), row.get("meta") or {})
    return ClaimRecord(claim, str(row["gold_label"]), map_gold_label(row["gold_label"], table), detector)


def load_dataset(
    path: str | Path,
    label_map: str | Mapping[str, str] | None = None,
    format: str = "normalized_jsonl",
) -> list[ClaimRecord]:
    if format != "normalized_jsonl":
        raise DatasetError(f"unsupported dataset format {format!r}")
    table = resolve_label_map(label_map)
    records: list[ClaimRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = _parse_record(json.loads(line), table)
            except LabelMappingError as exc:
                raise LabelMappingError(str(exc), line=lineno) from None
            except (ValueError, KeyError, TypeError, VerificationError) as exc:
                raise DatasetError(str(exc), line=lineno) from None
            if record.claim.id in seen:
                raise DatasetError(f"duplicate id {record.claim.id!r}", line=lineno)
            seen.add(record.claim.id)
            records.append(record)
    return records


@dataclass
class RecordOutcome:
    record: ClaimRecord
    verdict: Verdict | None
    trace: dict[str, Any] | None
    error: dict[str, str] | None = None

    @property
    def ok(self) -> bool:
        return self.verdict is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.record.claim.id,
            "claim": self.record.claim.to_dict(),
            "gold_label": self.record.gold_label,
            "gold_verdict": self.record.gold_verdict.value,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "error": self.error,
            "trace": self.trace,
        }


def _verify_record(
    record: ClaimRecord, pipeline: Pipeline, mode: Mode, detector_command: str | None
) -> RecordOutcome:
    try:
        report = None
        if mode is Mode.HYBRID:
            report = record.detector_report
            if report is None:
                if not detector_command:
                    raise MissingDetector(f"record {record.claim.id} has no detector report and no command is set")
                report = run_detector_command(detector_command, record.claim.image_ref)
        outcome = pipeline.verify(record.claim, report)
        return RecordOutcome(record, outcome.verdict, outcome.trace())
    except Exception as exc:  # one bad record must not sink the batch
        logger.warning("record %s failed: %s: %s", record.claim.id, type(exc).__name__, exc)
        partial = getattr(exc, "partial", None)
        trace = {"partial_iterations": partial} if partial is not None else None
        return RecordOutcome(record, None, trace, {"type": type(exc).__name__, "message": str(exc)})


def run_batch(
    records: Sequence[ClaimRecord],
    pipeline: Pipeline,
    mode: Mode | str = Mode.PLAIN,
    workers: int = 1,
    detector_command: str | None = None,
) -> list[RecordOutcome]:
    """Verify every record; results keep input order whatever the completion order."""
    mode = Mode(mode)
    if workers <= 1:
        return [_verify_record(r, pipeline, mode, detector_command) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: _verify_record(r, pipeline, mode, detector_command), records))


# --- metrics ---------------------------------------------------------------

BINARY_ORDER = (BinaryLabel.REAL, BinaryLabel.FAKE)
LABEL_ORDER = tuple(Label)


def _ratio(num: int | float, den: int | float, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def _prf(tp: int, fp: int, fn: int, name: str, flags: list[str]) -> tuple[float, float, float]:
    p = _ratio(tp, tp + fp, f"{name}.precision", flags)
    r = _ratio(tp, tp + fn, f"{name}.recall", flags)
    f = _ratio(2 * p * r, p + r, f"{name}.f1", flags)
    return p, r, f


@dataclass(frozen=True)
class MetricsReport:
    """Binary metrics with FAKE as the positive class, plus REAL/FAKE macro averages.

    Confusion matrices are indexed ``[gold][predicted]`` in ``BINARY_ORDER`` /
    ``LABEL_ORDER``.
    """

    n: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: tuple[tuple[int, ...], ...]
    per_class_confusion: tuple[tuple[int, ...], ...]
    zero_division: tuple[str, ...] = ()

    @classmethod
    def from_confusion(
        cls,
        confusion: Sequence[Sequence[int]],
        per_class_confusion: Sequence[Sequence[int]] | None = None,
    ) -> "MetricsReport":
        (tn, fp), (fn, tp) = confusion
        n = tn + fp + fn + tp
        if n == 0:
            raise EmptyEvaluation("no predictions to evaluate")
        flags: list[str] = []
        precision, recall, f1 = _prf(tp, fp, fn, "fake", flags)
        real_p, real_r, real_f = _prf(tn, fn, fp, "real", flags)
        per_class = per_class_confusion or tuple((0,) * 4 for _ in range(4))
        return cls(
            n=n,
            accuracy=(tp + tn) / n,
            precision=precision,
            recall=recall,
            f1=f1,
            macro_precision=(precision + real_p) / 2,
            macro_recall=(recall + real_r) / 2,
            macro_f1=(f1 + real_f) / 2,
            confusion=tuple(tuple(int(v) for v in row) for row in confusion),
            per_class_confusion=tuple(tuple(int(v) for v in row) for row in per_class),
            zero_division=tuple(flags),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "positive_class": "FAKE",
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "confusion": {"labels": [b.value for b in BINARY_ORDER], "matrix": [list(r) for r in self.confusion]},
            "per_class_confusion": {
                "labels": [l.value for l in LABEL_ORDER],
                "matrix": [list(r) for r in self.per_class_confusion],
            },
            "zero_division": list(self.zero_division),
        }


def evaluate(pairs: Iterable[tuple[Label, Label]]) -> MetricsReport:
    """Score ``(gold, predicted)`` four-way label pairs."""
    binary = [[0, 0], [0, 0]]
    per_class = [[0] * 4 for _ in range(4)]
    n = 0
    for gold, pred in pairs:
        gold, pred = Label(gold), Label(pred)
        binary[BINARY_ORDER.index(verdict_to_binary(gold))][BINARY_ORDER.index(verdict_to_binary(pred))] += 1
        per_class[LABEL_ORDER.index(gold)][LABEL_ORDER.index(pred)] += 1
        n += 1
    if n == 0:
        raise EmptyEvaluation("no predictions to evaluate")
    return MetricsReport.from_confusion(binary, per_class)


def evaluate_outcomes(outcomes: Sequence[RecordOutcome]) -> MetricsReport:
    return evaluate((o.record.gold_verdict, o.verdict.label) for o in outcomes if o.ok)


# --- reports ---------------------------------------------------------------


def dumps_report(doc: Mapping[str, Any]) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def build_report(
    outcomes: Sequence[RecordOutcome],
    metrics: MetricsReport | None,
    config: Mapping[str, Any] | None = None,
    method: str = "fact-checking",
) -> dict[str, Any]:
    return {
        "format": REPORT_FORMAT,
        "method": method,
        "config": dict(config or {}),
        "summary": {
            "records": len(outcomes),
            "failed": sum(not o.ok for o in outcomes),
        },
        "metrics": metrics.to_dict() if metrics is not None else None,
        "records": [o.to_dict() for o in outcomes],
    }


def render_table(rows: Sequence[tuple[str, MetricsReport]]) -> str:
    """Plain-text results table, one row per method plus its macro-averaged row."""
    w = max([32] + [len(name) + len(" (macro)") + 2 for name, _ in rows])
    header = f"{'Method':<{w}}{'Accuracy':>10}{'Precision':>11}{'Recall':>9}{'F1-score':>10}"
    lines = [header, "-" * len(header)]
    for name, m in rows:
        lines.append(f"{name:<{w}}{m.accuracy:>10.4f}{m.precision:>11.4f}{m.recall:>9.4f}{m.f1:>10.4f}")
        lines.append(
            f"{name + ' (macro)':<{w}}{m.accuracy:>10.4f}{m.macro_precision:>11.4f}"
            f"{m.macro_recall:>9.4f}{m.macro_f1:>10.4f}"
        )
    return "\n".join(lines) + "\n"


def emit_report(
    outcomes: Sequence[RecordOutcome],
    metrics: MetricsReport | None,
    path: str | Path,
    config: Mapping[str, Any] | None = None,
    method: str = "fact-checking",
    table_path: str | Path | None = None,
) -> tuple[Path, Path]:
    """Write the JSON report and the summary table; returns both paths."""
    if not outcomes:
        raise EmptyEvaluation("no results to report")
    if metrics is None:
        metrics = evaluate_outcomes(outcomes)
    path = Path(path)
    table_path = Path(table_path) if table_path else path.with_suffix(".txt")
    doc = build_report(outcomes, metrics, config, method)
    path.write_text(dumps_report(doc), encoding="utf-8")
    table_path.write_text(render_table([(method, metrics)]), encoding="utf-8")
    return path, table_path
