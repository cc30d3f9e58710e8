"""Two-stage multimodal claim verification: tree-searched evidence, debated verdicts."""

from mmverify.model import (
    Action,
    BinaryLabel,
    Claim,
    EvidenceAtom,
    Label,
    Modality,
    Origin,
    SearchState,
    Subtask,
    SubtaskLabelValue,
    Trajectory,
    Verdict,
    normalize_evidence,
    verdict_to_binary,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "BinaryLabel",
    "Claim",
    "EvidenceAtom",
    "Label",
    "Modality",
    "Origin",
    "SearchState",
    "Subtask",
    "SubtaskLabelValue",
    "Trajectory",
    "Verdict",
    "normalize_evidence",
    "verdict_to_binary",
]
