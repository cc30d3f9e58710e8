"""Generator for a self-contained scripted benchmark (dataset, fixtures, script, config)."""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Any, Iterable

import yaml

from mmverify.model import Label

FROZEN_CLOCK = "2024-01-01T00:00:00+00:00"

_PLANNER = [
    ("text|0", "corpus_search"),
    ("text|1", "entity_lookup_fixture"),
    ("text|2", "time_check_fixture"),
    ("text|*", "corpus_search"),
    ("image|0", "image_caption_fixture"),
    ("image|1", "vqa_fixture"),
    ("image|*", "time_check_fixture"),
]

# First matching rule wins. The image-side detector echo sits above the
# manipulation rule, so a detector that says "real" masks visual evidence.
_STANCE_RULES = [
    (["Subtask: text", "REFUTES"], "FAKE", 9),
    (["Subtask: image", "predicts real"], "REAL", 8),
    (["Subtask: image", "MANIPULATED"], "FAKE", 8),
    (["Subtask: image", "predicts fake"], "FAKE", 7),
    (["CONFIRMS"], "REAL", 7),
]

_BOTH = ["text subtask: TEXT_FAKE", "image subtask: IMAGE_FAKE"]


def _turn(label: str, confidence: float, citations: list[str], why: str) -> dict[str, Any]:
    return {"label": label, "confidence": confidence, "rationale": why, "citations": citations}


def script_entries() -> list[dict[str, Any]]:
    entries: list[dict[str, Any]] = [
        {"role": "planner", "key": key, "reply": {"tool": tool, "args": {}}} for key, tool in _PLANNER
    ]
    entries.append({"role": "coherence_grader", "key": "*", "reply": {"coherence": 0.7}})
    entries += [
        {"role": "stance_grader", "contains": needles, "reply": {"stance": stance, "grade": grade}}
        for needles, stance, grade in _STANCE_RULES
    ]
    entries.append({"role": "stance_grader", "key": "*", "reply": {"stance": "REAL", "grade": 4}})

    entries += [
        {"role": "skeptic", "contains": _BOTH, "reply": _turn("BOTH_FAKE", 0.85, ["T1", "I1"], "Both sides are refuted.")},
        {"role": "skeptic", "contains": [_BOTH[0]], "reply": _turn("TEXT_FAKE", 0.85, ["T1"], "The caption is refuted.")},
        {"role": "skeptic", "contains": [_BOTH[1]], "reply": _turn("IMAGE_FAKE", 0.8, ["I1"], "The image shows edits.")},
        {"role": "skeptic", "key": "*", "reply": _turn("TEXT_FAKE", 0.4, ["T1"], "Sourcing is thin.")},
        {"role": "supporter", "contains": _BOTH, "reply": _turn("BOTH_FAKE", 0.7, ["T1", "I1"], "Agreed, both fail.")},
        {"role": "supporter", "contains": [_BOTH[0]], "reply": _turn("TEXT_FAKE", 0.7, ["T1"], "Agreed, caption fails.")},
        {"role": "supporter", "contains": [_BOTH[1]], "reply": _turn("REAL", 0.55, ["I1"], "Edits look benign.")},
        {"role": "supporter", "key": "*", "reply": _turn("REAL", 0.8, ["T1"], "Coverage supports the claim.")},
    ]
    labels = [label.value for label in Label]
    for a in labels:
        for b in labels:
            reply = {"label": a, "confidence": 0.85 if a == b else 0.45, "override": False}
            entries.append({"role": "judge", "key": f"{a}|{b}", "reply": reply})
    return entries


def _write_jsonl(path: Path, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def generate(outdir: str | Path, n: int = 200, seed: int = 0, noise: float = 0.15) -> Path:
    """Write a synthetic benchmark into ``outdir``; returns the config path.

    Fixture evidence agrees with the gold label except for a ``noise``
    fraction of claims whose evidence points the other way.
    """
    out = Path(outdir)
    (out / "fixtures").mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    labels = list(Label)
    dataset, corpus, captions, vqa, entities, times = [], [], [], [], [], []
    for i in range(n):
        cid = f"c{i:04d}"
        gold = labels[i % len(labels)]
        shown = gold
        if rng.random() < noise:
            shown = rng.choice([l for l in labels if l is not gold])
        text_fake = shown in (Label.TEXT_FAKE, Label.BOTH_FAKE)
        image_fake = shown in (Label.IMAGE_FAKE, Label.BOTH_FAKE)
        corpus.append({
            "key": cid,
            "snippet": f"Fact-check REFUTES the caption of {cid}: the event it describes happened elsewhere."
            if text_fake
            else f"Archive coverage CONFIRMS the caption of {cid}.",
        })
        captions.append({
            "key": cid,
            "snippet": f"Photo for {cid}; lighting is inconsistent around faces, regions look MANIPULATED."
            if image_fake
            else f"Unremarkable news photo for {cid}.",
        })
        vqa.append({
            "key": cid,
            "snippet": "Q: were faces edited? A: yes, MANIPULATED." if image_fake else "Q: were faces edited? A: no.",
        })
        entities.append({"key": cid, "snippet": f"Named entities in {cid} resolve to known public figures."})
        times.append({"key": cid, "snippet": f"No date is asserted in {cid}."})
        detector_fake = image_fake and rng.random() < 0.5
        dataset.append({
            "id": cid,
            "image_path": f"images/{cid}.jpg",
            "text": f"Synthetic claim {cid}: officials attended the ceremony shown in the photo.",
            "gold_label": gold.value,
            "detector": {
                "verdict": "fake" if detector_fake else "real",
                "confidence": round(rng.uniform(0.55, 0.99), 2),
                "name": "synthetic_detector",
            },
        })
    _write_jsonl(out / "dataset.jsonl", dataset)
    _write_jsonl(out / "script.jsonl", script_entries())
    fixture_files = {
        "corpus_search": corpus,
        "image_caption_fixture": captions,
        "vqa_fixture": vqa,
        "entity_lookup_fixture": entities,
        "time_check_fixture": times,
    }
    for name, rows in fixture_files.items():
        _write_jsonl(out / "fixtures" / f"{name}.jsonl", rows)
    config = {
        "backends": {"default": {"kind": "scripted", "script": "script.jsonl"}},
        "tools": {"fixtures": {name: f"fixtures/{name}.jsonl" for name in fixture_files}},
        "search": {"seed": seed},
        "label_map": "four_way",
        "clock": FROZEN_CLOCK,
    }
    config_path = out / "config.yaml"
    config_path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return config_path
