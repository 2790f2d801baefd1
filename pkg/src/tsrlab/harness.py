"""PubTabNet-style ingestion and TEDS evaluation.

Annotation lines carry ``filename``, ``split`` and ``html.structure.tokens``;
prediction lines carry ``filename`` plus either ``tokens`` (list) or ``html``
(string), or the annotation layout itself. All other fields are ignored.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import __version__
from .errors import EmptyJoin, FormatError, GrammarError, IoFailure
from .grammar import UNK_ID, TableClass, classify, manifest_hash, parse, split_structure, tokenize
from .teds import NODE_COUNT_CONVENTION, SampleScore, TedsReport, aggregate, teds_trees

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class AnnotationRecord:
    filename: str
    split: str
    structure_tokens: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps(
            {"filename": self.filename, "split": self.split, "html": {"structure": {"tokens": list(self.structure_tokens)}}},
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class PredictionRecord:
    filename: str
    tokens: tuple[str, ...] | None = None
    html: str | None = None

    def surfaces(self) -> list[str]:
        if self.tokens is not None:
            return list(self.tokens)
        return split_structure(self.html or "")


@dataclass
class LoadStats:
    lines: int = 0
    records: int = 0
    skipped: int = 0
    filtered: int = 0
    with_unknown: int = 0
    skipped_lines: list[int] = field(default_factory=list)


def _json_lines(path: str | Path) -> Iterator[tuple[int, dict]]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise FormatError("expected a JSON object", lineno)
            yield lineno, obj


def _skip(stats: LoadStats, lineno: int, why: str) -> None:
    stats.skipped += 1
    stats.skipped_lines.append(lineno)
    log.warning("line %d skipped: %s", lineno, why)


def iter_annotations(path: str | Path, split: str | None = None, stats: LoadStats | None = None) -> Iterator[AnnotationRecord]:
    """Stream annotation records, one JSON object per line.

    Records without a usable ``filename`` or ``html.structure.tokens`` are
    skipped and counted; a line that is not a JSON object raises
    :class:`FormatError`.
    """
    stats = stats if stats is not None else LoadStats()
    for lineno, obj in _json_lines(path):
        stats.lines += 1
        try:
            tokens = obj["html"]["structure"]["tokens"]
            filename = obj["filename"]
        except (KeyError, TypeError):
            _skip(stats, lineno, "missing filename or html.structure.tokens")
            continue
        if not isinstance(filename, str) or not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            _skip(stats, lineno, "wrong field types")
            continue
        rec_split = obj.get("split", "")
        if split is not None and rec_split != split:
            stats.filtered += 1
            continue
        if any(i == UNK_ID for i in tokenize(tokens, bound=max(len(tokens), 1)).ids):
            stats.with_unknown += 1
            log.warning("line %d (%s): structure tokens outside the vocabulary", lineno, filename)
        stats.records += 1
        yield AnnotationRecord(filename, str(rec_split), tuple(tokens))


def load_annotations(path: str | Path, split: str | None = None, stats: LoadStats | None = None) -> list[AnnotationRecord]:
    return list(iter_annotations(path, split, stats))


def iter_predictions(path: str | Path, stats: LoadStats | None = None) -> Iterator[PredictionRecord]:
    stats = stats if stats is not None else LoadStats()
    for lineno, obj in _json_lines(path):
        stats.lines += 1
        filename = obj.get("filename")
        tokens, html = obj.get("tokens"), obj.get("html")
        if tokens is None and isinstance(html, dict):
            # annotation layout; lets a ground-truth file stand in as predictions
            tokens = (html.get("structure") or {}).get("tokens")
        if not isinstance(filename, str):
            _skip(stats, lineno, "missing filename")
            continue
        if isinstance(tokens, list) and all(isinstance(t, str) for t in tokens):
            rec = PredictionRecord(filename, tokens=tuple(tokens))
        elif isinstance(html, str):
            rec = PredictionRecord(filename, html=html)
        else:
            _skip(stats, lineno, "prediction needs 'tokens' (list) or 'html' (string)")
            continue
        stats.records += 1
        yield rec


def load_predictions(path: str | Path, stats: LoadStats | None = None) -> list[PredictionRecord]:
    return list(iter_predictions(path, stats))


# -- scoring ---------------------------------------------------------------


def _score_one(job: tuple[str, tuple[str, ...], list[str] | None]) -> SampleScore | str:
    filename, gt_tokens, pred = job
    try:
        gt_tree = parse(gt_tokens)
    except GrammarError as exc:
        return f"{filename}: ground truth unparseable ({type(exc).__name__}); excluded"
    cls = classify(gt_tree)
    if pred is None:
        return SampleScore(filename, cls, 0.0, "missing prediction")
    try:
        pred_tree = parse(pred)
    except GrammarError as exc:
        return SampleScore(filename, cls, 0.0, f"unparseable prediction ({type(exc).__name__})")
    return SampleScore(filename, cls, teds_trees(pred_tree, gt_tree))


def evaluate(
    gt: Iterable[AnnotationRecord],
    pred: Iterable[PredictionRecord],
    workers: int | None = None,
) -> TedsReport:
    """Join on filename and score every ground-truth sample.

    Missing or unparseable predictions score 0.0 and are flagged, as are
    predictions with no matching annotation. Output does not depend on input
    order or on ``workers`` (default: CPU count).
    """
    gt_map: dict[str, AnnotationRecord] = {}
    for rec in gt:
        gt_map[rec.filename] = rec
    pred_map: dict[str, list[str]] = {}
    extra_flags: list[str] = []
    for rec in pred:
        if rec.filename in pred_map:
            extra_flags.append(f"{rec.filename}: duplicate prediction; last one kept")
        pred_map[rec.filename] = rec.surfaces()
    if not gt_map or not set(gt_map) & set(pred_map):
        raise EmptyJoin("no prediction filename matches an annotation")
    extra_flags += [f"{name}: prediction has no annotation" for name in sorted(set(pred_map) - set(gt_map))]

    jobs = [(name, gt_map[name].structure_tokens, pred_map.get(name)) for name in sorted(gt_map)]
    workers = (os.cpu_count() or 1) if workers is None else max(1, workers)
    if workers == 1 or len(jobs) < 2:
        results = [_score_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_score_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))

    samples = [r for r in results if isinstance(r, SampleScore)]
    extra_flags += [r for r in results if isinstance(r, str)]
    report = aggregate(samples)
    return TedsReport(
        per_sample=report.per_sample,
        simple_mean=report.simple_mean,
        complex_mean=report.complex_mean,
        all_mean=report.all_mean,
        flags=tuple(sorted(report.flags + tuple(extra_flags))),
    )


def report_dict(report: TedsReport, per_sample: bool = False) -> dict:
    out = {
        "tool_version": __version__,
        "vocab_manifest_sha256": manifest_hash(),
        "node_counting": NODE_COUNT_CONVENTION,
        "n_samples": len(report.per_sample),
        "n_simple": report.n_simple,
        "n_complex": report.n_complex,
        "teds_simple": report.simple_mean,
        "teds_complex": report.complex_mean,
        "teds_all": report.all_mean,
        "flags": list(report.flags),
    }
    if per_sample:
        out["per_sample"] = [
            {"filename": s.sample_id, "class": s.table_class.value, "teds": s.score, "flag": s.flag}
            for s in report.per_sample
        ]
    return out


def report_json(report: TedsReport, per_sample: bool = False) -> str:
    return json.dumps(report_dict(report, per_sample), indent=2, sort_keys=True) + "\n"


def format_teds(report: TedsReport) -> str:
    def cell(v):
        return "-" if v is None else f"{v:.2f}"

    return (
        f"samples {len(report.per_sample)} (simple {report.n_simple}, complex {report.n_complex})\n"
        f"TEDS simple {cell(report.simple_mean)}  complex {cell(report.complex_mean)}  all {cell(report.all_mean)}\n"
        f"flags {len(report.flags)}"
    )


__all__ = [
    "AnnotationRecord",
    "PredictionRecord",
    "LoadStats",
    "SPLITS",
    "TableClass",
    "evaluate",
    "iter_annotations",
    "iter_predictions",
    "load_annotations",
    "load_predictions",
    "report_dict",
    "report_json",
]
