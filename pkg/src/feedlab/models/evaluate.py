"""Cohort-segmented offline evaluation (AUROC / AUPRC per segment)."""

from __future__ import annotations

from dataclasses import dataclass

from ..datagen import TrainingExample, design_matrix, labels_of
from ..ecosystem.population import ACTIVITY_ORDER, CONTRIBUTION_ORDER
from ..errors import ConfigurationError, UndefinedMetricError
from .metrics import auprc, auroc

ALL_SEGMENT = "all_users"


@dataclass(frozen=True)
class EvalRow:
    segment: str
    auroc: float | None  # None when the segment lacks a label class
    auprc: float | None
    n: int


@dataclass(frozen=True)
class EvalReport:
    segmentation: str
    rows: tuple[EvalRow, ...]

    def row(self, segment: str) -> EvalRow:
        for r in self.rows:
            if r.segment == segment:
                return r
        raise KeyError(segment)


def _segment_key(example: TrainingExample, segmentation: str) -> str:
    if segmentation == "activity":
        return example.cohort[0].value
    return example.cohort[1].value


def segment_eval(model, test: list[TrainingExample], segmentation: str = "activity") -> EvalReport:
    """Score the test set once and compute metrics per cohort segment.

    Segments with a single label class get n reported and null metrics; the
    all-users row is always present.
    """
    if segmentation not in ("activity", "contribution"):
        raise ConfigurationError(f"segmentation must be activity|contribution, got {segmentation!r}")
    if not test:
        raise ConfigurationError("empty test set")

    X = design_matrix(test, model.family, getattr(model, "use_interactions", False))
    scores = model.predict_matrix(X)
    labels = labels_of(test)

    order = ACTIVITY_ORDER if segmentation == "activity" else CONTRIBUTION_ORDER
    segment_names = [ALL_SEGMENT] + [lvl.value for lvl in order]

    rows = []
    for name in segment_names:
        if name == ALL_SEGMENT:
            idx = list(range(len(test)))
        else:
            idx = [i for i, ex in enumerate(test) if _segment_key(ex, segmentation) == name]
        if not idx and name != ALL_SEGMENT:
            continue
        seg_scores = scores[idx]
        seg_labels = labels[idx]
        try:
            a_roc = auroc(seg_scores, seg_labels)
            a_prc = auprc(seg_scores, seg_labels)
        except UndefinedMetricError:
            a_roc, a_prc = None, None
        rows.append(EvalRow(segment=name, auroc=a_roc, auprc=a_prc, n=len(idx)))
    return EvalReport(segmentation=segmentation, rows=tuple(rows))


EVAL_SCHEMA = "feedlab-evalreport-v1"


def report_to_csv(reports: list[EvalReport], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {EVAL_SCHEMA}\n")
        f.write("segmentation,segment,auroc,auprc,n\n")
        for report in reports:
            for row in report.rows:
                a = "" if row.auroc is None else repr(row.auroc)
                p = "" if row.auprc is None else repr(row.auprc)
                f.write(f"{report.segmentation},{row.segment},{a},{p},{row.n}\n")
