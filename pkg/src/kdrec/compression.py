"""Parameter accounting and the compression report.

Two accounting modes are always reported, because they answer different
questions:

* trainable parameters only — what the optimizer touches;
* with feature storage — trainable parameters plus the raw per-item
  modality feature tables the teacher must keep around at inference.

For the two standard full-scale configurations (netflix- and
electronics-shaped), the report also includes the published reference
budgets of the original deployments, so the student-to-teacher ratio can
be compared against the known figures (7.83% / 2.70%).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class CensusEntry:
    name: str
    shape: tuple[int, ...]

    @property
    def count(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


def census(params) -> list[CensusEntry]:
    return [CensusEntry(p.name, tuple(p.shape)) for p in params]


def census_total(entries: Sequence[CensusEntry]) -> int:
    return sum(e.count for e in entries)


def param_ratio_pct(student_count: int, teacher_count: int) -> float:
    """Student/teacher parameter ratio in percent (100% for equal models)."""
    if teacher_count <= 0:
        raise ValueError("teacher parameter count must be positive")
    return 100.0 * student_count / teacher_count


# ---------------------------------------------------------------------------
# reference layouts of the full-scale teacher/student weight tables

def reference_student_layout(n_users: int, n_items: int, d: int) -> list[CensusEntry]:
    return [
        CensusEntry("user_id_embedding.weight", (n_users, d)),
        CensusEntry("item_id_embedding.weight", (n_items, d)),
    ]


def reference_teacher_layout(n_users: int, n_items: int, d: int,
                             trans_dims: Sequence[int],
                             modality_tables: int = 0,
                             feature_table_dims: Sequence[int] = (),
                             batch_norm: bool = True) -> list[CensusEntry]:
    """Weight-table layout of the full-scale teacher.

    ``trans_dims`` are the input widths of the per-modality reduction
    layers; ``modality_tables`` adds that many (n_items, d) embedding
    tables; ``feature_table_dims`` counts raw feature tables as weights.
    """
    entries: list[CensusEntry] = []
    for idx, dm in enumerate(trans_dims):
        entries.append(CensusEntry(f"trans{idx}.weight", (dm, d)))
        entries.append(CensusEntry(f"trans{idx}.bias", (d,)))
    for idx, dm in enumerate(feature_table_dims):
        entries.append(CensusEntry(f"feat{idx}.weight", (n_items, dm)))
    entries.append(CensusEntry("user_id_embedding.weight", (n_users, d)))
    entries.append(CensusEntry("item_id_embedding.weight", (n_items, d)))
    for idx in range(modality_tables):
        entries.append(CensusEntry(f"modal{idx}.weight", (n_items, d)))
    if batch_norm:
        entries.append(CensusEntry("batch_norm.weight", (d,)))
        entries.append(CensusEntry("batch_norm.bias", (d,)))
    return entries


def netflix_reference_teacher() -> list[CensusEntry]:
    """Netflix-shaped teacher tables at d=32 (with per-modality embedding
    tables, no raw feature storage); totals 3,210,368."""
    return reference_teacher_layout(43739, 17239, 32, trans_dims=(4096, 768),
                                    modality_tables=2)


def electronics_reference_teacher() -> list[CensusEntry]:
    """Electronics-shaped teacher tables at d=64 (raw feature tables counted
    as weights); totals 108,828,288."""
    return reference_teacher_layout(41691, 21479, 64, trans_dims=(4096, 768),
                                    feature_table_dims=(4096, 768),
                                    modality_tables=0)


# Published resource budgets of the original full-scale deployments.
# The teacher totals are as reported for the trained systems and are not
# reconstructible from the weight tables alone; they anchor the reference
# compression ratios (7.83% / 2.70%).
PUBLISHED_REFERENCES = {
    "netflix": {
        "match": (43739, 17239, 32),
        "teacher_params": 24_910_000,
        "student_params": 1_950_000,
        "ratio_pct": 7.83,
    },
    "electronics": {
        "match": (41691, 21479, 64),
        "teacher_params": 99_040_000,
        "student_params": 2_670_000,
        "ratio_pct": 2.70,
    },
}


def match_published_reference(n_users: int, n_items: int, d: int) -> str | None:
    for name, ref in PUBLISHED_REFERENCES.items():
        if ref["match"] == (n_users, n_items, d):
            return name
    return None


def compression_report(student_entries: Sequence[CensusEntry],
                       teacher_entries: Sequence[CensusEntry],
                       feature_dims: dict[str, int], n_items: int,
                       shape_key: tuple[int, int, int] | None = None,
                       timing: dict | None = None) -> dict:
    """Assemble the two-mode parameter report as a plain dict.

    ``shape_key`` is (n_users, n_items, d); when it matches a known
    full-scale configuration the published reference ratio is included.
    """
    student_total = census_total(student_entries)
    teacher_total = census_total(teacher_entries)
    feature_storage = sum(n_items * dm for dm in feature_dims.values())
    teacher_with_storage = teacher_total + feature_storage
    report = {
        "student": {
            "params": student_total,
            "tensors": [{"name": e.name, "shape": list(e.shape), "count": e.count}
                        for e in student_entries],
        },
        "teacher": {
            "params": teacher_total,
            "feature_storage": feature_storage,
            "params_with_feature_storage": teacher_with_storage,
            "tensors": [{"name": e.name, "shape": list(e.shape), "count": e.count}
                        for e in teacher_entries],
        },
        "ratio_pct": param_ratio_pct(student_total, teacher_total),
        "ratio_with_feature_storage_pct": param_ratio_pct(student_total,
                                                          teacher_with_storage),
    }
    if shape_key is not None:
        name = match_published_reference(*shape_key)
        if name is not None:
            ref = PUBLISHED_REFERENCES[name]
            report["published_reference"] = {
                "name": name,
                "teacher_params": ref["teacher_params"],
                "published_ratio_pct": ref["ratio_pct"],
                "ratio_pct": param_ratio_pct(student_total, ref["teacher_params"]),
            }
    if timing:
        report["timing"] = timing
    return report


def format_report(report: dict) -> str:
    lines = [
        f"student params:                    {report['student']['params']:>12,}",
        f"teacher params:                    {report['teacher']['params']:>12,}",
        f"teacher params + feature storage:  "
        f"{report['teacher']['params_with_feature_storage']:>12,}",
        f"ratio (params only):               {report['ratio_pct']:11.2f}%",
        f"ratio (with feature storage):      "
        f"{report['ratio_with_feature_storage_pct']:11.2f}%",
    ]
    ref = report.get("published_reference")
    if ref:
        lines.append(
            f"ratio vs published {ref['name']} teacher: {ref['ratio_pct']:7.2f}% "
            f"(published: {ref['published_ratio_pct']:.2f}%)")
    timing = report.get("timing")
    if timing:
        for key, val in timing.items():
            lines.append(f"{key}: {val:.3f}s/epoch")
    return "\n".join(lines)
