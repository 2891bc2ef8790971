"""Pose accuracy metrics and the per-category report.

MPJPE is the mean Euclidean joint distance in millimeters. PA-MPJPE first
aligns each predicted frame to the ground truth with the closed-form
similarity Procrustes solution (rotation with determinant +1, translation,
and by default a uniform scale), then measures MPJPE of the aligned pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CATEGORIES = ("Walk", "Crouch", "Pushup", "Boxing", "Kick", "Dance",
              "Inter. with env.", "Crawl", "Sports", "Jump")

M_TO_MM = 1000.0


def _as_frames(seq, name: str) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must be (frames, joints, 3), got {arr.shape}")
    return arr


def _paired(pred, gt):
    p = _as_frames(pred, "pred")
    g = _as_frames(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"pred {p.shape} and gt {g.shape} do not match")
    return p, g


def mpjpe(pred, gt) -> float:
    """Mean per-joint position error in millimeters."""
    p, g = _paired(pred, gt)
    return float(np.linalg.norm(p - g, axis=2).mean() * M_TO_MM)


def procrustes_align(pred: np.ndarray, gt: np.ndarray,
                     with_scale: bool = True) -> np.ndarray:
    """Similarity-align one (J, 3) frame onto gt; reflections excluded."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    pc = pred - mu_p
    gc = gt - mu_g
    if not np.any(gc):
        raise ValueError("degenerate ground truth: all joints coincident")
    cov = gc.T @ pc / pred.shape[0]
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        d[2] = -1.0
    rot = u @ np.diag(d) @ vt
    var_p = np.mean(np.sum(pc * pc, axis=1))
    if with_scale and var_p > 0:
        scale = float(np.sum(s * d)) / var_p
    else:
        scale = 1.0
    return scale * pc @ rot.T + mu_g


def pa_mpjpe(pred, gt, with_scale: bool = True) -> float:
    """Procrustes-aligned MPJPE in millimeters (per-frame alignment)."""
    p, g = _paired(pred, gt)
    aligned = np.stack([procrustes_align(pf, gf, with_scale)
                        for pf, gf in zip(p, g)])
    return float(np.linalg.norm(aligned - g, axis=2).mean() * M_TO_MM)


# -- per-category aggregation ------------------------------------------------

@dataclass(frozen=True)
class CategoryRow:
    name: str
    count: int
    mpjpe: float
    pa_mpjpe: float


@dataclass(frozen=True)
class MetricReport:
    rows: tuple                 # non-empty categories, fixed order
    empty: tuple                # excluded category names
    mean_mpjpe: float           # mean of category means
    mean_pa: float
    sigma_mpjpe: float          # population std across category means
    sigma_pa: float


def aggregate(sequence_metrics) -> MetricReport:
    """Fold per-sequence (label, mpjpe_mm, pa_mpjpe_mm) rows into a report.

    Category means are averaged with equal category weight; empty
    categories are left out of the averages and listed separately.
    """
    buckets = {name: [] for name in CATEGORIES}
    for label, mp, pa in sequence_metrics:
        if label not in buckets:
            raise ValueError(f"unknown category label: {label!r}")
        if mp < 0 or pa < 0:
            raise ValueError("metric values must be non-negative")
        buckets[label].append((float(mp), float(pa)))
    rows = []
    empty = []
    for name in CATEGORIES:
        vals = buckets[name]
        if not vals:
            empty.append(name)
            continue
        arr = np.asarray(vals)
        rows.append(CategoryRow(name, len(vals),
                                float(arr[:, 0].mean()), float(arr[:, 1].mean())))
    if not rows:
        raise ValueError("no sequences to aggregate")
    mp_means = np.asarray([r.mpjpe for r in rows])
    pa_means = np.asarray([r.pa_mpjpe for r in rows])
    return MetricReport(tuple(rows), tuple(empty),
                        float(mp_means.mean()), float(pa_means.mean()),
                        float(mp_means.std()), float(pa_means.std()))


def format_report(report: MetricReport) -> str:
    """Aligned plain-text table, one category per row plus the summary."""
    name_w = max(len("Category"), len("Avg. (sigma)"),
                 *(len(r.name) for r in report.rows))
    lines = [f"{'Category':<{name_w}}  {'Seqs':>4}  {'MPJPE (mm)':>12}  "
             f"{'PA-MPJPE (mm)':>14}"]
    for r in report.rows:
        lines.append(f"{r.name:<{name_w}}  {r.count:>4}  {r.mpjpe:>12.2f}  "
                     f"{r.pa_mpjpe:>14.2f}")
    avg = (f"{report.mean_mpjpe:.2f} ({report.sigma_mpjpe:.2f})",
           f"{report.mean_pa:.2f} ({report.sigma_pa:.2f})")
    lines.append(f"{'Avg. (sigma)':<{name_w}}  {'':>4}  {avg[0]:>12}  "
                 f"{avg[1]:>14}")
    if report.empty:
        lines.append("excluded empty categories: " + ", ".join(report.empty))
    return "\n".join(lines) + "\n"


def format_records(report: MetricReport) -> str:
    """Line-delimited records mirroring the table for machine consumption."""
    lines = []
    for r in report.rows:
        lines.append(f"category\t{r.name}\t{r.count}\t{r.mpjpe:.6f}\t"
                     f"{r.pa_mpjpe:.6f}")
    lines.append(f"overall\t{report.mean_mpjpe:.6f}\t{report.sigma_mpjpe:.6f}\t"
                 f"{report.mean_pa:.6f}\t{report.sigma_pa:.6f}")
    for name in report.empty:
        lines.append(f"empty\t{name}")
    return "\n".join(lines) + "\n"


def parse_records(text: str) -> MetricReport:
    rows, empty, overall = [], [], None
    for line in text.splitlines():
        parts = line.split("\t")
        if parts[0] == "category":
            rows.append(CategoryRow(parts[1], int(parts[2]),
                                    float(parts[3]), float(parts[4])))
        elif parts[0] == "overall":
            overall = [float(v) for v in parts[1:5]]
        elif parts[0] == "empty":
            empty.append(parts[1])
    if overall is None:
        raise ValueError("missing overall record")
    return MetricReport(tuple(rows), tuple(empty), overall[0], overall[2],
                        overall[1], overall[3])
