"""Overlap and surface-distance metrics between label maps."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .fields import LabelMap, check_same_grid


class MetricWarning(UserWarning):
    pass


def dice(a: LabelMap, b: LabelMap, label: int) -> float:
    """2|A & B| / (|A| + |B|); 1.0 (with a warning) if the label is in neither map."""
    check_same_grid(a, b)
    A = a.values == label
    B = b.values == label
    total = int(A.sum()) + int(B.sum())
    if total == 0:
        warnings.warn(f"label {label} absent from both maps; Dice defined as 1.0", MetricWarning, stacklevel=2)
        return 1.0
    return 2.0 * int(np.logical_and(A, B).sum()) / total


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with at least one face neighbour outside it.

    The region beyond the grid counts as outside, so structures touching the
    grid edge have a boundary there.
    """
    padded = np.pad(mask, 1, constant_values=False)
    eroded = ndimage.binary_erosion(padded, structure=ndimage.generate_binary_structure(mask.ndim, 1))
    core = tuple(slice(1, -1) for _ in range(mask.ndim))
    return mask & ~eroded[core]


def _directed(src: np.ndarray, dst: np.ndarray, spacing) -> np.ndarray:
    """Distance from every ``src`` boundary voxel to the nearest ``dst`` boundary voxel."""
    dist = ndimage.distance_transform_edt(~dst, sampling=spacing)
    return dist[src]


def surface_distance(a: LabelMap, b: LabelMap, label: int) -> tuple[float, float]:
    """``(mean symmetric surface distance, 95th-percentile Hausdorff)`` in physical units.

    HD95 is the larger of the two directed 95th percentiles.
    """
    check_same_grid(a, b)
    A = a.values == label
    B = b.values == label
    if not A.any() or not B.any():
        raise ValueError(f"label {label} must be present in both maps for a surface distance")
    bA, bB = boundary_mask(A), boundary_mask(B)
    spacing = a.grid.spacing
    dab = _directed(bA, bB, spacing)
    dba = _directed(bB, bA, spacing)
    mean_sym = 0.5 * (float(dab.mean()) + float(dba.mean()))
    hd95 = max(float(np.percentile(dab, 95)), float(np.percentile(dba, 95)))
    return mean_sym, hd95


def volume_change(a: LabelMap, b: LabelMap, label: int) -> float:
    """Relative volume change of ``label`` going from ``a`` to ``b``."""
    check_same_grid(a, b)
    vox = a.grid.voxel_volume
    va = int((a.values == label).sum()) * vox
    vb = int((b.values == label).sum()) * vox
    if va == 0:
        raise ValueError(f"label {label} absent from the reference map")
    return (vb - va) / va


@dataclass
class StructureReport:
    structure: str
    label: int
    dice: float
    mean_surface_dist: float | None
    hd95: float | None
    volume_change_true: float | None
    volume_change_pred: float | None


def evaluate(pred: LabelMap, truth: LabelMap, baseline: LabelMap | None = None,
             labels: list[int] | None = None) -> list[StructureReport]:
    """Per-structure Dice, surface distances and (with ``baseline``) volume changes.

    Surface distances are ``None`` when a structure is missing from one map.
    """
    check_same_grid(pred, truth)
    names = truth.structure_names
    for k, v in pred.structure_names.items():
        if k in names and names[k] != v:
            raise ValueError(f"label table mismatch for label {k}: {names[k]!r} vs {v!r}")
    if labels is None:
        labels = sorted(names)
    rows = []
    for lab in labels:
        d = dice(pred, truth, lab)
        try:
            msd, hd = surface_distance(pred, truth, lab)
        except ValueError:
            msd = hd = None
        vt = vp = None
        if baseline is not None and np.any(baseline.values == lab):
            vt = volume_change(baseline, truth, lab)
            vp = volume_change(baseline, pred, lab)
        rows.append(StructureReport(names.get(lab, str(lab)), lab, d, msd, hd, vt, vp))
    return rows


def summarize(rows: list[StructureReport]) -> dict:
    def _mean(key):
        vals = [getattr(r, key) for r in rows if getattr(r, key) is not None]
        return float(np.mean(vals)) if vals else None

    return {"mean_dice": _mean("dice"), "mean_surface_dist": _mean("mean_surface_dist"), "hd95": _mean("hd95")}


def report_json(rows: list[StructureReport]) -> str:
    return json.dumps([asdict(r) for r in rows], indent=2)


def _fmt(x, width=10, prec=4):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-".rjust(width)
    if isinstance(x, float):
        return f"{x:{width}.{prec}f}"
    return str(x).rjust(width)


def format_table(header: list[str], rows: list[list]) -> str:
    """Aligned plain-text table; the first column is left-aligned."""
    first = max(len(header[0]), *(len(str(r[0])) for r in rows)) if rows else len(header[0])
    widths = [max(12, len(h) + 2) for h in header[1:]]
    lines = [header[0].ljust(first) + "".join(h.rjust(w) for h, w in zip(header[1:], widths))]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append(str(r[0]).ljust(first) + "".join(_fmt(x, w) for x, w in zip(r[1:], widths)))
    return "\n".join(lines)


def report_table(rows: list[StructureReport]) -> str:
    header = ["structure", "dice", "msd", "hd95", "dvol_true", "dvol_pred"]
    body = [[r.structure, r.dice, r.mean_surface_dist, r.hd95, r.volume_change_true, r.volume_change_pred]
            for r in rows]
    return format_table(header, body)
