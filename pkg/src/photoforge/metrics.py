"""Evaluation quantities for force predictions, classical or learned.

Predicted forces are paired to ground-truth forces by the assignment that
minimizes total circular impact-angle distance (exhaustive over
permutations, cheap for M <= 6). Per-force errors are then mean absolute
errors, with circular differences for angles, plus percentage errors of
the magnitudes binned by the particle's mean force, and net-force
residual statistics. Count detection is scored as exact-match accuracy
with a confusion matrix.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .elastic import TWO_PI, ForceList

DEFAULT_MAPE_RANGE = (0.01, 0.9)
DEFAULT_MAPE_BINS = 8


def circular_diff_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise circular difference of angles in degrees, in [0, 180]."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def match_forces(pred: ForceList, truth: ForceList) -> tuple[tuple[int, int], ...]:
    """Pairing ((pred_index, truth_index), ...) minimizing total circular alpha distance.

    Exhaustive search over all permutations; force counts must agree
    (count mismatches are a classification error, scored separately).
    """
    if len(pred) != len(truth):
        raise ValueError(f"force counts differ: {len(pred)} vs {len(truth)}")
    m = len(pred)
    pa = np.array([f.impact_angle for f in pred])
    ta = np.array([f.impact_angle for f in truth])
    best = None
    best_cost = math.inf
    for perm in itertools.permutations(range(m)):
        d = np.abs(pa - ta[list(perm)]) % TWO_PI
        cost = float(np.minimum(d, TWO_PI - d).sum())
        if cost < best_cost:
            best_cost = cost
            best = perm
    return tuple((i, best[i]) for i in range(m))


def _paired_arrays(
    pred: ForceList, truth: ForceList
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pairs = match_forces(pred, truth)
    pf, pa, pt = pred.as_arrays()
    tf, ta, tt = truth.as_arrays()
    pi = [i for i, _ in pairs]
    ti = [j for _, j in pairs]
    return pf[pi], pa[pi], pt[pi], tf[ti], ta[ti], tt[ti]


def angle_mae(pred_deg: np.ndarray, truth_deg: np.ndarray) -> float:
    """Mean absolute circular angle error in degrees."""
    return float(circular_diff_deg(pred_deg, truth_deg).mean())


def magnitude_mae(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.abs(np.asarray(pred) - np.asarray(truth)).mean())


def magnitude_mape(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute percentage error with the truth magnitude as denominator."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float((np.abs(pred - truth) / truth).mean() * 100.0)


def net_force_stats(pred_lists: list[ForceList]) -> tuple[float, float]:
    """(mean |sum f|, mean |sum f| / <F>) over the predicted lists."""
    norms = []
    rel = []
    for forces in pred_lists:
        fx, fy = forces.net_force()
        n = math.hypot(fx, fy)
        norms.append(n)
        rel.append(n / forces.mean_magnitude())
    if not norms:
        return (0.0, 0.0)
    return (float(np.mean(norms)), float(np.mean(rel)))


def count_accuracy(
    pred_ms: list[int], truth_ms: list[int]
) -> tuple[float, dict[tuple[int, int], int]]:
    """Exact-match fraction plus the (truth, pred) confusion counts."""
    if len(pred_ms) != len(truth_ms):
        raise ValueError(f"length mismatch: {len(pred_ms)} vs {len(truth_ms)}")
    confusion: dict[tuple[int, int], int] = {}
    hits = 0
    for p, t in zip(pred_ms, truth_ms):
        confusion[(t, p)] = confusion.get((t, p), 0) + 1
        hits += p == t
    return (hits / len(pred_ms) if pred_ms else 0.0, confusion)


@dataclass
class EvalReport:
    """Aggregated evaluation results, grouped by true force count."""

    count_accuracy: float = 0.0
    confusion: dict = field(default_factory=dict)
    per_m: dict = field(default_factory=dict)
    mape_bin_edges: list = field(default_factory=list)
    mape_by_bin_per_m: dict = field(default_factory=dict)
    n_samples: int = 0
    n_matched: int = 0

    def to_json_dict(self) -> dict:
        return {
            "count_accuracy": self.count_accuracy,
            "confusion": {f"{t}->{p}": n for (t, p), n in sorted(self.confusion.items())},
            "per_m": {str(m): v for m, v in sorted(self.per_m.items())},
            "mape_bin_edges": self.mape_bin_edges,
            "mape_by_bin_per_m": {str(m): v for m, v in sorted(self.mape_by_bin_per_m.items())},
            "n_samples": self.n_samples,
            "n_matched": self.n_matched,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def format_table(self) -> str:
        lines = [
            f"samples: {self.n_samples}   matched counts: {self.n_matched}",
            f"count accuracy: {self.count_accuracy:.4f}",
            "  M      n   MAE F [N]   MAE alpha [deg]   MAE tau [deg]   |sum f| [N]   |sum f|/<F>",
        ]
        for m in sorted(self.per_m):
            v = self.per_m[m]
            lines.append(
                f"  {m}  {v['n']:5d}   {v['mae_magnitude']:9.4f}   {v['mae_impact_deg']:15.3f}"
                f"   {v['mae_tangent_deg']:13.3f}   {v['mean_net_force']:11.4f}   {v['mean_net_force_rel']:11.4f}"
            )
        return "\n".join(lines)


def evaluate_forces(
    preds: list[ForceList | None],
    truths: list[ForceList],
    pred_ms: list[int] | None = None,
    *,
    mape_bins: int = DEFAULT_MAPE_BINS,
    mape_range: tuple[float, float] = DEFAULT_MAPE_RANGE,
) -> EvalReport:
    """Score predictions against labels.

    preds[i] may be None when only a count prediction exists for sample i;
    pred_ms defaults to the lengths of the predicted lists. Per-force
    errors aggregate over samples whose predicted count matches the truth.
    MAPE is binned by the truth list's mean magnitude in equal-width bins
    over mape_range.
    """
    if pred_ms is None:
        pred_ms = [len(p) if p is not None else -1 for p in preds]
    truth_ms = [len(t) for t in truths]
    acc, confusion = count_accuracy(pred_ms, truth_ms)

    edges = np.linspace(mape_range[0], mape_range[1], mape_bins + 1)
    groups: dict[int, dict[str, list]] = {}
    matched = 0
    for pred, truth in zip(preds, truths):
        if pred is None or len(pred) != len(truth):
            continue
        matched += 1
        m = len(truth)
        g = groups.setdefault(
            m,
            {"pf": [], "pa": [], "pt": [], "tf": [], "ta": [], "tt": [], "lists": [], "meanF": []},
        )
        pf, pa, pt, tf, ta, tt = _paired_arrays(pred, truth)
        g["pf"].append(pf)
        g["pa"].append(pa)
        g["pt"].append(pt)
        g["tf"].append(tf)
        g["ta"].append(ta)
        g["tt"].append(tt)
        g["lists"].append(pred)
        g["meanF"].append(truth.mean_magnitude())

    per_m = {}
    mape_per_m = {}
    for m, g in groups.items():
        pf = np.concatenate(g["pf"])
        tf = np.concatenate(g["tf"])
        pa = np.degrees(np.concatenate(g["pa"]))
        ta = np.degrees(np.concatenate(g["ta"]))
        pt = np.degrees(np.concatenate(g["pt"]))
        tt = np.degrees(np.concatenate(g["tt"]))
        net, net_rel = net_force_stats(g["lists"])
        per_m[m] = {
            "n": len(g["lists"]),
            "mae_magnitude": magnitude_mae(pf, tf),
            "mae_impact_deg": angle_mae(pa, ta),
            "mae_tangent_deg": angle_mae(pt, tt),
            "mean_net_force": net,
            "mean_net_force_rel": net_rel,
        }
        bins: list[float | None] = []
        mean_f = np.array(g["meanF"])
        which = np.clip(np.searchsorted(edges, mean_f, side="right") - 1, 0, mape_bins - 1)
        for b in range(mape_bins):
            sel = which == b
            if not sel.any():
                bins.append(None)
                continue
            pv = np.concatenate([g["pf"][i] for i in np.flatnonzero(sel)])
            tv = np.concatenate([g["tf"][i] for i in np.flatnonzero(sel)])
            bins.append(magnitude_mape(pv, tv))
        mape_per_m[m] = bins

    return EvalReport(
        count_accuracy=acc,
        confusion=confusion,
        per_m=per_m,
        mape_bin_edges=[float(e) for e in edges],
        mape_by_bin_per_m=mape_per_m,
        n_samples=len(truths),
        n_matched=matched,
    )
