"""Open-set metrics.

Out-of-set is the positive event. For a threshold nu a sample is rejected
when xi < nu, so

    FPR(nu) = |{in-set: xi < nu}| / |D_k|
    TPR(nu) = |{out-of-set: xi < nu}| / |D_u|
    CCR(nu) = |{in-set: xi >= nu and y* == y}| / |D_k|

OSCR is CCR plotted against FNR = 1 - TPR.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .inference import REJECT, EvalRecords, ScoreKind, decide

OSCR_AXES = "ccr_vs_fnr"


class EvaluationError(ValueError):
    pass


@dataclass
class CurvePoint:
    nu: float
    fpr: float
    tpr: float
    fnr: float
    ccr: float


@dataclass
class Curve:
    """Threshold sweep, sorted by increasing nu (so FPR/TPR non-decreasing,
    CCR non-increasing)."""

    nu: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    ccr: np.ndarray

    @property
    def fnr(self):
        return 1.0 - self.tpr

    def points(self):
        return [CurvePoint(float(a), float(b), float(c), float(1.0 - c), float(d))
                for a, b, c, d in zip(self.nu, self.fpr, self.tpr, self.ccr)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["nu", "fpr", "tpr", "fnr", "ccr"])
        for p in self.points():
            w.writerow([repr(p.nu), repr(p.fpr), repr(p.tpr), repr(p.fnr), repr(p.ccr)])
        return buf.getvalue()


def _thresholds(scores):
    u = np.unique(scores)
    mids = (u[:-1] + u[1:]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def open_set_curve(xi_in, xi_out, correct=None) -> Curve:
    """Sweep nu over -inf, the midpoints between consecutive distinct scores,
    and +inf. ``correct`` flags in-set samples with y* == y (defaults to all)."""
    xi_in = np.asarray(xi_in, dtype=np.float64)
    xi_out = np.asarray(xi_out, dtype=np.float64)
    if xi_in.size == 0 or xi_out.size == 0:
        raise EvaluationError("need at least one in-set and one out-of-set score")
    correct = np.ones(xi_in.size, bool) if correct is None else np.asarray(correct, bool)
    nu = _thresholds(np.concatenate([xi_in, xi_out]))
    s_in = np.sort(xi_in)
    s_out = np.sort(xi_out)
    s_ok = np.sort(xi_in[correct])
    fpr = np.searchsorted(s_in, nu, side="left") / xi_in.size
    tpr = np.searchsorted(s_out, nu, side="left") / xi_out.size
    ccr = (s_ok.size - np.searchsorted(s_ok, nu, side="left")) / xi_in.size
    return Curve(nu, fpr, tpr, ccr)


def _split(records: EvalRecords, kind):
    xi = records.xi(kind)
    inset = records.labels >= 0
    correct = records.y_star[inset] == records.labels[inset]
    return xi[inset], xi[~inset], correct


def roc_curve(records: EvalRecords, kind=ScoreKind.CLS_M) -> Curve:
    return open_set_curve(*_split(records, kind))


def oscr_curve(records: EvalRecords, kind=ScoreKind.CLS_M) -> Curve:
    return open_set_curve(*_split(records, kind))


def area_under(x, y) -> float:
    """Trapezoidal area; ``x`` must be non-decreasing."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(np.diff(x) < 0):
        raise EvaluationError("curve is not sorted by its x-field")
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def au_roc(curve: Curve) -> float:
    return area_under(curve.fpr, curve.tpr)


def au_oscr(curve: Curve) -> float:
    # nu ascending means FNR descending; integrate over FNR in [0, 1]
    return area_under(curve.fnr[::-1], curve.ccr[::-1])


def pairwise_auc(xi_in, xi_out) -> float:
    """Brute-force P(xi_out < xi_in) + 0.5 P(tie)."""
    a = np.asarray(xi_in, dtype=np.float64)[:, None]
    b = np.asarray(xi_out, dtype=np.float64)[None, :]
    return float(((b < a).sum() + 0.5 * (b == a).sum()) / (a.size * b.size))


def eer(curve: Curve) -> float:
    """Rate where FPR == FNR, linearly interpolated between sweep points."""
    d = curve.fpr - curve.fnr  # rises from -1 to +1 with nu
    i = int(np.argmax(d >= 0))
    if d[i] == 0 or i == 0:
        return float(curve.fpr[i])
    t = -d[i - 1] / (d[i] - d[i - 1])
    return float(curve.fpr[i - 1] + t * (curve.fpr[i] - curve.fpr[i - 1]))


def threshold_at_fpr(xi_in, target_fpr) -> float:
    """Largest nu with FPR(nu) <= target, i.e. the floor(target*n)-th order
    statistic of the in-set scores (0-based); +inf if every sample may be
    rejected."""
    s = np.sort(np.asarray(xi_in, dtype=np.float64))
    if s.size == 0:
        raise EvaluationError("no in-set scores to calibrate on")
    if not 0 <= target_fpr <= 1:
        raise EvaluationError("target FPR must lie in [0, 1]")
    m = math.floor(target_fpr * s.size + 1e-9)
    return float(s[m]) if m < s.size else math.inf


def rates_at(xi_in, xi_out, correct, nu):
    xi_in = np.asarray(xi_in)
    xi_out = np.asarray(xi_out)
    fpr = float((xi_in < nu).mean())
    tpr = float((xi_out < nu).mean())
    ccr = float(((xi_in >= nu) & np.asarray(correct)).mean())
    return fpr, tpr, ccr


def confusion_with_rejection(labels, decisions, num_classes) -> np.ndarray:
    """Row-normalised (N+1)x(N+1) matrix. Rows: in-set classes then
    out-of-set; columns: predicted classes then reject. Rows with no samples
    are NaN."""
    labels = np.asarray(labels)
    decisions = np.asarray(decisions)
    n = num_classes
    counts = np.zeros((n + 1, n + 1))
    rows = np.where(labels >= 0, labels, n)
    cols = np.where(decisions == REJECT, n, decisions)
    np.add.at(counts, (rows, cols), 1)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, counts / totals, np.nan)


def confusion_to_csv(matrix, class_names=None) -> str:
    n = matrix.shape[0] - 1
    names = list(class_names or [str(i) for i in range(n)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + names + ["reject"])
    for i, row in enumerate(matrix):
        w.writerow([names[i] if i < n else "out_of_set"] + [f"{v:.6f}" for v in row])
    return buf.getvalue()


@dataclass
class EvalSummary:
    score_kind: str
    accuracy: float
    au_roc: float
    au_oscr: float
    eer: float
    target_fpr: float
    nu: float
    fpr_at_nu: float
    tpr_at_fpr: float
    ccr_at_fpr: float
    aggregate_agreement: float
    confusion: np.ndarray = field(repr=False, default=None)
    oscr_axes: str = OSCR_AXES

    FIELDS = ("score_kind", "accuracy", "au_roc", "au_oscr", "eer", "target_fpr", "nu",
              "fpr_at_nu", "tpr_at_fpr", "ccr_at_fpr", "aggregate_agreement", "oscr_axes")

    def row(self):
        return {f: getattr(self, f) for f in self.FIELDS}


def summarize(records: EvalRecords, kind=ScoreKind.CLS_M, target_fpr=0.05, calibration=None) -> EvalSummary:
    """All metrics for one score kind. ``nu`` is calibrated at ``target_fpr``
    on ``calibration`` in-set scores (defaults to the in-set test scores)."""
    kind = ScoreKind(kind)
    xi_in, xi_out, correct = _split(records, kind)
    curve = open_set_curve(xi_in, xi_out, correct)
    cal = xi_in if calibration is None else np.asarray(calibration)
    nu = threshold_at_fpr(cal, target_fpr)
    fpr, tpr, ccr = rates_at(xi_in, xi_out, correct, nu)
    n = records.num_classes or int(max(records.labels.max(), records.y_star.max())) + 1
    conf = confusion_with_rejection(records.labels, decide(records.y_star, records.xi(kind), nu), n)
    inset = records.labels >= 0
    return EvalSummary(
        score_kind=kind.value,
        accuracy=float(correct.mean()),
        au_roc=au_roc(curve),
        au_oscr=au_oscr(curve),
        eer=eer(curve),
        target_fpr=float(target_fpr),
        nu=nu,
        fpr_at_nu=fpr,
        tpr_at_fpr=tpr,
        ccr_at_fpr=ccr,
        aggregate_agreement=float((records.aggregate[inset] == records.y_star[inset]).mean()),
        confusion=conf,
    )
