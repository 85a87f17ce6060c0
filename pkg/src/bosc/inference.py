"""Trigger-probing inference: tentative prediction, output matrix, rejection
scores and the accept/reject rule.

Class indices are 0-based; the backdoor output is index N. A rejected
sample is reported as ``REJECT``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .backdoor import TriggerSet, inject_trigger
from .checkpoint import Classifier
from .nn import log_softmax
from .processing import ProcessingOp, process_image

REJECT = -1


class ScoreKind(str, Enum):
    MSP = "msp"
    MLS = "mls"
    MLS_M = "mls-m"
    TLS_M = "tls-m"
    CLS_M = "cls-m"

    @classmethod
    def parse(cls, text) -> list:
        """``all``, a comma-separated list of score names, or an iterable of
        names/kinds."""
        if isinstance(text, ScoreKind):
            return [text]
        if isinstance(text, (list, tuple)):
            out = []
            for t in text:
                out += [k for k in cls.parse(t) if k not in out]
            return out
        text = str(text).lower()
        if text == "all":
            return list(cls)
        return [cls(t.strip()) for t in text.split(",")]


DEFAULT_SCORE = ScoreKind.CLS_M
MATRIX_SCORES = (ScoreKind.MLS_M, ScoreKind.TLS_M, ScoreKind.CLS_M)


def tentative_prediction(logits, num_classes=None):
    """Argmax over the in-set outputs, backdoor output excluded. Ties go to the
    smallest index. Accepts a single vector or a (B, N+1) batch."""
    logits = np.asarray(logits)
    n = logits.shape[-1] - 1 if num_classes is None else num_classes
    return np.argmax(logits[..., :n], axis=-1)


def build_output_matrix(clf: Classifier, x, triggers: TriggerSet, alpha=None, batch_size=256):
    """Row i holds the logits of ``x`` tainted with trigger i. Returns (N, N+1)
    for one image or (B, N, N+1) for a batch."""
    if len(triggers) != clf.num_classes:
        raise ValueError(f"{len(triggers)} triggers for a {clf.num_classes}-class model")
    alpha = clf.alpha if alpha is None else alpha
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 3
    batch = x[None] if single else x
    n = clf.num_classes
    M = np.empty((len(batch), n, n + 1), dtype=np.float64)
    for i in range(n):
        M[:, i, :] = clf.logits(inject_trigger(batch, triggers[i], alpha), batch_size)
    return M[0] if single else M


def score(M, clean_logits, y_star, kind=DEFAULT_SCORE):
    """Rejection score; larger means more likely in-set. Vectorised over a
    leading batch axis of ``M``/``clean_logits``/``y_star``."""
    kind = ScoreKind(kind)
    y_star = np.asarray(y_star)
    if kind in (ScoreKind.MSP, ScoreKind.MLS):
        clean = np.asarray(clean_logits, dtype=np.float64)
        n = clean.shape[-1] - 1
        inset = clean[..., :n]
        if kind == ScoreKind.MLS:
            return inset.max(axis=-1)
        return np.exp(log_softmax(inset)).max(axis=-1)
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[-2]
    if kind == ScoreKind.MLS_M:
        return M.max(axis=(-2, -1))
    rows = np.take_along_axis(M, y_star[..., None, None].repeat(M.shape[-1], -1), axis=-2)[..., 0, :]
    matched_backdoor = rows[..., n]
    if kind == ScoreKind.TLS_M:
        return matched_backdoor
    column = np.take_along_axis(M, y_star[..., None, None].repeat(n, -2), axis=-1)[..., 0]
    return column.mean(axis=-1) + matched_backdoor


def decide(y_star, xi, nu):
    """Accept the tentative prediction iff xi > nu (strict)."""
    y_star = np.asarray(y_star)
    return np.where(np.asarray(xi) > nu, y_star, REJECT)


def aggregate_prediction(M):
    """Alternative prediction: argmax of the in-set column sums of M."""
    M = np.asarray(M)
    n = M.shape[-2]
    return np.argmax(M[..., :n].sum(axis=-2), axis=-1)


@dataclass
class EvalRecords:
    """Per-sample results in input order: true label (-1 for out-of-set),
    tentative prediction, and one score array per requested kind."""

    labels: np.ndarray
    y_star: np.ndarray
    scores: dict
    aggregate: np.ndarray
    sample_ids: list = field(default_factory=list)
    num_classes: int = 0

    def __len__(self):
        return len(self.labels)

    def xi(self, kind):
        return self.scores[ScoreKind(kind)]

    def decisions(self, kind, nu):
        return decide(self.y_star, self.xi(kind), nu)

    def to_csv(self, kinds=None, nu=None) -> str:
        """Score dump: sample_id,true_label,y_star,score_kind,xi,decision_at_nu."""
        kinds = [ScoreKind(k) for k in (kinds or self.scores)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "true_label", "y_star", "score_kind", "xi", "decision_at_nu"])
        for kind in kinds:
            xi = self.xi(kind)
            nu_k = nu.get(kind) if isinstance(nu, dict) else nu
            dec = decide(self.y_star, xi, nu_k) if nu_k is not None else [""] * len(xi)
            for i in range(len(self)):
                sid = self.sample_ids[i] if self.sample_ids else str(i)
                w.writerow([sid, int(self.labels[i]), int(self.y_star[i]), kind.value,
                            repr(float(xi[i])), "" if nu_k is None else int(dec[i])])
        return buf.getvalue()


def classify_dataset(clf: Classifier, triggers: TriggerSet | None, images, labels=None, kinds=None,
                     processing: ProcessingOp | None = None, sample_ids=None, batch_size=256) -> EvalRecords:
    """Run the full test procedure on every image. ``processing`` is applied to
    the images first; triggers are injected afterwards."""
    kinds = ScoreKind.parse(kinds) if kinds is not None else [DEFAULT_SCORE]
    images = np.asarray(images, dtype=np.float32)
    n = clf.num_classes
    labels = np.full(len(images), REJECT) if labels is None else np.asarray(labels)
    if len(images) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return EvalRecords(empty, empty, {k: np.zeros(0) for k in kinds}, empty, [], n)
    if processing is not None:
        images = process_image(images, processing)
    clean = clf.logits(images, batch_size).astype(np.float64)
    y_star = tentative_prediction(clean, n)
    need_matrix = any(k in MATRIX_SCORES for k in kinds) and triggers is not None
    M = build_output_matrix(clf, images, triggers, batch_size=batch_size) if need_matrix else None
    scores = {}
    for kind in kinds:
        if kind in MATRIX_SCORES and M is None:
            raise ValueError(f"score {kind.value} needs a trigger set")
        scores[kind] = score(M, clean, y_star, kind)
    agg = aggregate_prediction(M) if M is not None else y_star.copy()
    return EvalRecords(labels, y_star, scores, agg, list(sample_ids or []), n)
