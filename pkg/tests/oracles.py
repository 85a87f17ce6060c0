"""Independent reference computations shared by the unit tests and the
acceptance run."""
import math

import numpy as np

from bosc import nn
from bosc.backdoor import MATCHED, TaintPlan, inject_trigger
from bosc.inference import ScoreKind, aggregate_prediction, decide, score, tentative_prediction
from bosc.metrics import au_roc, eer, open_set_curve, pairwise_auc
from bosc.training import LossConfig, bosc_loss

# small net touching every layer kind, including a strided conv
GRAD_LAYERS = [
    {"type": "conv", "out": 2, "kernel": 3, "stride": 1},
    {"type": "relu"},
    {"type": "maxpool", "size": 2},
    {"type": "conv", "out": 3, "kernel": 3, "stride": 2},
    {"type": "tanh"},
    {"type": "flatten"},
    {"type": "dense", "out": None},
]


def _same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(seed, h=1e-6, batch=3, shape=(8, 8, 2), classes=4):
    """Central differences against backward() for every parameter entry of a
    random float64 model. Coordinates whose +-h perturbation flips a ReLU or
    a pool argmax are skipped (the loss has a kink there).

    Returns (worst per-layer relative error, number of skipped coordinates)."""
    rng = np.random.default_rng(seed)
    model = nn.init_model(classes, shape, GRAD_LAYERS, seed=seed, dtype=np.float64)
    for p in model.params:
        if "b" in p:
            p["b"] = rng.normal(0, 0.1, size=p["b"].shape)
    x = rng.normal(size=(batch, *shape))
    targets = rng.integers(0, classes, size=batch)
    weights = rng.uniform(0.1, 1.0, size=batch)
    _, grads = nn.weighted_ce_grad(model, x, targets, weights)
    base_pattern = nn.activation_pattern(model, x)

    def loss():
        return nn.weighted_ce(nn.forward(model, x), targets, weights)[0]

    worst, skipped = 0.0, 0
    for li, p in enumerate(model.params):
        for name, arr in p.items():
            num = np.zeros_like(arr)
            keep = np.ones(arr.shape, bool)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up, pat_up = loss(), nn.activation_pattern(model, x)
                arr[idx] = old - h
                down, pat_down = loss(), nn.activation_pattern(model, x)
                arr[idx] = old
                if not (_same_pattern(pat_up, base_pattern) and _same_pattern(pat_down, base_pattern)):
                    keep[idx] = False
                    skipped += 1
                    continue
                num[idx] = (up - down) / (2 * h)
            a, b = grads[li][name][keep], num[keep]
            denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
            worst = max(worst, float(np.linalg.norm(a - b) / denom))
    return worst, skipped


def metric_case(seed):
    """Random in/out score sets with ties; returns (trapezoid AU-ROC, pairwise)."""
    rng = np.random.default_rng(seed)
    n_in, n_out = rng.integers(1, 500, size=2)
    grid = rng.integers(2, 60)
    # coarse rounding creates plenty of ties
    xi_in = np.round(rng.normal(rng.uniform(-1, 2), 1.0, n_in) * grid) / grid
    xi_out = np.round(rng.normal(0.0, rng.uniform(0.5, 2), n_out) * grid) / grid
    return au_roc(open_set_curve(xi_in, xi_out)), pairwise_auc(xi_in, xi_out)


def eer_cases():
    separable = eer(open_set_curve([5.0, 6.0, 7.0], [1.0, 2.0]))
    same = eer(open_set_curve([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]))
    return separable, same


def formula_cases():
    """(name, computed, expected) triples checked exactly within 1e-6."""
    out = []
    x5, t1 = np.full((4, 4, 3), 0.5), np.ones((4, 4, 3))
    out.append(("injection x=.5 t=1 a=.1", float(inject_trigger(x5, t1, 0.1).max()), 0.55))
    out.append(("injection a=0 is identity", float(np.abs(inject_trigger(x5, t1, 0.0) - x5).max()), 0.0))
    out.append(("injection a=1 is the trigger", float(np.abs(inject_trigger(x5, t1, 1.0) - t1).max()), 0.0))

    out.append(("tentative prediction skips backdoor", int(tentative_prediction(np.array([2.0, 5.0, 1.0, 9.0]))), 1))
    out.append(("accept at xi > nu", int(decide(1, 7.1, 5.0)), 1))
    out.append(("reject at xi == nu", int(decide(1, 5.0, 5.0)), -1))

    M = np.array([[0.2, 0.1, 5.0], [4.0, 0.3, 0.1]])
    y = 0  # first class, 0-based
    out.append(("CLS-M hand value", float(score(M, None, y, ScoreKind.CLS_M)), 7.1))
    out.append(("TLS-M hand value", float(score(M, None, y, ScoreKind.TLS_M)), 5.0))
    out.append(("MLS-M hand value", float(score(M, None, y, ScoreKind.MLS_M)), 5.0))
    clean = np.array([3.0, 1.0, 0.0])
    out.append(("MLS hand value", float(score(None, clean, 0, ScoreKind.MLS)), 3.0))
    out.append(("MSP hand value", float(score(None, clean, 0, ScoreKind.MSP)), 1.0 / (1.0 + math.exp(-2.0))))
    out.append(("column-sum aggregate", int(aggregate_prediction(M)), 0))

    # 2-class toy: clean sample with p=0.5 on its label, matched sample with p=0.25 on backdoor
    logits = np.log(np.array([[0.5, 0.25, 0.25], [0.375, 0.375, 0.25]]))
    plan = TaintPlan(kind=np.array([0, MATCHED]), trigger=np.array([-1, 1]), partner=np.array([-1, -1]),
                     labels=np.array([0, 1]), effective=np.array([0, 2]), num_classes=2)
    total, _ = bosc_loss(logits, plan, LossConfig(0.1, 0.1))
    out.append(("loss hand value", total, -math.log(0.5) + 0.1 * -math.log(0.25)))

    # in = {3, 1}, out = {2}: at nu = 2.5 one in-set and the out-of-set sample are rejected
    curve = open_set_curve([3.0, 1.0], [2.0], correct=[True, False])
    i = int(np.flatnonzero(curve.nu == 2.5)[0])
    out.append(("FPR at nu=2.5", float(curve.fpr[i]), 0.5))
    out.append(("TPR at nu=2.5", float(curve.tpr[i]), 1.0))
    out.append(("CCR at nu=2.5", float(curve.ccr[i]), 0.5))
    j = int(np.flatnonzero(curve.nu == 1.5)[0])
    out.append(("CCR at nu=1.5", float(curve.ccr[j]), 0.5))
    out.append(("FPR at nu=1.5", float(curve.fpr[j]), 0.5))
    out.append(("TPR at nu=1.5", float(curve.tpr[j]), 0.0))
    return out
