"""Evaluation metrics and the frozen-feature linear probe."""

import dataclasses

import numpy as np

from .. import autodiff as ad
from .. import nn


@dataclasses.dataclass
class EvalReport:
    acc7: float        # percent; NaN for binary tasks
    acc2: float        # percent
    f1: float          # percent
    precision: float   # percent
    recall: float      # percent
    mae: float
    corr: float
    n: int

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self):
        for name in ("acc2", "f1", "precision", "recall"):
            v = getattr(self, name)
            assert -1e-9 <= v <= 100 + 1e-9, f"{name} out of range: {v}"
        if not np.isnan(self.acc7):
            assert -1e-9 <= self.acc7 <= 100 + 1e-9
        assert self.mae >= 0
        assert -1 - 1e-9 <= self.corr <= 1 + 1e-9
        return self


def level_accuracy(preds, labels, lo=-3, hi=3):
    """Accuracy after rounding both sides to integer levels clamped to [lo, hi]."""
    p = np.clip(np.rint(np.asarray(preds, dtype=np.float64)), lo, hi)
    y = np.clip(np.rint(np.asarray(labels, dtype=np.float64)), lo, hi)
    return 100.0 * float((p == y).mean())


def binary_prf(pred_pos, true_pos):
    """Precision/recall/F1 (percent) for boolean predictions."""
    pred_pos = np.asarray(pred_pos, dtype=bool)
    true_pos = np.asarray(true_pos, dtype=bool)
    tp = int((pred_pos & true_pos).sum())
    fp = int((pred_pos & ~true_pos).sum())
    fn = int((~pred_pos & true_pos).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return 100.0 * precision, 100.0 * recall, 100.0 * f1


def mean_absolute_error(preds, labels):
    return float(np.abs(np.asarray(preds) - np.asarray(labels)).mean())


def pearson_corr(preds, labels):
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    sp, sy = p.std(), y.std()
    if sp == 0.0 or sy == 0.0:
        return 0.0
    return float(((p - p.mean()) * (y - y.mean())).mean() / (sp * sy))


def regression_report(preds, labels, lo=-3, hi=3):
    """Score-regression metrics: level accuracy, neg-vs-nonneg binarization."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    pred_pos = preds >= 0.0
    true_pos = labels >= 0.0
    precision, recall, f1 = binary_prf(pred_pos, true_pos)
    return EvalReport(
        acc7=level_accuracy(preds, labels, lo, hi),
        acc2=100.0 * float((pred_pos == true_pos).mean()),
        f1=f1, precision=precision, recall=recall,
        mae=mean_absolute_error(preds, labels),
        corr=pearson_corr(preds, labels),
        n=len(preds),
    ).validate()


def binary_report(prob_pos, labels):
    """Two-class metrics; prob_pos is the predicted probability of class 1."""
    prob_pos = np.asarray(prob_pos, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    pred_pos = prob_pos >= 0.5
    true_pos = labels >= 0.5
    precision, recall, f1 = binary_prf(pred_pos, true_pos)
    return EvalReport(
        acc7=float("nan"),
        acc2=100.0 * float((pred_pos == true_pos).mean()),
        f1=f1, precision=precision, recall=recall,
        mae=mean_absolute_error(prob_pos, labels),
        corr=pearson_corr(prob_pos, labels),
        n=len(labels),
    ).validate()


def linear_probe_accuracy(train_x, train_y, test_x, test_y, num_classes,
                          seed=0, steps=300, lr=0.1):
    """Multinomial logistic probe on frozen features; returns percent accuracy.

    Features are standardized with train statistics; the probe is trained
    full-batch with Adam, deterministically from the seed.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0) + 1e-8
    train_x = (train_x - mu) / sd
    test_x = (test_x - mu) / sd

    rng = np.random.default_rng(seed)
    lin = nn.Linear(train_x.shape[1], num_classes, rng)
    opt = nn.Adam(list(lin.named_parameters()), lr=lr)
    y_idx = np.asarray(train_y, dtype=np.int64)
    xt = ad.Tensor(train_x)
    rows = np.arange(len(y_idx))
    for _ in range(steps):
        opt.zero_grad()
        logits = lin(xt)
        nll = ad.mean(ad.logsumexp(logits, axis=-1) - logits[rows, y_idx])
        nll.backward()
        opt.step()
    with ad.no_grad():
        test_logits = lin(ad.Tensor(test_x)).data
    pred = test_logits.argmax(axis=1)
    return 100.0 * float((pred == np.asarray(test_y)).mean())
