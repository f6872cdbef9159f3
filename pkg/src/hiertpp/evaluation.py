"""ROC/AUC and the end-to-end synthetic experiment harness."""
from __future__ import annotations

import csv
import logging
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

CURVE_NAMES = ("score_a", "score_t", "score_d", "score_delta", "fs")


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending; the first is +inf
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def trapezoid_auc(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def mann_whitney_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via the rank-sum statistic."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc(scores, labels) -> RocCurve:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be equal-length vectors")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValidationError("labels must be 0 or 1")
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC needs both positive and negative labels")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    thresholds = np.unique(scores)[::-1]
    order = np.argsort(-scores, kind="mergesort")
    s_sorted, y_sorted = scores[order], labels[order]
    # cumulative counts at the last index of each distinct score
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], len(s_sorted) - 1]
    tp = np.cumsum(y_sorted == 1)[last]
    fp = np.cumsum(y_sorted == 0)[last]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return RocCurve(np.r_[np.inf, thresholds], fpr, tpr, mann_whitney_auc(scores, labels))


def binary_labels(reports) -> tuple[list, np.ndarray]:
    """Reports with a known label and their 0/1 vector (malicious = 1)."""
    known = [r for r in reports if r.label in ("benign", "malicious")]
    return known, np.array([r.label == "malicious" for r in known], dtype=int)


def curves_from_reports(reports) -> dict[str, RocCurve]:
    known, y = binary_labels(reports)
    return {name: roc_auc([getattr(r, name) for r in known], y) for name in CURVE_NAMES}


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
            w.writerow([repr(float(f)), repr(float(t)), repr(float(th))])


def write_evaluation(reports, out_dir) -> dict[str, float]:
    """aucs.csv, one roc_<name>.csv per score and roc.png; returns the AUCs."""
    from .plotting import plot_roc

    out_dir = Path(out_dir)
    _, y = binary_labels(reports)
    curves = curves_from_reports(reports)
    with open(out_dir / "aucs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["score", "auc", "n_malicious", "n_benign"])
        for name, c in curves.items():
            w.writerow([name, repr(c.auc), int(y.sum()), int(len(y) - y.sum())])
    for name, c in curves.items():
        write_roc_csv(out_dir / f"roc_{name}.csv", c)
    plot_roc(curves, out_dir / "roc.png")
    return {name: c.auc for name, c in curves.items()}


def write_training_curve(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "train_nll", "val_nll"])
        for stage, epoch, tr, va in rows:
            w.writerow([stage, epoch, repr(float(tr)), repr(float(va))])


@dataclass
class ExperimentResult:
    out_dir: Path
    aucs: dict
    seconds: float
    reports: list


def run_experiment(config, out_dir, data=None, overwrite: bool = False) -> ExperimentResult:
    """Train on benign sessions, score the test split and write a report directory.

    ``data`` is an optional ``(train_sessions, test_sessions)`` pair; by default
    the synthetic generator in ``config.synth`` supplies both.  Everything is
    written to a temporary sibling directory that is renamed into place only
    when the run succeeds.
    """
    import time

    from .plotting import plot_training_curve
    from .scoring import finalize, raw_reports, write_reports
    from .synth import synth_generate
    from .train import train

    started = time.perf_counter()
    config.validate()
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not overwrite:
            raise ValidationError(f"output directory {out_dir} exists and is not empty")
    train_sessions, test_sessions = data if data is not None else _synth(config, synth_generate)
    n_bad = sum(s.label == "malicious" for s in test_sessions)
    if n_bad == 0:
        raise ValidationError("test set has no malicious sessions; ROC is undefined")
    if n_bad == sum(s.label in ("benign", "malicious") for s in test_sessions):
        raise ValidationError("test set has no benign sessions; ROC is undefined")
    log.info("experiment seed %d, resolved config:\n%s", config.seed, config.dumps())

    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        cal = config.calendar.calendar()
        result = train(train_sessions, config.model.model_config(), config.train, config.seed, cal)
        std = result.standardizer if config.score.standardize else None
        reports = finalize(raw_reports(result.model, test_sessions, config.train.max_decode_len, cal),
                           config.score.alphas, std)
        (tmp / "config.json").write_text(config.dumps(), encoding="utf-8")
        result.model.save(tmp / "model.ckpt", result.checkpoint_extra())
        write_reports(tmp / "fraud_reports.csv", reports)
        write_training_curve(tmp / "training_curve.csv", result.curve)
        plot_training_curve(result.curve, tmp / "training_curve.png")
        aucs = write_evaluation(reports, tmp)
        if out_dir.exists():
            shutil.rmtree(out_dir)
        tmp.rename(out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    seconds = time.perf_counter() - started
    log.info("experiment done in %.1f s: %s", seconds,
             ", ".join(f"{k} {v:.4f}" for k, v in aucs.items()))
    return ExperimentResult(out_dir, aucs, seconds, reports)


def _synth(config, synth_generate):
    ds = synth_generate(config.synth)
    return ds.train, ds.test
