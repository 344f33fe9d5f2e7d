"""Evaluation metrics, feature embeddings, t-SNE projections and report rendering."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import IoError, ShapeMismatch, TooFewSamples
from .macnn.model import MACNN, as_input_tensor
from .macnn.train import ClassifierCheckpoint, predict

log = logging.getLogger(__name__)
REPORT_SCHEMA_VERSION = 1


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class EvaluationReport:
    accuracy: float
    precision: dict[str, float]
    recall: dict[str, float]
    confusion: ConfusionMatrix
    run_meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "confusion": {"class_names": self.confusion.class_names,
                          "counts": self.confusion.counts.tolist()},
            "n_samples": self.confusion.total,
            "run_meta": self.run_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        cm = ConfusionMatrix(np.array(d["confusion"]["counts"], dtype=np.int64), d["confusion"]["class_names"])
        return cls(d["accuracy"], d["precision"], d["recall"], cm, d.get("run_meta", {}))


@dataclass
class EmbeddingProjection:
    points: np.ndarray
    labels: np.ndarray
    stage: str
    perplexity: float
    seed: int

    def silhouette(self) -> float:
        from sklearn.metrics import silhouette_score

        return float(silhouette_score(self.points, self.labels))


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
        counts[int(t), int(p)] += 1
    return counts


def report_from_predictions(y_true, y_pred, class_names: Sequence[str], run_meta: dict | None = None) -> EvaluationReport:
    """Accuracy, per-class precision/recall and confusion.

    Classes with no true samples have no recall entry and classes never
    predicted have no precision entry (rather than 0/0).
    """
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ShapeMismatch("need equally long, nonempty label arrays")
    k = len(class_names)
    counts = confusion_matrix(y_true, y_pred, k)
    diag = np.diag(counts)
    rows, cols = counts.sum(1), counts.sum(0)
    recall = {class_names[i]: float(diag[i] / rows[i]) for i in range(k) if rows[i] > 0}
    precision = {class_names[i]: float(diag[i] / cols[i]) for i in range(k) if cols[i] > 0}
    acc = float(diag.sum() / counts.sum())
    return EvaluationReport(acc, precision, recall, ConfusionMatrix(counts, list(class_names)), dict(run_meta or {}))


def evaluate_model(checkpoint: ClassifierCheckpoint, test_images, run_meta: dict | None = None) -> EvaluationReport:
    if len(test_images) == 0:
        raise ValueError("empty test set")
    y_true = np.array([im.label for im in test_images])
    y_pred, _ = predict(checkpoint, test_images)
    return report_from_predictions(y_true, y_pred, checkpoint.class_names, run_meta)


@torch.no_grad()
def extract_embeddings(model: ClassifierCheckpoint | MACNN, images, batch_size: int = 256) -> np.ndarray:
    """Post-global-average-pooling features, one row per image."""
    if isinstance(model, ClassifierCheckpoint):
        model = model.best_model()
    model.eval()
    x = as_input_tensor(images, model.cfg, dtype=next(model.parameters()).dtype)
    feats = [model.features(x[i:i + batch_size]) for i in range(0, x.shape[0], batch_size)]
    return torch.cat(feats).double().numpy()


def tsne_project(features, labels, perplexity: float = 30.0, seed: int = 0, stage: str = "final",
                 n_iter: int = 1000) -> EmbeddingProjection:
    from sklearn.manifold import TSNE

    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n <= 3 * perplexity:
        raise TooFewSamples(f"{n} samples; t-SNE with perplexity {perplexity} needs more than {3 * perplexity}")
    tsne = TSNE(n_components=2, perplexity=perplexity, max_iter=n_iter, init="pca",
                random_state=seed, method="exact" if n < 200 else "barnes_hut")
    pts = tsne.fit_transform(features)
    return EmbeddingProjection(pts, np.asarray(labels), stage, float(perplexity), int(seed))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def render_report(report: EvaluationReport, projections: Sequence[EmbeddingProjection], out_dir,
                  history: Sequence[dict] | None = None) -> dict[str, Path]:
    """Write report.json plus CSV copies and PNG plots; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    paths: dict[str, Path] = {}
    data = report.to_dict()
    data["projections"] = [
        {"stage": p.stage, "perplexity": p.perplexity, "seed": p.seed,
         "silhouette": p.silhouette() if len(set(p.labels.tolist())) > 1 else None,
         "points": p.points.tolist(), "labels": p.labels.tolist()} for p in projections]
    data["history"] = list(history or [])
    try:
        paths["json"] = out / "report.json"
        paths["json"].write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

        names = report.confusion.class_names
        paths["confusion_csv"] = out / "confusion.csv"
        _write_csv(paths["confusion_csv"], ["true\\pred"] + names,
                   [[names[i]] + row for i, row in enumerate(report.confusion.counts.tolist())])
        paths["metrics_csv"] = out / "metrics.csv"
        _write_csv(paths["metrics_csv"], ["class", "precision", "recall"],
                   [[n, report.precision.get(n, ""), report.recall.get(n, "")] for n in names])
        for p in projections:
            key = f"tsne_{p.stage}_csv"
            paths[key] = out / f"tsne_{p.stage}.csv"
            _write_csv(paths[key], ["x", "y", "label"],
                       [[a, b, int(c)] for (a, b), c in zip(p.points.tolist(), p.labels.tolist())])

        fig, ax = plt.subplots(figsize=(5, 4.5))
        im = ax.imshow(report.confusion.counts, cmap="Blues")
        for (i, j), v in np.ndenumerate(report.confusion.counts):
            ax.text(j, i, str(v), ha="center", va="center", fontsize=8)
        ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(f"accuracy {report.accuracy:.3f}")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        paths["confusion_png"] = out / "confusion.png"
        fig.savefig(paths["confusion_png"], dpi=100)
        plt.close(fig)

        fig, axes = plt.subplots(1, max(len(projections), 1), figsize=(5 * max(len(projections), 1), 4.5))
        axes = np.atleast_1d(axes)
        if not projections:
            axes[0].text(0.5, 0.5, "no embedding projections supplied", ha="center", va="center")
            axes[0].set_axis_off()
        for ax, p in zip(axes, projections):
            for lab in sorted(set(p.labels.tolist())):
                m = p.labels == lab
                name = names[lab] if 0 <= lab < len(names) else str(lab)
                ax.scatter(p.points[m, 0], p.points[m, 1], s=10, label=name)
            ax.set_title(f"t-SNE ({p.stage})")
            ax.legend(fontsize=7)
        fig.tight_layout()
        paths["tsne_png"] = out / "tsne.png"
        fig.savefig(paths["tsne_png"], dpi=100)
        plt.close(fig)

        if history:
            paths["history_csv"] = out / "training_history.csv"
            _write_csv(paths["history_csv"], ["epoch", "train_loss", "val_loss", "val_accuracy"],
                       [[h["epoch"], h["train_loss"], h["val_loss"], h["val_accuracy"]] for h in history])
            fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
            ep = [h["epoch"] for h in history]
            ax[0].plot(ep, [h["train_loss"] for h in history], label="train")
            ax[0].plot(ep, [h["val_loss"] for h in history], label="val")
            ax[0].set_xlabel("epoch")
            ax[0].set_ylabel("cross-entropy")
            ax[0].legend()
            ax[1].plot(ep, [h["val_accuracy"] for h in history])
            ax[1].set_xlabel("epoch")
            ax[1].set_ylabel("val accuracy")
            fig.tight_layout()
            paths["curves_png"] = out / "training_curves.png"
            fig.savefig(paths["curves_png"], dpi=100)
            plt.close(fig)
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    return paths
