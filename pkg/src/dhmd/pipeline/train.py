"""Training/evaluation loop: seeded batching, Adam optimization, per-epoch
validation and exports, best-checkpoint retention, and resume support."""

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..datamodel import MODALITIES, collate, generate_synthetic, load_all_splits
from ..dictionary import export_activations
from ..graph_distill import EdgeEMA
from . import exports
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import binary_report, linear_probe_accuracy, regression_report
from .model import COMPONENT_NAMES, DhmdModel, ModelSpec, spec_from_dataset, total_loss


class TrainingDiverged(RuntimeError):
    pass


def resolve_dataset(cfg):
    """Dataset directory when configured, synthetic task otherwise."""
    if cfg.data:
        splits, manifest = load_all_splits(cfg.data)
        return splits, manifest
    ds = generate_synthetic(cfg.synthetic_spec())
    return ds.splits, ds.manifest()


def build_model(cfg, spec):
    rng = np.random.default_rng([cfg.seed, 0])
    return DhmdModel(cfg, spec, rng)


def batches(samples, batch_size, order=None):
    idx = np.arange(len(samples)) if order is None else order
    for start in range(0, len(idx), batch_size):
        chunk = [samples[i] for i in idx[start:start + batch_size]]
        yield collate(chunk)


def evaluate_model(model, samples, batch_size=64, collect_alpha=False):
    """Forward the split and compute the task report (no gradients)."""
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    preds, labels = [], []
    alpha_acc = {}
    class_acc = []
    for batch in batches(samples, batch_size):
        if collect_alpha:
            with ad.no_grad():
                out = model.forward(batch)
            for key, arr in out.diagnostics.get("alpha", {}).items():
                alpha_acc.setdefault(key, []).append(arr)
            class_acc.append(batch.class_ids)
            if model.spec.task == "regression":
                preds.append(out.prediction.data.copy())
            else:
                logits = out.prediction.data
                e = np.exp(logits - logits.max(axis=1, keepdims=True))
                preds.append((e / e.sum(axis=1, keepdims=True))[:, 1])
        else:
            preds.append(model.predict_scores(batch))
        labels.append(batch.labels)
    preds = np.concatenate(preds)
    labels = np.concatenate(labels)
    if model.spec.task == "regression":
        report = regression_report(preds, labels, model.spec.label_lo,
                                   model.spec.label_hi)
    else:
        report = binary_report(preds, labels)
    extras = {}
    if collect_alpha and alpha_acc:
        extras["alpha"] = {k: np.concatenate(v) for k, v in alpha_acc.items()}
        extras["class_ids"] = np.concatenate(class_acc)
    return report, extras


def gradient_flow_check(model, batch):
    """Every active parameter group must receive a nonzero gradient."""
    model.zero_grad()
    out = model.forward(batch)
    loss = total_loss(out.components, model.cfg.lambda1, model.cfg.lambda2,
                      model.cfg.lambda3)
    if not np.isfinite(loss.data):
        raise TrainingDiverged(
            "non-finite loss at startup: "
            f"{ {k: float(v.data) for k, v in out.components.items()} }")
    loss.backward()
    dead = []
    groups = {}
    for name, p in model.named_parameters():
        group = name.split(".")[0]
        grad_norm = 0.0 if p.grad is None else float(np.abs(p.grad).max())
        groups[group] = max(groups.get(group, 0.0), grad_norm)
    for group, gmax in groups.items():
        if gmax == 0.0:
            dead.append(group)
    model.zero_grad()
    if dead:
        raise RuntimeError(f"parameter groups with zero gradient at startup: {dead}")
    return groups


def _selection_key(report, task):
    # regression: MAE is far less noisy than the rounded level accuracy
    if task == "binary":
        return (report.acc2, -report.mae)
    return (-report.mae, report.acc7)


@dataclasses.dataclass
class TrainResult:
    run_dir: str
    best_epoch: int
    test_report: object
    valid_report: object
    history: list
    model: object


class Trainer:
    def __init__(self, cfg, splits=None, manifest=None, run_dir=None):
        self.cfg = cfg
        if splits is None:
            splits, manifest = resolve_dataset(cfg)
        self.splits = splits
        self.manifest = manifest
        self.spec = spec_from_dataset(manifest, splits)
        self.run_dir = Path(run_dir or cfg.out or "runs/run")
        self.model = build_model(cfg, self.spec)
        self.optimizer = nn.Adam(list(self.model.named_parameters()), lr=cfg.lr)
        self.edge_ema = {"HoGD": EdgeEMA(), "HeGD": EdgeEMA()}
        self.history = []
        self._start_epoch = 0
        self._best = None   # (key, epoch, arrays)

    # ------------------------------------------------------------------
    def _component_values(self, comps):
        return {f"loss_{k}": float(comps[k].data) for k in COMPONENT_NAMES}

    def _train_epoch(self, epoch):
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, 17, epoch])
        order = rng.permutation(len(self.splits["train"]))
        sums = {f"loss_{k}": 0.0 for k in COMPONENT_NAMES}
        sums["loss_total"] = 0.0
        count = 0
        for step, batch in enumerate(batches(self.splits["train"], cfg.batch_size,
                                             order)):
            self.optimizer.zero_grad()
            out = self.model.forward(batch)
            loss = total_loss(out.components, cfg.lambda1, cfg.lambda2, cfg.lambda3)
            val = float(loss.data)
            if not np.isfinite(val):
                breakdown = self._component_values(out.components)
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}: {breakdown}")
            loss.backward()
            self.optimizer.step()
            for k, v in self._component_values(out.components).items():
                sums[k] += v
            sums["loss_total"] += val
            count += 1
            if cfg.gd:
                if "gd_ho" in out.diagnostics:
                    self.edge_ema["HoGD"].update(out.diagnostics["gd_ho"]["W"])
                if "gd_he" in out.diagnostics:
                    self.edge_ema["HeGD"].update(out.diagnostics["gd_he"]["W"])
        return {k: v / max(count, 1) for k, v in sums.items()}

    def _write_metrics_row(self, row):
        path = self.run_dir / "metrics.csv"
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row.keys()))
            if new:
                writer.writeheader()
            writer.writerow(row)

    def _export_epoch(self, epoch, extras):
        if self.cfg.gd:
            for unit, ema in self.edge_ema.items():
                if ema.value is not None:
                    exports.append_edge_line(self.run_dir / "edges.jsonl",
                                             epoch, unit, ema.value)
        if self.cfg.dm and extras.get("alpha"):
            rows = export_activations(extras["alpha"], extras["class_ids"])
            exports.write_activations(self.run_dir / "activations.jsonl", rows)

    def _snapshot_arrays(self):
        arrays = dict(self.model.state_arrays())
        arrays.update(self.optimizer.state_arrays())
        return {k: v.copy() for k, v in arrays.items()}

    def _meta(self, epoch_next):
        return {
            "config": self.cfg.to_dict(),
            "model_spec": self.spec.to_dict(),
            "epoch_next": int(epoch_next),
            "edge_ema": {unit: (None if ema.value is None
                                else [[float(v) for v in row] for row in ema.value])
                         for unit, ema in self.edge_ema.items()},
        }

    def _save(self, path, arrays, epoch_next):
        save_checkpoint(path, arrays, self._meta(epoch_next))

    def load_resume(self, path):
        arrays, meta = load_checkpoint(path)
        saved_spec = ModelSpec.from_dict(meta["model_spec"])
        if saved_spec.to_dict() != self.spec.to_dict():
            raise ValueError("checkpoint model spec does not match the dataset")
        model_arrays = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
        adam_arrays = {k: v for k, v in arrays.items() if k.startswith("adam.")}
        self.model.load_state_arrays(model_arrays)
        if adam_arrays:
            self.optimizer.load_state_arrays(adam_arrays)
        for unit, val in meta.get("edge_ema", {}).items():
            if val is not None:
                self.edge_ema[unit].value = np.asarray(val, dtype=np.float64)
        self._start_epoch = int(meta["epoch_next"])
        return meta

    # ------------------------------------------------------------------
    def run(self, resume=None):
        cfg = self.cfg
        self.run_dir.mkdir(parents=True, exist_ok=True)
        cfg.to_json(self.run_dir / "config.json")
        if resume:
            self.load_resume(resume)

        if cfg.epochs > self._start_epoch and len(self.splits["train"]):
            probe_batch = collate(self.splits["train"][:min(8, len(self.splits["train"]))])
            gradient_flow_check(self.model, probe_batch)

        best_epoch = -1
        for epoch in range(self._start_epoch, cfg.epochs):
            train_losses = self._train_epoch(epoch)
            val_report, extras = evaluate_model(
                self.model, self.splits["valid"], collect_alpha=cfg.dm)
            row = {"epoch": epoch, **{k: round(v, 6) for k, v in train_losses.items()},
                   "val_acc7": val_report.acc7, "val_acc2": val_report.acc2,
                   "val_f1": val_report.f1, "val_mae": val_report.mae,
                   "val_corr": val_report.corr}
            self.history.append(row)
            self._write_metrics_row(row)
            self._export_epoch(epoch, extras)
            key = _selection_key(val_report, self.spec.task)
            if self._best is None or key > self._best[0]:
                self._best = (key, epoch, self._snapshot_arrays())
                best_epoch = epoch
            self._save(self.run_dir / "checkpoint_last.bin", self._snapshot_arrays(),
                       epoch + 1)

        if self._best is not None:
            model_arrays = {k: v for k, v in self._best[2].items()
                            if not k.startswith("adam.")}
            self.model.load_state_arrays(model_arrays)
            self._save(self.run_dir / "checkpoint.bin", self._best[2], cfg.epochs)
            best_epoch = self._best[1]
        else:
            # untrained model (epochs == 0): persist the initial state
            self._save(self.run_dir / "checkpoint.bin", self._snapshot_arrays(), 0)

        valid_report, _ = evaluate_model(self.model, self.splits["valid"])
        test_report, _ = evaluate_model(self.model, self.splits["test"])
        with open(self.run_dir / "report.json", "w") as fh:
            json.dump({"best_epoch": best_epoch,
                       "valid": valid_report.to_dict(),
                       "test": test_report.to_dict()}, fh, indent=2)
            fh.write("\n")

        if cfg.ca and self.splits["test"]:
            sample = self.splits["test"][0]
            batch = collate([sample])
            with ad.no_grad():
                out = self.model.forward(batch, collect_attention=True)
            maps = {pair: arr[0] for pair, arr in
                    out.diagnostics.get("attention", {}).items()}
            if maps:
                exports.write_attention(self.run_dir / "attention",
                                        sample.sample_id, maps)

        if cfg.plots and self.history:
            exports.plot_loss_curves(self.history, self.run_dir / "loss_curves.png")
            edge_path = self.run_dir / "edges.jsonl"
            if edge_path.exists():
                exports.plot_edge_trajectories(
                    exports.read_edge_lines(edge_path),
                    self.run_dir / "edge_trajectories.png")

        return TrainResult(run_dir=str(self.run_dir), best_epoch=best_epoch,
                           test_report=test_report, valid_report=valid_report,
                           history=self.history, model=self.model)


def probe_accuracies(model, splits, num_classes, seed=0, batch_size=128):
    """Per-modality linear-probe accuracy (percent) of pooled features."""
    feats = {m: {"train": [], "test": []} for m in MODALITIES}
    ys = {"train": [], "test": []}
    for split in ("train", "test"):
        for batch in batches(splits[split], batch_size):
            pf = model.probe_features(batch)
            for m in MODALITIES:
                feats[m][split].append(pf[m])
            ys[split].append(batch.class_ids)
    y_train = np.concatenate(ys["train"])
    y_test = np.concatenate(ys["test"])
    out = {}
    for m in MODALITIES:
        out[m] = linear_probe_accuracy(
            np.concatenate(feats[m]["train"]), y_train,
            np.concatenate(feats[m]["test"]), y_test,
            num_classes, seed=seed)
    return out
