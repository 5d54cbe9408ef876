"""Full model assembly: decoupler -> graph distillation (homogeneous +
heterogeneous) -> dictionary matching -> fusion -> task head, with ablation
switches wired through.

Ablation semantics: with FD off, the shallow conv features feed both feature
spaces and the decoupling losses drop out. With CA off, the heterogeneous
space falls back to the raw private features (or disappears entirely when FD
is also off, leaving the pooled-shallow baseline). A disabled switch removes
its loss component from the objective exactly.
"""

import dataclasses

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..crossmodal import CrossModalReinforcer
from ..datamodel import MODALITIES
from ..decoupler import Decoupler, loss_cyc, loss_margin, loss_ort, loss_rec, pooled
from ..dictionary import SharedDictionary, contrastive_loss, dic_loss
from ..graph_distill import GDUnit

COMPONENT_NAMES = ("task", "task_fused", "task_aux", "rec", "cyc", "mar", "ort",
                   "dec", "dtl_ho", "dtl_he", "dtl", "ctr_ho", "ctr_he", "dic")


@dataclasses.dataclass
class ModelSpec:
    in_dims: dict      # modality -> raw feature dim
    task: str          # "regression" | "binary"
    num_classes: int
    label_lo: float
    label_hi: float
    pos_cap: int
    input_stats: dict = None   # modality -> {"mean": [C], "std": [C]}

    def to_dict(self):
        d = {"in_dims": {k: int(v) for k, v in self.in_dims.items()},
             "task": self.task, "num_classes": int(self.num_classes),
             "label_lo": float(self.label_lo), "label_hi": float(self.label_hi),
             "pos_cap": int(self.pos_cap)}
        if self.input_stats is not None:
            d["input_stats"] = {
                m: {"mean": [float(v) for v in st["mean"]],
                    "std": [float(v) for v in st["std"]]}
                for m, st in self.input_stats.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(in_dims={k: int(v) for k, v in d["in_dims"].items()},
                   task=d["task"], num_classes=int(d["num_classes"]),
                   label_lo=float(d["label_lo"]), label_hi=float(d["label_hi"]),
                   pos_cap=int(d["pos_cap"]),
                   input_stats=d.get("input_stats"))


def spec_from_dataset(manifest, splits):
    """Dims, task, label range, positional cap and per-channel train stats.

    Pre-extracted features arrive at arbitrary scales (embedding vs AU vs
    acoustic descriptors), so inputs are standardized per channel from the
    training split; the statistics travel with the checkpoint.
    """
    max_t = 1
    for samples in splits.values():
        for s in samples:
            for m in MODALITIES:
                max_t = max(max_t, s.modality(m).data.shape[0])
    stats = {}
    for m in MODALITIES:
        rows = [s.modality(m).data[s.modality(m).mask] for s in splits["train"]]
        if rows:
            stacked = np.concatenate(rows).astype(np.float64)
            mean = stacked.mean(axis=0)
            std = np.maximum(stacked.std(axis=0), 1e-6)
        else:
            c = manifest["feature_dims"][m]
            mean, std = np.zeros(c), np.ones(c)
        stats[m] = {"mean": mean.tolist(), "std": std.tolist()}
    lo, hi = manifest["label_range"]
    return ModelSpec(in_dims=dict(manifest["feature_dims"]), task=manifest["task"],
                     num_classes=int(manifest["num_classes"]),
                     label_lo=float(lo), label_hi=float(hi), pos_cap=max_t,
                     input_stats=stats)


@dataclasses.dataclass
class ForwardOutput:
    prediction: ad.Tensor     # [B] scores (regression) or [B,2] logits (binary)
    components: dict          # name -> scalar Tensor (zero when switched off)
    diagnostics: dict


class DhmdModel(nn.Module):
    def __init__(self, cfg, spec, rng):
        super().__init__()
        self.cfg = cfg
        self.spec = spec
        kernels = dict(zip(MODALITIES, cfg.kernel_sizes))
        self.decoupler = Decoupler(spec.in_dims, cfg.channels, kernels, rng,
                                   with_decoupling=cfg.fd)
        self.he_width = 0
        if cfg.ca:
            self.reinforcer = CrossModalReinforcer(
                cfg.channels, cfg.ca_dim, cfg.ca_heads, cfg.ca_layers,
                cfg.ca_ffn, spec.pos_cap, rng)
            self.he_width = 2 * cfg.ca_dim
        elif cfg.fd:
            self.reinforcer = None
            self.he_width = cfg.channels
        else:
            self.reinforcer = None

        self.num_outputs = 1 if spec.task == "regression" else spec.num_classes
        if cfg.gd:
            self.gd_ho = GDUnit(cfg.channels, cfg.gd_hidden, self.num_outputs, rng)
            self.gd_he = (GDUnit(self.he_width, cfg.gd_hidden, self.num_outputs, rng)
                          if self.he_width else None)
        else:
            self.gd_ho = None
            self.gd_he = None

        if cfg.dm:
            self.dict_ho = SharedDictionary(cfg.dict_size, cfg.channels, rng,
                                            "homogeneous")
            self.dict_he = (SharedDictionary(cfg.dict_size, self.he_width, rng,
                                             "heterogeneous")
                            if self.he_width else None)
        else:
            self.dict_ho = None
            self.dict_he = None

        per_mod = cfg.channels * (2 if cfg.dm else 1)
        if self.he_width:
            per_mod += self.he_width * (2 if cfg.dm and self.dict_he else 1)
        self.fused_width = per_mod * len(MODALITIES)
        self.head = nn.Linear(self.fused_width, self.num_outputs, rng)

    # ------------------------------------------------------------------
    def _task_loss(self, pred, labels):
        if self.spec.task == "regression":
            return ad.mean(ad.abs_(pred - labels))
        rows = np.arange(len(labels))
        idx = np.asarray(labels, dtype=np.int64)
        return ad.mean(ad.logsumexp(pred, axis=-1) - pred[rows, idx])

    def _standardize(self, data):
        if self.spec.input_stats is None:
            return data
        out = {}
        for m in MODALITIES:
            st = self.spec.input_stats[m]
            mu = np.asarray(st["mean"])
            sd = np.asarray(st["std"])
            out[m] = (np.asarray(data[m]) - mu) / sd
        return out

    def forward(self, batch, collect_attention=False, teacher_values=None):
        cfg = self.cfg
        masks = batch.mask
        comps = {name: ad.Tensor(0.0) for name in COMPONENT_NAMES}
        diag = {}

        shallow = self.decoupler.embed_shallow(self._standardize(batch.data), masks)
        if cfg.fd:
            df = self.decoupler.decouple(shallow)
            com, prt = df.homogeneous, df.heterogeneous
        else:
            df = None
            com, prt = shallow, shallow

        pooled_com = pooled(com, masks)
        if cfg.fd:
            pooled_prt = pooled(prt, masks)
            comps["rec"] = loss_rec(df, masks)
            comps["cyc"] = loss_cyc(df, masks)
            mar, mdiag = loss_margin(pooled_com, batch.class_ids, cfg.margin)
            comps["mar"] = mar
            comps["ort"] = loss_ort(pooled_com, pooled_prt)
            comps["dec"] = comps["rec"] + comps["cyc"] + ad.mul(
                comps["mar"] + comps["ort"], cfg.gamma)
            diag["margin_mining"] = mdiag

        he = None
        if cfg.ca:
            rf = self.reinforcer.forward(prt, masks)
            he = rf.combined
            if collect_attention:
                diag["attention"] = rf.attention
        elif cfg.fd:
            he = prt

        aux_logits = []
        if cfg.gd:
            tv = teacher_values or {}
            ho_out = self.gd_ho.forward(com, masks, list(MODALITIES),
                                        teacher_values=tv.get("ho"))
            comps["dtl_ho"] = ho_out.loss
            diag["gd_ho"] = {"W": ho_out.W, "E": ho_out.E,
                             "logits": {m: t.data for m, t in ho_out.logits.items()}}
            aux_logits.extend(ho_out.logits.values())
            if he is not None and self.gd_he is not None:
                he_out = self.gd_he.forward(he, masks, list(MODALITIES),
                                            teacher_values=tv.get("he"))
                comps["dtl_he"] = he_out.loss
                diag["gd_he"] = {"W": he_out.W, "E": he_out.E,
                                 "logits": {m: t.data for m, t in he_out.logits.items()}}
                aux_logits.extend(he_out.logits.values())
            comps["dtl"] = comps["dtl_ho"] + comps["dtl_he"]

        z_ho, z_he = {}, {}
        if cfg.dm:
            matches_ho = {m: self.dict_ho.match(com[m], masks[m]) for m in MODALITIES}
            z_ho = {m: matches_ho[m].reconstruction for m in MODALITIES}
            ctr_ho, diag_ho = contrastive_loss(z_ho, batch.class_ids, cfg.margin)
            comps["ctr_ho"] = ctr_ho
            alpha = {("ho", m): matches_ho[m].scores.data for m in MODALITIES}
            if he is not None and self.dict_he is not None:
                matches_he = {m: self.dict_he.match(he[m], masks[m])
                              for m in MODALITIES}
                z_he = {m: matches_he[m].reconstruction for m in MODALITIES}
                ctr_he, _ = contrastive_loss(z_he, batch.class_ids, cfg.margin)
                comps["ctr_he"] = ctr_he
                alpha.update({("he", m): matches_he[m].scores.data
                              for m in MODALITIES})
            comps["dic"] = dic_loss(comps["ctr_ho"], comps["ctr_he"])
            diag["alpha"] = alpha
            diag["dm_mining"] = diag_ho

        parts = []
        pooled_he = ({m: ad.masked_mean_time(he[m], masks[m]) for m in MODALITIES}
                     if he is not None else None)
        for m in MODALITIES:
            parts.append(pooled_com[m])
            if cfg.dm:
                parts.append(z_ho[m])
            if pooled_he is not None:
                parts.append(pooled_he[m])
                if cfg.dm and z_he:
                    parts.append(z_he[m])
        fused = ad.concat(parts, axis=-1)
        raw_pred = self.head(fused)
        prediction = raw_pred[:, 0] if self.spec.task == "regression" else raw_pred

        comps["task_fused"] = self._task_loss(prediction, batch.labels)
        if aux_logits:
            aux = None
            for lg in aux_logits:
                term = self._task_loss(
                    lg[:, 0] if self.spec.task == "regression" else lg, batch.labels)
                aux = term if aux is None else aux + term
            comps["task_aux"] = ad.mul(aux, 1.0 / len(aux_logits))
        comps["task"] = comps["task_fused"] + ad.mul(comps["task_aux"],
                                                     cfg.aux_task_weight)
        diag["fused_width"] = self.fused_width
        return ForwardOutput(prediction=prediction, components=comps,
                             diagnostics=diag)

    def snapshot_teachers(self, batch):
        """Current GD logit values per unit (constants for FD gradient checks)."""
        with ad.no_grad():
            out = self.forward(batch)
        snap = {}
        for unit_key, diag_key in (("ho", "gd_ho"), ("he", "gd_he")):
            if diag_key in out.diagnostics:
                snap[unit_key] = {m: arr.copy() for m, arr in
                                  out.diagnostics[diag_key]["logits"].items()}
        return snap

    def probe_features(self, batch, kind="unimodal", pool="meanmax"):
        """Pooled per-modality features for linear probing.

        ``unimodal``: the modality's full single-stream representation —
        pooled shallow conv features without FD, pooled [homogeneous;
        heterogeneous] with FD (both encoders see only that modality).
        ``homogeneous``: pooled shared-encoder features only. ``pool`` selects
        masked mean pooling or the concatenation of mean and max pooling
        (sparse cues survive the max path).
        """
        def _pool(seq, mask):
            mean = ad.masked_mean_time(seq, mask).data
            if pool == "mean":
                return mean
            mx = ad.masked_max_time(seq, mask).data
            return np.concatenate([mean, mx], axis=1)

        with ad.no_grad():
            shallow = self.decoupler.embed_shallow(self._standardize(batch.data),
                                                   batch.mask)
            if not self.cfg.fd:
                return {m: _pool(shallow[m], batch.mask[m]) for m in MODALITIES}
            df = self.decoupler.decouple(shallow)
            out = {}
            for m in MODALITIES:
                com = _pool(df.homogeneous[m], batch.mask[m])
                if kind == "homogeneous":
                    out[m] = com
                else:
                    out[m] = np.concatenate(
                        [com, _pool(df.heterogeneous[m], batch.mask[m])], axis=1)
            return out

    def predict_scores(self, batch):
        """Detached task predictions: scores, or class-1 probability (binary)."""
        with ad.no_grad():
            out = self.forward(batch)
            if self.spec.task == "regression":
                return out.prediction.data.copy()
            logits = out.prediction.data
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            return (e / e.sum(axis=1, keepdims=True))[:, 1]


def total_loss(components, lambda1, lambda2, lambda3):
    """Weighted objective over (already switch-gated) components."""
    return (components["task"] + ad.mul(components["dec"], lambda1)
            + ad.mul(components["dtl"], lambda2)
            + ad.mul(components["dic"], lambda3))
