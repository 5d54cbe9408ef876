"""Graph distillation unit: per-modality logit heads, a learned edge network
over modality pairs, the logit-discrepancy matrix, and the weighted
distillation loss.

One unit instance serves one feature space (homogeneous or heterogeneous).
Vertices are modalities; a directed edge i->j carries a learned weight gating
the absolute logit gap from teacher i (gradient-stopped) to student j. Edge
weights are normalized per target over incoming edges, so every column of the
weight matrix sums to one.
"""

import dataclasses

import numpy as np

from . import autodiff as ad
from . import nn


@dataclasses.dataclass
class GDOutput:
    loss: ad.Tensor     # batch-mean of sum_{i!=j} W_ij * E_ij
    logits: dict        # modality -> Tensor [B, num_outputs]
    W: np.ndarray       # [B, M, M], per-sample normalized edge weights
    E: np.ndarray       # [B, M, M], per-sample logit discrepancies


class GDUnit(nn.Module):
    """Logit head f, edge network g, and a shared width-`hidden` projection.

    The pooled feature is first projected to the unit's hidden width; f and g
    are affine on top of it, so logits and raw edge weights remain affine maps
    of the pooled descriptors (the projection only bounds their rank).
    """

    def __init__(self, in_dim, hidden, num_outputs, rng):
        super().__init__()
        self.num_outputs = num_outputs
        self.proj = nn.Linear(in_dim, hidden, rng)
        self.head = nn.Linear(hidden, num_outputs, rng)
        self.edge = nn.Linear(2 * (hidden + num_outputs), 1, rng)

    def modality_logits(self, features, masks, keys):
        """Masked-mean pool then regress logits; returns (hidden, logits)."""
        hid, logits = {}, {}
        for m in keys:
            h = self.proj(ad.masked_mean_time(features[m], masks[m]))
            hid[m] = h
            logits[m] = self.head(h)
        return hid, logits

    def forward(self, features, masks, keys, teacher_values=None):
        """Full unit evaluation over the given modality order.

        ``teacher_values`` optionally pins the (gradient-stopped) teacher side
        of the discrepancy matrix to externally supplied constants; finite
        -difference checks use it to hold the stop-gradient boundary fixed.
        """
        hid, logits = self.modality_logits(features, masks, keys)
        m_count = len(keys)
        desc = {m: ad.concat([logits[m], hid[m]], axis=-1) for m in keys}

        # batch the edge network over all ordered pairs, grouped per target
        # so one softmax normalizes each incoming column
        pairs = [(i, j) for j in keys for i in keys if i != j]
        stacked = ad.concat([ad.concat([desc[i], desc[j]], axis=-1)
                             for i, j in pairs], axis=0)
        raw_all = self.edge(stacked)
        b = next(iter(logits.values())).shape[0]
        n_in = m_count - 1
        raw_cols = ad.reshape(raw_all, (m_count, n_in, b))
        col_soft = ad.softmax(ad.transpose(raw_cols, (0, 2, 1)), axis=2)

        w = {}
        for tj, j in enumerate(keys):
            sources = [i for i in keys if i != j]
            for pos, i in enumerate(sources):
                w[(i, j)] = col_soft[tj, :, pos]

        e = {}
        for i in keys:
            for j in keys:
                if i != j:
                    teacher = (ad.Tensor(teacher_values[i])
                               if teacher_values is not None
                               else logits[i].detach())
                    e[(i, j)] = ad.mean(ad.abs_(teacher - logits[j]), axis=1)

        loss = None
        for pair in w:
            term = ad.mul(w[pair], e[pair])
            loss = term if loss is None else loss + term
        loss = ad.mean(loss)

        w_np = np.zeros((b, m_count, m_count))
        e_np = np.zeros((b, m_count, m_count))
        index = {m: k for k, m in enumerate(keys)}
        for (i, j), t in w.items():
            w_np[:, index[i], index[j]] = t.data
        for (i, j), t in e.items():
            e_np[:, index[i], index[j]] = t.data
        return GDOutput(loss=loss, logits=logits, W=w_np, E=e_np)


def discrepancy_matrix(logit_values):
    """E_ij = mean |logit_i - logit_j| over outputs, zero diagonal.

    logit_values: sequence of [B, num_outputs] arrays in modality order.
    Returns [B, M, M].
    """
    arrs = [np.asarray(x, dtype=np.float64) for x in logit_values]
    b = arrs[0].shape[0]
    m = len(arrs)
    e = np.zeros((b, m, m))
    for i in range(m):
        for j in range(m):
            if i != j:
                e[:, i, j] = np.abs(arrs[i] - arrs[j]).mean(axis=1)
    return e


def distillation_loss(w, e):
    """Batch-mean of sum over off-diagonal entries of W ⊙ E."""
    w = np.asarray(w, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if w.shape != e.shape:
        raise ValueError(f"shape mismatch: W {w.shape} vs E {e.shape}")
    if w.ndim == 2:
        w, e = w[None], e[None]
    m = w.shape[-1]
    off = ~np.eye(m, dtype=bool)
    return float((w * e)[:, off].sum(axis=1).mean())


class EdgeEMA:
    """Exponential moving average of batch-mean edge weights (for export)."""

    def __init__(self, m=3, decay=0.9):
        self.decay = decay
        self.value = None
        self.m = m

    def update(self, w_batch):
        mean = np.asarray(w_batch, dtype=np.float64).mean(axis=0)
        if self.value is None:
            self.value = mean
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * mean
        return self.value
