"""Feature decoupling: shallow temporal embedding, shared/private encoders,
self-regression reconstruction, and the decoupling losses.

Each modality is first embedded to a common channel width by a 1-D temporal
convolution. A single shared encoder extracts the homogeneous (modality
-irrelevant) component, per-modality private encoders the heterogeneous one;
private decoders reconstruct the shallow features from the concatenated pair
and the reconstruction is re-encoded to close the cycle.
"""

import dataclasses

import numpy as np

from . import autodiff as ad
from . import nn
from .datamodel import MODALITIES
from .mining import cross_modal_triplet_loss

_ACTIVATIONS = {
    "tanh": ad.tanh,
    "identity": lambda x: x,
}


@dataclasses.dataclass
class DecoupledFeatures:
    shallow: dict      # modality -> Tensor [B,T,C]
    homogeneous: dict  # X_com
    heterogeneous: dict  # X_prt
    reconstruction: dict
    recoded_prt: dict


class Decoupler(nn.Module):
    """Owns the conv embedders, the shared/private encoders and decoders.

    Encoders and decoders are kernel-size-1 temporal maps (per-timestep
    affine); encoders carry one fixed smooth nonlinearity, decoders are
    linear so exact reconstruction stays representable.
    """

    def __init__(self, in_dims, channels, kernel_sizes, rng, activation="tanh",
                 with_decoupling=True):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.channels = channels
        self.activation = activation
        self.convs = nn.ModuleDict({
            m: nn.Conv1d(in_dims[m], channels, kernel_sizes[m], rng)
            for m in MODALITIES})
        if with_decoupling:
            self.enc_com = nn.Linear(channels, channels, rng)
            self.enc_prt = nn.ModuleDict({m: nn.Linear(channels, channels, rng)
                                          for m in MODALITIES})
            self.dec = nn.ModuleDict({m: nn.Linear(2 * channels, channels, rng)
                                      for m in MODALITIES})
        else:
            self.enc_com = None
            self.enc_prt = None
            self.dec = None

    def _act(self, x):
        return _ACTIVATIONS[self.activation](x)

    def embed_shallow(self, data, masks):
        """Per-modality conv embedding; padded steps are zeroed in and out."""
        out = {}
        for m in MODALITIES:
            w = masks[m].astype(np.float64)[:, :, None]
            x = ad.mul(data[m], w)
            y = self.convs[m](x)
            out[m] = ad.mul(y, w)
        return out

    def decouple(self, shallow):
        if self.enc_com is None:
            raise RuntimeError("decoupling encoders were not constructed "
                               "(built with with_decoupling=False)")
        com, prt, recon, recoded = {}, {}, {}, {}
        for m in MODALITIES:
            com[m] = self._act(self.enc_com(shallow[m]))
            prt[m] = self._act(self.enc_prt[m](shallow[m]))
            recon[m] = self.dec[m](ad.concat([com[m], prt[m]], axis=-1))
            recoded[m] = self._act(self.enc_prt[m](recon[m]))
        return DecoupledFeatures(shallow=shallow, homogeneous=com,
                                 heterogeneous=prt, reconstruction=recon,
                                 recoded_prt=recoded)


def _masked_sq_error(a, b, mask):
    """Sum of squared differences over valid steps / number of valid steps."""
    w = mask.astype(np.float64)[:, :, None]
    n = max(float(mask.sum()), 1.0)
    return ad.mul(ad.sum_(ad.mul(ad.square(a - b), w)), 1.0 / n)


def loss_rec(df, masks):
    """Shallow-vs-reconstruction discrepancy, summed over modalities."""
    total = None
    for m in MODALITIES:
        term = _masked_sq_error(df.shallow[m], df.reconstruction[m], masks[m])
        total = term if total is None else total + term
    return total


def loss_cyc(df, masks):
    """Private-feature cycle discrepancy, summed over modalities."""
    total = None
    for m in MODALITIES:
        term = _masked_sq_error(df.heterogeneous[m], df.recoded_prt[m], masks[m])
        total = term if total is None else total + term
    return total


def pooled(features, masks):
    """Masked temporal mean per modality: [B,T,C] -> [B,C]."""
    return {m: ad.masked_mean_time(features[m], masks[m]) for m in MODALITIES}


def loss_margin(pooled_com, class_ids, margin):
    """Cross-modal margin loss over pooled homogeneous vectors."""
    return cross_modal_triplet_loss(pooled_com, class_ids, margin)


def loss_ort(pooled_com, pooled_prt):
    """Soft orthogonality: sum over modalities of batch-mean cosine."""
    total = None
    for m in MODALITIES:
        term = ad.mean(ad.cosine_rows(pooled_com[m], pooled_prt[m]))
        total = term if total is None else total + term
    return total


def loss_dec(df, masks, class_ids, margin, gamma):
    """Full decoupling objective; returns (total, components, diagnostics)."""
    rec = loss_rec(df, masks)
    cyc = loss_cyc(df, masks)
    pc = pooled(df.homogeneous, masks)
    pp = pooled(df.heterogeneous, masks)
    mar, diag = loss_margin(pc, class_ids, margin)
    ort = loss_ort(pc, pp)
    total = rec + cyc + ad.mul(mar + ort, gamma)
    components = {"rec": rec, "cyc": cyc, "mar": mar, "ort": ort}
    return total, components, diag
