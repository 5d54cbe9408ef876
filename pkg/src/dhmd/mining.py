"""Within-batch triplet mining shared by the margin and contrastive losses.

Items are (sample, modality) vectors. A triplet (i, j, k) is valid when the
positive j comes from a different modality but the same class as the anchor i,
and the negative k shares the anchor's modality but not its class. Enumeration
is exhaustive over the batch.
"""

import numpy as np

from . import autodiff as ad
from .datamodel import MODALITIES


def cross_modal_triplet_loss(vectors_by_modality, class_ids, margin):
    """Mean hinge over all mined triplets of pooled per-modality vectors.

    vectors_by_modality: modality -> Tensor [B, C]. Returns (loss Tensor,
    diagnostics dict); a batch with no valid triplet yields loss 0 and a
    ``no_triplet`` flag.
    """
    keys = [m for m in MODALITIES if m in vectors_by_modality]
    b = vectors_by_modality[keys[0]].shape[0]
    items = ad.concat([vectors_by_modality[m] for m in keys], axis=0)
    mod = np.repeat(np.arange(len(keys)), b)
    cls = np.tile(np.asarray(class_ids), len(keys))

    normed = ad.l2_normalize(items)
    cos = ad.matmul(normed, ad.transpose(normed, (1, 0)))

    pos = (mod[:, None] != mod[None, :]) & (cls[:, None] == cls[None, :])
    neg = (mod[:, None] == mod[None, :]) & (cls[:, None] != cls[None, :])
    loss, count = ad.triplet_hinge_mean(cos, pos, neg, margin)
    return loss, {"triplet_count": count, "no_triplet": count == 0}
