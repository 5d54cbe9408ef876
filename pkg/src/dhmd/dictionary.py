"""Cross-modal dictionary matching: a shared learnable element matrix per
feature space, soft attention scores over elements, convex-combination
reconstructions, and the triplet contrastive losses.

Matching is soft throughout (softmax over max-pooled inner products); there is
no straight-through quantization.
"""

import dataclasses

import numpy as np

from . import autodiff as ad
from . import nn
from .mining import cross_modal_triplet_loss


@dataclasses.dataclass
class DictionaryMatch:
    element_attention: ad.Tensor  # [B, T, K]
    pooled_scores: ad.Tensor      # [B, K] column-wise masked max
    scores: ad.Tensor             # [B, K] softmax-normalized (simplex)
    reconstruction: ad.Tensor     # [B, C'] convex combination of elements


class SharedDictionary(nn.Module):
    """K learnable embedding vectors spanning one decoupled feature space."""

    def __init__(self, num_elements, dim, rng, space_id):
        super().__init__()
        if num_elements < 1:
            raise ValueError("dictionary needs at least one element")
        self.space_id = space_id
        self.dim = dim
        # zero-mean init with std 1/sqrt(dim) keeps initial score logits O(1)
        self.elements = ad.Parameter(
            rng.normal(0.0, 1.0 / np.sqrt(dim), size=(num_elements, dim)))

    @property
    def num_elements(self):
        return self.elements.shape[0]

    def match(self, features, mask):
        """Project [B,T,C'] features onto the dictionary.

        Scores per element are max-pooled over valid timesteps, softmaxed to
        the simplex, and used to reconstruct one vector per sample.
        """
        if features.shape[-1] != self.dim:
            raise ValueError(
                f"feature dim {features.shape[-1]} != dictionary dim {self.dim}")
        if not mask.any(axis=1).all():
            bad = int(np.flatnonzero(~mask.any(axis=1))[0])
            raise ValueError(f"dictionary match: all steps masked for sample {bad}")
        attention = ad.matmul(features, ad.transpose(self.elements, (1, 0)))
        pooled = ad.masked_max_time(attention, mask)
        scores = ad.softmax(pooled, axis=-1)
        recon = ad.matmul(scores, self.elements)
        return DictionaryMatch(element_attention=attention, pooled_scores=pooled,
                               scores=scores, reconstruction=recon)


def contrastive_loss(recon_by_modality, class_ids, margin):
    """Triplet hinge over reconstructed vectors, mined like the margin loss."""
    return cross_modal_triplet_loss(recon_by_modality, class_ids, margin)


def dic_loss(ctr_ho, ctr_he):
    """Total dictionary objective: plain sum of the two space losses."""
    return ctr_ho + ctr_he


def export_activations(score_arrays, class_ids, top_k=8):
    """Aggregate per-(space, modality, class) mean scores.

    score_arrays: (space, modality) -> ndarray [B, K]. Returns a list of rows
    ordered by (space, modality, class); top indices break ties by ascending
    element index.
    """
    class_ids = np.asarray(class_ids)
    rows = []
    for (space, modality), alpha in sorted(score_arrays.items()):
        alpha = np.asarray(alpha, dtype=np.float64)
        k = alpha.shape[1]
        for cls in sorted(set(int(c) for c in class_ids)):
            sel = alpha[class_ids == cls]
            mean_alpha = sel.mean(axis=0)
            order = np.lexsort((np.arange(k), -mean_alpha))
            rows.append({
                "space": space,
                "modality": modality,
                "class": cls,
                "alpha": mean_alpha,
                "top": [int(i) for i in order[:top_k]],
            })
    return rows
