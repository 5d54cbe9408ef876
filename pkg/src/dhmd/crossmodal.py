"""Cross-modal attention transformer over heterogeneous features.

Six directed stacks (one per ordered modality pair) let each target modality
attend to every source. Queries come from the evolving target stream; keys and
values from the source's projected sequence, with padded source steps masked
to -inf before the softmax. Per target, the two enhanced streams are
concatenated channel-wise (sources in L,V,A order, skipping the target).
"""

import dataclasses

import numpy as np

from . import autodiff as ad
from . import nn
from .datamodel import MODALITIES


@dataclasses.dataclass
class ReinforcedFeatures:
    pairs: dict       # (src, tgt) -> Tensor [B, T_tgt, d_model]
    combined: dict    # tgt -> Tensor [B, T_tgt, 2*d_model]
    attention: dict   # (src, tgt) -> ndarray [B, T_tgt, T_src], last layer, head-avg


class CrossAttentionBlock(nn.Module):
    def __init__(self, d_model, heads, ffn_dim, rng):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = d_model // heads
        self.ln_q = nn.LayerNorm(d_model)
        self.ln_kv = nn.LayerNorm(d_model)
        self.ln_ffn = nn.LayerNorm(d_model)
        self.wq = nn.Linear(d_model, d_model, rng)
        self.wk = nn.Linear(d_model, d_model, rng)
        self.wv = nn.Linear(d_model, d_model, rng)
        self.wo = nn.Linear(d_model, d_model, rng)
        self.ff1 = nn.Linear(d_model, ffn_dim, rng)
        self.ff2 = nn.Linear(ffn_dim, d_model, rng)

    def _split(self, x, b, t):
        return ad.transpose(ad.reshape(x, (b, t, self.heads, self.head_dim)),
                            (0, 2, 1, 3))

    def __call__(self, target, source, src_mask):
        b, tt, d = target.shape
        ts = source.shape[1]
        q = self._split(self.wq(self.ln_q(target)), b, tt)
        kv_in = self.ln_kv(source)
        k = self._split(self.wk(kv_in), b, ts)
        v = self._split(self.wv(kv_in), b, ts)

        ctx4, attn = ad.attention_core(q, k, v, src_mask,
                                       1.0 / np.sqrt(self.head_dim))
        ctx = ad.reshape(ad.transpose(ctx4, (0, 2, 1, 3)), (b, tt, d))
        x = target + self.wo(ctx)
        x = x + self.ff2(ad.tanh(self.ff1(self.ln_ffn(x))))
        return x, attn.mean(axis=1)


class CrossModalReinforcer(nn.Module):
    """Per-modality input projections + positional embeddings + pair stacks."""

    def __init__(self, in_dim, d_model, heads, layers, ffn_dim, pos_cap, rng):
        super().__init__()
        self.d_model = d_model
        self.pos_cap = pos_cap
        self.in_proj = nn.ModuleDict({m: nn.Linear(in_dim, d_model, rng)
                                      for m in MODALITIES})
        for m in MODALITIES:
            setattr(self, f"pos_{m}",
                    ad.Parameter(rng.normal(0.0, 0.02, size=(pos_cap, d_model))))
        stacks = {}
        norms = {}
        for s in MODALITIES:
            for t in MODALITIES:
                if s != t:
                    key = f"{s}2{t}"
                    stacks[key] = nn.ModuleList(
                        [CrossAttentionBlock(d_model, heads, ffn_dim, rng)
                         for _ in range(layers)])
                    norms[key] = nn.LayerNorm(d_model)
        self.stacks = nn.ModuleDict(stacks)
        self.out_norm = nn.ModuleDict(norms)

    def _embed(self, x, modality):
        t = x.shape[1]
        if t > self.pos_cap:
            raise ValueError(
                f"sequence length {t} exceeds positional capacity {self.pos_cap}")
        pos = getattr(self, f"pos_{modality}")
        return self.in_proj[modality](x) + pos[:t]

    def cross_attention(self, target_seq, source_seq, src_mask, src, tgt):
        """One directed stack; returns (Z_{src->tgt}, last-layer attention)."""
        rows_without_keys = ~src_mask.any(axis=1)
        if rows_without_keys.any():
            raise ValueError(
                f"cross attention {src}->{tgt}: fully masked source for "
                f"sample index {int(np.flatnonzero(rows_without_keys)[0])}")
        x = self._embed(target_seq, tgt)
        src_embedded = self._embed(source_seq, src)
        attn = None
        for block in self.stacks[f"{src}2{tgt}"]:
            x, attn = block(x, src_embedded, src_mask)
        return self.out_norm[f"{src}2{tgt}"](x), attn

    def forward(self, features, masks):
        """Evaluate all six directed stacks and concatenate per target."""
        pairs = {}
        attention = {}
        for s in MODALITIES:
            for t in MODALITIES:
                if s == t:
                    continue
                z, attn = self.cross_attention(features[t], features[s],
                                               masks[s], s, t)
                pairs[(s, t)] = z
                attention[(s, t)] = attn
        combined = {}
        for t in MODALITIES:
            parts = [pairs[(s, t)] for s in MODALITIES if s != t]
            combined[t] = ad.concat(parts, axis=-1)
        return ReinforcedFeatures(pairs=pairs, combined=combined,
                                  attention=attention)
