"""Dictionary matching tests: soft scores, reconstructions, contrastive loss,
activation export, and invariants (simplex, convex hull, padding)."""

import numpy as np
import pytest

from dhmd import autodiff as ad
from dhmd.autodiff import Tensor
from dhmd.datamodel import MODALITIES
from dhmd.dictionary import SharedDictionary, contrastive_loss, dic_loss, export_activations
from dhmd.gradcheck import check_gradients


def _dict(k=4, dim=5, seed=0, space="homogeneous"):
    return SharedDictionary(k, dim, np.random.default_rng(seed), space)


def test_single_element_dictionary():
    d = _dict(k=1, dim=3, seed=1)
    rng = np.random.default_rng(2)
    feats = Tensor(rng.standard_normal((2, 4, 3)))
    match = d.match(feats, np.ones((2, 4), dtype=bool))
    assert np.allclose(match.scores.data, 1.0)
    assert np.allclose(match.reconstruction.data, d.elements.data[0])


def test_planted_element_wins_argmax():
    dim = 8
    rng = np.random.default_rng(3)
    basis = np.linalg.qr(rng.standard_normal((dim, dim)))[0]
    d = _dict(k=4, dim=dim, seed=4)
    d.elements.data[...] = basis[:4]  # orthonormal rows
    j = 2
    seq = np.zeros((1, 3, dim))
    seq[0, 1] = basis[j]          # one step equals element j
    seq[0, 0] = 0.3 * basis[6]    # rows orthogonal to every element
    seq[0, 2] = -0.5 * basis[7]
    match = d.match(Tensor(seq), np.ones((1, 3), dtype=bool))
    assert int(np.argmax(match.scores.data[0])) == j


def test_match_equals_loop_oracle():
    d = _dict(k=4, dim=5, seed=5)
    rng = np.random.default_rng(6)
    feats = rng.standard_normal((2, 3, 5))
    mask = np.array([[True, True, False], [True, True, True]])
    match = d.match(Tensor(feats), mask)

    de = d.elements.data
    for b in range(2):
        a_ref = np.array([[feats[b, t] @ de[k] for k in range(4)]
                          for t in range(3)])
        assert np.allclose(match.element_attention.data[b], a_ref, atol=1e-12)
        valid = [t for t in range(3) if mask[b, t]]
        pooled_ref = np.array([max(a_ref[t, k] for t in valid) for k in range(4)])
        assert np.allclose(match.pooled_scores.data[b], pooled_ref, atol=1e-12)
        e = np.exp(pooled_ref - pooled_ref.max())
        alpha_ref = e / e.sum()
        assert np.allclose(match.scores.data[b], alpha_ref, atol=1e-12)
        z_ref = alpha_ref @ de
        assert np.allclose(match.reconstruction.data[b], z_ref, atol=1e-12)


def test_match_dim_mismatch_and_all_masked():
    d = _dict(k=3, dim=4, seed=7)
    with pytest.raises(ValueError, match="dim"):
        d.match(Tensor(np.zeros((1, 2, 5))), np.ones((1, 2), dtype=bool))
    mask = np.array([[True, True], [False, False]])
    with pytest.raises(ValueError, match="sample 1"):
        d.match(Tensor(np.zeros((2, 2, 4))), mask)


def test_simplex_invariant():
    for seed in range(4):
        d = _dict(k=6, dim=4, seed=seed)
        rng = np.random.default_rng(100 + seed)
        feats = Tensor(3.0 * rng.standard_normal((3, 5, 4)))
        mask = rng.random((3, 5)) < 0.8
        mask[:, 0] = True
        match = d.match(feats, mask)
        s = match.scores.data
        assert np.all(s >= 0)
        assert np.allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_convex_hull_invariant():
    d = _dict(k=5, dim=3, seed=9)
    rng = np.random.default_rng(10)
    feats = Tensor(rng.standard_normal((4, 6, 3)))
    match = d.match(feats, np.ones((4, 6), dtype=bool))
    lo = d.elements.data.min(axis=0) - 1e-9
    hi = d.elements.data.max(axis=0) + 1e-9
    z = match.reconstruction.data
    assert np.all(z >= lo) and np.all(z <= hi)


def test_masked_steps_cannot_change_match():
    d = _dict(k=4, dim=5, seed=11)
    rng = np.random.default_rng(12)
    feats = rng.standard_normal((2, 4, 5))
    mask = np.array([[True, False, True, False], [True, True, False, True]])
    base = d.match(Tensor(feats), mask)
    perturbed = feats.copy()
    perturbed[~mask] += 1e4
    out = d.match(Tensor(perturbed), mask)
    assert np.allclose(base.pooled_scores.data, out.pooled_scores.data)
    assert np.allclose(base.scores.data, out.scores.data)
    assert np.allclose(base.reconstruction.data, out.reconstruction.data)


def test_contrastive_identical_recons_cost_margin():
    z = {m: Tensor(np.tile([[0.5, -0.5]], (2, 1))) for m in ("L", "V")}
    loss, _ = contrastive_loss(z, np.array([0, 1]), 0.1)
    assert np.isclose(loss.item(), 0.1)


def test_contrastive_perfect_separation_costs_zero():
    z = {"L": Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]])),
         "V": Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]]))}
    loss, _ = contrastive_loss(z, np.array([0, 1]), 0.1)
    assert np.isclose(loss.item(), 0.0)


def test_contrastive_matches_enumeration_oracle():
    rng = np.random.default_rng(13)
    z = {m: rng.standard_normal((6, 4)) for m in MODALITIES}
    cls = np.array([0, 1, 0, 1, 0, 1])
    loss, diag = contrastive_loss({m: Tensor(v) for m, v in z.items()}, cls, 0.2)

    items, mods, classes = [], [], []
    for ki, m in enumerate(MODALITIES):
        for b in range(6):
            items.append(z[m][b] / np.linalg.norm(z[m][b]))
            mods.append(ki)
            classes.append(cls[b])
    total, count = 0.0, 0
    n = len(items)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if (mods[i] != mods[j] and classes[i] == classes[j]
                        and mods[i] == mods[k] and classes[i] != classes[k]):
                    count += 1
                    total += max(0.0, 0.2 - items[i] @ items[j] + items[i] @ items[k])
    assert diag["triplet_count"] == count
    assert np.isclose(loss.item(), total / count, atol=1e-9)


def test_dic_loss_is_plain_sum():
    assert dic_loss(Tensor(0.0), Tensor(0.0)).item() == 0.0
    assert np.isclose(dic_loss(Tensor(0.2), Tensor(0.3)).item(), 0.5)
    a, b = Tensor(0.123), Tensor(0.456)
    assert abs(dic_loss(a, b).item() - (a.item() + b.item())) < 1e-7


def test_export_uniform_alpha_ties_break_ascending():
    scores = {("ho", "L"): np.full((3, 4), 0.25)}
    rows = export_activations(scores, np.array([1, 1, 1]), top_k=3)
    assert len(rows) == 1
    assert rows[0]["top"] == [0, 1, 2]


def test_export_single_class_rows():
    scores = {("ho", m): np.random.default_rng(14).random((4, 5))
              for m in MODALITIES}
    rows = export_activations(scores, np.zeros(4, dtype=int))
    assert len(rows) == 3  # one per modality, single class, one space
    assert {r["modality"] for r in rows} == set(MODALITIES)


def test_export_top1_is_argmax_of_mean():
    rng = np.random.default_rng(15)
    alpha = rng.random((6, 7))
    scores = {("he", "V"): alpha}
    cls = np.array([0, 0, 1, 1, 1, 0])
    rows = export_activations(scores, cls)
    for row in rows:
        sel = alpha[cls == row["class"]].mean(axis=0)
        assert row["top"][0] == int(np.argmax(sel))
        assert np.allclose(row["alpha"], sel)


def test_gradient_check_match_and_contrastive_including_elements():
    d_ho = _dict(k=3, dim=4, seed=16)
    rng = np.random.default_rng(17)
    feats = {m: ad.Parameter(rng.standard_normal((3, 3, 4))) for m in MODALITIES}
    mask = np.ones((3, 3), dtype=bool)
    mask[1, -1] = False
    cls = np.array([0, 1, 2])
    params = [("D", d_ho.elements)] + [(f"x_{m}", feats[m]) for m in MODALITIES]

    def fn():
        z = {m: d_ho.match(feats[m], mask).reconstruction for m in MODALITIES}
        loss, _ = contrastive_loss(z, cls, 0.3)
        return loss

    check_gradients(fn, params, np.random.default_rng(18), n_coords=14)
