"""Decoupler tests: conv embedding, shared/private split, reconstruction
cycle, and the four decoupling losses against independent oracles."""

import numpy as np
import pytest

from dhmd import autodiff as ad
from dhmd.autodiff import Parameter, Tensor
from dhmd.datamodel import MODALITIES, SyntheticTaskSpec, collate, generate_synthetic
from dhmd.decoupler import (
    Decoupler, loss_cyc, loss_dec, loss_margin, loss_ort, loss_rec, pooled,
)
from dhmd.gradcheck import check_gradients

IN_DIMS = {"L": 6, "V": 5, "A": 4}
KERNELS = {"L": 5, "V": 3, "A": 3}


def _batch(n=6, seed=0, spc=3):
    ds = generate_synthetic(SyntheticTaskSpec(
        samples_per_class=spc, num_classes=3, seed=seed,
        feature_dims=dict(IN_DIMS),
        seq_len_range={m: (3, 6) for m in MODALITIES},
        signal_strength={"L": 0.8, "V": 0.5, "A": 0.3}))
    return collate(ds.train[:n])


def _decoupler(channels=4, seed=0, activation="tanh"):
    rng = np.random.default_rng(seed)
    return Decoupler(IN_DIMS, channels, KERNELS, rng, activation=activation)


def test_embed_shallow_common_width_and_masking():
    batch = _batch()
    dec = _decoupler()
    xt = dec.embed_shallow(batch.data, batch.mask)
    for m in MODALITIES:
        assert xt[m].shape == (*batch.data[m].shape[:2], 4)
        # padded steps are zero after masking
        assert np.all(xt[m].data[~batch.mask[m]] == 0.0)


def test_embed_shallow_identity_one_tap():
    rng = np.random.default_rng(1)
    dims = {m: 3 for m in MODALITIES}
    dec = Decoupler(dims, 3, {m: 1 for m in MODALITIES}, rng)
    for m in MODALITIES:
        dec.convs[m].w.data[...] = np.eye(3)[None]
        dec.convs[m].b.data[...] = 0.0
    x = rng.standard_normal((2, 4, 3))
    mask = np.ones((2, 4), dtype=bool)
    out = dec.embed_shallow({m: x for m in MODALITIES},
                            {m: mask for m in MODALITIES})
    for m in MODALITIES:
        assert np.allclose(out[m].data, x, atol=1e-12)


def test_decouple_shared_encoder_is_aliased():
    batch = _batch()
    dec = _decoupler()
    xt = dec.embed_shallow(batch.data, batch.mask)
    before = {m: dec.decouple(xt).homogeneous[m].data.copy() for m in MODALITIES}
    dec.enc_com.w.data += 0.5
    xt2 = dec.embed_shallow(batch.data, batch.mask)
    after = dec.decouple(xt2)
    for m in MODALITIES:
        assert not np.allclose(before[m], after.homogeneous[m].data)


def test_decouple_zero_input_linear_no_bias():
    dec = _decoupler(activation="identity")
    dec.enc_com.b.data[...] = 0.0
    for m in MODALITIES:
        dec.enc_prt[m].b.data[...] = 0.0
    zeros = {m: Tensor(np.zeros((2, 3, 4))) for m in MODALITIES}
    df = dec.decouple(zeros)
    for m in MODALITIES:
        assert np.all(df.homogeneous[m].data == 0.0)
        assert np.all(df.heterogeneous[m].data == 0.0)


def test_decouple_hand_computed_toy():
    rng = np.random.default_rng(2)
    dims = {m: 2 for m in MODALITIES}
    dec = Decoupler(dims, 2, {m: 1 for m in MODALITIES}, rng,
                    activation="identity")
    wc = np.array([[1.0, 2.0], [0.0, 1.0]])
    wp = np.array([[0.5, 0.0], [1.0, 1.0]])
    dec.enc_com.w.data[...] = wc
    dec.enc_com.b.data[...] = [0.1, -0.2]
    dec.enc_prt["L"].w.data[...] = wp
    dec.enc_prt["L"].b.data[...] = 0.0
    x = np.array([[[1.0, 3.0], [2.0, -1.0]]])  # [1,2,2]
    df = dec.decouple({m: Tensor(x) for m in MODALITIES})
    assert np.allclose(df.homogeneous["L"].data[0], x[0] @ wc + [0.1, -0.2])
    assert np.allclose(df.heterogeneous["L"].data[0], x[0] @ wp)


def _df_for(batch, dec):
    xt = dec.embed_shallow(batch.data, batch.mask)
    return dec.decouple(xt)


def test_loss_rec_zero_when_reconstruction_exact():
    batch = _batch()
    dec = _decoupler()
    df = _df_for(batch, dec)
    df.reconstruction = {m: df.shallow[m] for m in MODALITIES}
    assert loss_rec(df, batch.mask).item() == 0.0


def test_loss_rec_frobenius_sum_convention():
    x = np.array([[[1.0, 0.0], [0.0, 1.0]]])  # [1,2,2]
    mask = {m: np.ones((1, 2), dtype=bool) for m in MODALITIES}
    shallow = {m: Tensor(x if m == "L" else np.zeros_like(x)) for m in MODALITIES}
    recon = {m: Tensor(np.zeros_like(x)) for m in MODALITIES}

    class DF:
        pass

    df = DF()
    df.shallow = shallow
    df.reconstruction = recon
    out = loss_rec(df, mask)
    # Frobenius sum is 2 for L, 0 elsewhere; averaged over 2 valid steps -> 1
    assert np.isclose(out.item(), 2.0 / 2.0)


def test_loss_rec_matches_sum_of_squares_oracle():
    batch = _batch()
    dec = _decoupler()
    df = _df_for(batch, dec)
    got = loss_rec(df, batch.mask).item()
    want = 0.0
    for m in MODALITIES:
        diff = df.shallow[m].data - df.reconstruction[m].data
        w = batch.mask[m]
        want += (diff[w] ** 2).sum() / w.sum()
    assert np.isclose(got, want, atol=1e-9)


def test_loss_cyc_zero_for_exact_inverse_toy():
    # identity activation; private decoder recovers prt exactly from [com, prt]
    rng = np.random.default_rng(3)
    dims = {m: 3 for m in MODALITIES}
    dec = Decoupler(dims, 3, {m: 1 for m in MODALITIES}, rng,
                    activation="identity")
    for m in MODALITIES:
        # D_m([com, prt]) reproduces the shallow input only implicitly; here we
        # make E_prt(D_m([com, prt])) == prt by making D_m select prt and
        # E_prt idempotent on its own output (E = identity, D = [0 I]).
        dec.enc_prt[m].w.data[...] = np.eye(3)
        dec.enc_prt[m].b.data[...] = 0.0
        dec.dec[m].w.data[...] = np.vstack([np.zeros((3, 3)), np.eye(3)])
        dec.dec[m].b.data[...] = 0.0
    batch = _batch()
    xt = {m: Tensor(np.random.default_rng(4).standard_normal((2, 3, 3)))
          for m in MODALITIES}
    df = dec.decouple(xt)
    mask = {m: np.ones((2, 3), dtype=bool) for m in MODALITIES}
    assert loss_cyc(df, mask).item() < 1e-12


def test_loss_cyc_matches_oracle():
    batch = _batch()
    dec = _decoupler()
    df = _df_for(batch, dec)
    got = loss_cyc(df, batch.mask).item()
    want = 0.0
    for m in MODALITIES:
        diff = df.heterogeneous[m].data - df.recoded_prt[m].data
        w = batch.mask[m]
        want += (diff[w] ** 2).sum() / w.sum()
    assert np.isclose(got, want, atol=1e-9)


# ----------------------------------------------------------------- margin

def test_margin_satisfied_triplets_cost_zero():
    vecs = {"L": Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])),
            "V": Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))}
    loss, diag = loss_margin(vecs, np.array([0, 1]), margin=0.1)
    assert not diag["no_triplet"]
    assert np.isclose(loss.item(), 0.0)


def test_margin_equal_cosines_cost_margin():
    same = np.array([[1.0, 0.0], [1.0, 0.0]])
    vecs = {"L": Tensor(same), "V": Tensor(same)}
    loss, _ = loss_margin(vecs, np.array([0, 1]), margin=0.1)
    assert np.isclose(loss.item(), 0.1)


def _margin_oracle(vecs, class_ids, margin):
    keys = [m for m in MODALITIES if m in vecs]
    items, mods, classes = [], [], []
    for ki, m in enumerate(keys):
        for b in range(vecs[m].shape[0]):
            items.append(vecs[m][b] / np.linalg.norm(vecs[m][b]))
            mods.append(ki)
            classes.append(class_ids[b])
    total, count = 0.0, 0
    n = len(items)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if (mods[i] != mods[j] and classes[i] == classes[j]
                        and mods[i] == mods[k] and classes[i] != classes[k]):
                    count += 1
                    cij = float(items[i] @ items[j])
                    cik = float(items[i] @ items[k])
                    total += max(0.0, margin - cij + cik)
    return (total / count if count else 0.0), count


def test_margin_matches_exhaustive_enumeration():
    rng = np.random.default_rng(5)
    raw = {m: rng.standard_normal((4, 3)) for m in MODALITIES}
    cls = np.array([0, 1, 0, 1])
    loss, diag = loss_margin({m: Tensor(v) for m, v in raw.items()}, cls, 0.3)
    want, count = _margin_oracle(raw, cls, 0.3)
    assert diag["triplet_count"] == count
    assert np.isclose(loss.item(), want, atol=1e-9)


def test_margin_no_triplet_flag():
    vecs = {"L": Tensor(np.ones((2, 3))), "V": Tensor(np.ones((2, 3)))}
    loss, diag = loss_margin(vecs, np.array([0, 0]), 0.1)  # single class
    assert diag["no_triplet"]
    assert loss.item() == 0.0


def test_margin_scale_invariance():
    rng = np.random.default_rng(6)
    raw = {m: rng.standard_normal((4, 3)) for m in MODALITIES}
    cls = np.array([0, 1, 1, 0])
    l1, _ = loss_margin({m: Tensor(v) for m, v in raw.items()}, cls, 0.2)
    l2, _ = loss_margin({m: Tensor(3.7 * v) for m, v in raw.items()}, cls, 0.2)
    assert np.isclose(l1.item(), l2.item(), atol=1e-9)


# -------------------------------------------------------------------- ort

def test_ort_orthogonal_is_zero():
    com = {m: Tensor(np.array([[1.0, 0.0]])) for m in MODALITIES}
    prt = {m: Tensor(np.array([[0.0, 1.0]])) for m in MODALITIES}
    assert np.isclose(loss_ort(com, prt).item(), 0.0, atol=1e-9)


def test_ort_identical_is_three():
    v = {m: Tensor(np.array([[0.3, -0.7]])) for m in MODALITIES}
    assert np.isclose(loss_ort(v, v).item(), 3.0, atol=1e-9)


def test_ort_matches_cosine_oracle():
    rng = np.random.default_rng(7)
    com = {m: rng.standard_normal((3, 4)) for m in MODALITIES}
    prt = {m: rng.standard_normal((3, 4)) for m in MODALITIES}
    got = loss_ort({m: Tensor(v) for m, v in com.items()},
                   {m: Tensor(v) for m, v in prt.items()}).item()
    want = 0.0
    for m in MODALITIES:
        cos = [(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
               for a, b in zip(com[m], prt[m])]
        want += np.mean(cos)
    assert np.isclose(got, want, atol=1e-9)


# -------------------------------------------------------------------- dec

def test_loss_dec_gamma_zero_is_rec_plus_cyc():
    batch = _batch()
    dec = _decoupler()
    df = _df_for(batch, dec)
    total, comps, _ = loss_dec(df, batch.mask, batch.class_ids, margin=0.1,
                               gamma=0.0)
    assert np.isclose(total.item(), comps["rec"].item() + comps["cyc"].item())


def test_loss_dec_weighted_arithmetic():
    # components (1, 2, 3, 4) with gamma 0.1 -> 1 + 2 + 0.1 * (3 + 4) = 3.7
    total = 1.0 + 2.0 + 0.1 * (3.0 + 4.0)
    assert np.isclose(total, 3.7)
    batch = _batch()
    dec = _decoupler()
    df = _df_for(batch, dec)
    total_t, comps, _ = loss_dec(df, batch.mask, batch.class_ids, margin=0.1,
                                 gamma=0.1)
    want = (comps["rec"].item() + comps["cyc"].item()
            + 0.1 * (comps["mar"].item() + comps["ort"].item()))
    assert np.isclose(total_t.item(), want, atol=1e-9)


# -------------------------------------------------------- invariants

def test_padded_positions_do_not_affect_losses():
    batch = _batch()
    dec = _decoupler()

    def full_loss(data):
        xt = dec.embed_shallow(data, batch.mask)
        df = dec.decouple(xt)
        total, _, _ = loss_dec(df, batch.mask, batch.class_ids, 0.1, 0.1)
        return total.item()

    base = full_loss(batch.data)
    perturbed = {m: batch.data[m].copy() for m in MODALITIES}
    rng = np.random.default_rng(8)
    for m in MODALITIES:
        pad = ~batch.mask[m]
        perturbed[m][pad] += 100.0 * rng.standard_normal(perturbed[m][pad].shape)
    assert abs(full_loss(perturbed) - base) < 1e-7


def test_gradient_check_decoupling_losses():
    batch = _batch(n=4)
    dec = _decoupler(channels=3, seed=9)
    params = list(dec.named_parameters())

    def build(component):
        def fn():
            df = _df_for(batch, dec)
            total, comps, _ = loss_dec(df, batch.mask, batch.class_ids, 0.3, 0.5)
            return comps[component] if component else total
        return fn

    rng = np.random.default_rng(10)
    for component in ("rec", "cyc", "mar", "ort", None):
        check_gradients(build(component), params, rng, n_coords=8)
