"""Smoke tests for the python bindings, cross-checked against numpy."""

import math

import numpy as np
import pytest

import trireid


def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ce_reference(logits, ids, smoothing):
    b, c = logits.shape
    p = softmax(logits)
    target = np.full((b, c), smoothing / c)
    target[np.arange(b), ids] += 1.0 - smoothing
    return float(-(target * np.log(p)).sum(axis=1).mean())


def test_cosine_lr_matches_formula():
    for step, total in [(0, 100), (50, 100), (99, 100), (100, 100)]:
        want = 3.5e-4 * 0.5 * (1.0 + math.cos(math.pi * step / total))
        assert trireid.cosine_lr(step, total, 3.5e-4) == pytest.approx(
            want, abs=1e-18
        )


def test_clip_windows():
    assert trireid.clip_starts(10, 4) == [0, 4, 6]
    assert trireid.clip_starts(3, 2) == [0, 1]
    assert trireid.clip_indices(3, 8) == [0, 1, 2, 0, 1, 2, 0, 1]


def test_style_gains_range_and_determinism():
    gains = trireid.style_gains(seed=5, count=1000)
    assert gains.shape == (1000, 4)
    assert gains.min() >= 0.5 and gains.max() <= 1.5
    assert np.array_equal(gains, trireid.style_gains(seed=5, count=1000))


def test_style_augment_scales_channels():
    rng = np.random.default_rng(0)
    frame = rng.uniform(0.0, 1.0, size=(3, 6, 5))
    out = trireid.style_augment(frame, "visible", r=0.6, g=1.2, b=1.4)
    want = frame * np.array([0.6, 1.2, 1.4])[:, None, None]
    np.testing.assert_allclose(out, want, rtol=0, atol=1e-15)

    ir = trireid.style_augment(frame, "infrared", ir=0.8)
    np.testing.assert_allclose(ir, frame * 0.8, rtol=0, atol=1e-15)

    identity = trireid.style_augment(frame, "visible")
    assert np.array_equal(identity, frame)


def test_style_attack_transfers_donor_statistics():
    rng = np.random.default_rng(1)
    target = rng.normal(size=(2, 3, 8, 7))
    donor = rng.normal(size=(2, 3, 8, 7))
    out, skipped = trireid.style_attack(target, donor)
    assert skipped == 0
    for n in range(2):
        for c in range(3):
            assert out[n, c].mean() == pytest.approx(
                donor[n, c].mean(), abs=1e-10
            )
            assert out[n, c].std() == pytest.approx(
                donor[n, c].std(), abs=1e-10
            )

    fixed, _ = trireid.style_attack(target, target)
    assert np.array_equal(fixed, target)


def test_anaglyph_matches_numpy_loop():
    rng = np.random.default_rng(2)
    frame = rng.integers(0, 256, size=(3, 6, 5)).astype(float)
    kernel = np.array([0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0])
    out = trireid.anaglyph(frame, "visible", kernel=list(kernel), offset=1.5)

    lum = 0.299 * frame[0] + 0.587 * frame[1] + 0.114 * frame[2]
    padded = np.pad(lum, 1, mode="reflect")
    want = np.full_like(lum, 1.5)
    for ky in range(3):
        for kx in range(3):
            want += kernel[ky * 3 + kx] * padded[ky : ky + 6, kx : kx + 5]
    assert out.shape == (1, 6, 5)
    np.testing.assert_allclose(out[0], want, rtol=0, atol=1e-12)


def test_loss_id_matches_numpy():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(6, 5))
    ids = [0, 1, 2, 3, 4, 0]
    got = trireid.loss_id(logits, ids, smoothing=0.1)
    assert got == pytest.approx(ce_reference(logits, ids, 0.1), rel=1e-12)


def test_loss_tri_matches_numpy():
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(6, 4))
    ids = [0, 0, 1, 1, 2, 2]
    dists = np.sqrt(
        ((feats[:, None, :] - feats[None, :, :]) ** 2).sum(-1)
    )
    labels = np.array(ids)
    total = 0.0
    for i in range(6):
        same = (labels == labels[i]) & (np.arange(6) != i)
        diff = labels != labels[i]
        total += max(
            0.0, dists[i][same].max() - dists[i][diff].min() + 0.3
        )
    assert trireid.loss_tri(feats, ids, margin=0.3) == pytest.approx(
        total / 6, rel=1e-12
    )


def test_loss_sa_matches_numpy():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(4, 3))
    attacked_logits = rng.normal(size=(4, 3))
    feats = rng.normal(size=(4, 6))
    attacked = rng.normal(size=(4, 6))
    ids = [0, 1, 2, 0]
    want = ce_reference(attacked_logits, ids, 0.0)
    want += ((feats - attacked) ** 2).sum() / 4
    got = trireid.loss_sa(logits, attacked_logits, feats, attacked, ids)
    assert got == pytest.approx(want, rel=1e-12)


def test_loss_cr_matches_numpy():
    rng = np.random.default_rng(6)
    vis = rng.normal(size=(5, 4))
    ir = rng.normal(size=(5, 4))
    mapping = rng.normal(size=(4, 4))
    want = (
        np.linalg.norm(vis - ir @ mapping, axis=1).sum()
        + np.linalg.norm(ir - vis @ mapping, axis=1).sum()
    ) / 5
    assert trireid.loss_cr(vis, ir, mapping) == pytest.approx(
        want, rel=1e-12
    )


def test_loss_v2m_matches_numpy():
    rng = np.random.default_rng(7)
    feats = rng.normal(size=(6, 4))
    ids = [0, 0, 1, 1, 2, 2]
    platforms = ["aerial", "ground"] * 3
    keys = [(i, p) for i in range(3) for p in ("aerial", "ground")]
    memory = rng.normal(size=(6, 4))
    tau = 0.2

    unit = lambda x: x / np.linalg.norm(x, axis=-1, keepdims=True)
    uf, um = unit(feats), unit(memory)
    total = 0.0
    cells = {}
    for i, (pid, plat) in enumerate(zip(ids, platforms)):
        cells.setdefault((pid, plat), []).append(i)
    for (pid, plat), members in cells.items():
        row = um[keys.index((pid, plat))]
        sims = (uf @ row) / tau
        log_denom = np.log(np.exp(sims).sum())
        total += np.mean([log_denom - sims[i] for i in members])
    want = total / len(cells)

    got = trireid.loss_v2m(feats, ids, platforms, memory, keys, tau=tau)
    assert got == pytest.approx(want, rel=1e-10)


def test_build_memory_rows_are_means():
    rng = np.random.default_rng(8)
    feats = rng.normal(size=(8, 3))
    ids = [0, 0, 1, 1, 0, 1, 0, 1]
    platforms = ["aerial"] * 4 + ["ground"] * 4
    keys, counts, base = trireid.build_memory(feats, ids, platforms)
    assert sorted(keys) == keys
    for (pid, plat), count, row in zip(keys, counts, base):
        members = [
            i
            for i in range(8)
            if ids[i] == pid and platforms[i] == plat
        ]
        assert count == len(members)
        np.testing.assert_allclose(row, feats[members].mean(axis=0))


def test_rank_hand_case():
    angles = np.deg2rad([0.0, 10.0, 20.0, 30.0])
    pts = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    out = trireid.rank(
        pts[:1],
        pts[1:],
        query_ids=[7],
        query_cameras=["q"],
        gallery_ids=[7, 3, 7],
        gallery_cameras=["g0", "g1", "g2"],
        camera_filter=True,
    )
    assert out["map"] == pytest.approx(5.0 / 6.0, abs=1e-12)
    assert out["cmc"][0] == pytest.approx(1.0)
    assert out["per_query_ap"] == [pytest.approx(5.0 / 6.0)]


def test_generate_synthetic_writes_manifest(tmp_path):
    count = trireid.generate_synthetic(
        str(tmp_path), ids=2, tracklets=1, frames=2, height=8, width=8
    )
    # 2 identities x 2 platforms x 2 modalities x 1 tracklet.
    assert count == 8
    manifest = tmp_path / "manifest.txt"
    assert manifest.exists()
    assert manifest.read_text().startswith("trireid-manifest v1")


def test_config_defaults_roundtrip_keys():
    text = trireid.config_defaults()
    assert "lambda1 = 1" in text
    assert "lr_init = 0.00035" in text
    assert "epochs = 120" in text
