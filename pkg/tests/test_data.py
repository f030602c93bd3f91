"""Synthetic corpus generation, domain splits, and the on-disk format."""

import numpy as np
import pytest

from iadg import data
from iadg.data import DatasetFormatError
from iadg.style import REAL, SPOOF


def _small_corpus(seed=3, n=6, size=16):
    return data.build_corpus(data.default_domains(), n, seed, size)


def test_generation_deterministic():
    a = _small_corpus()
    b = _small_corpus()
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.y_dep, b.y_dep)
    assert a.domain_ids == b.domain_ids


def test_seed_changes_content():
    a = _small_corpus(seed=3)
    b = _small_corpus(seed=4)
    assert not np.array_equal(a.images, b.images)


def test_corpus_shapes_and_balance():
    c = _small_corpus(n=5, size=16)
    assert c.images.shape == (40, 3, 16, 16)          # 4 domains x 2 classes x 5
    assert c.y_dep.shape == (40, 2, 2)                # depth at size // 8
    assert (c.y_cls == REAL).sum() == (c.y_cls == SPOOF).sum() == 20
    assert c.images.min() >= 0.0 and c.images.max() <= 1.0


def test_depth_labels_zero_for_spoof_positive_for_real():
    # size 32 -> 4x4 depth grid whose inner points always land inside the
    # face dome; at size 16 the 2x2 grid can legitimately miss it
    c = _small_corpus(size=32)
    spoof_depth = c.y_dep[c.y_cls == SPOOF]
    real_depth = c.y_dep[c.y_cls == REAL]
    assert np.array_equal(spoof_depth, np.zeros_like(spoof_depth))
    assert (real_depth.max(axis=(1, 2)) > 0).all()


def test_split_corpus_loo():
    c = _small_corpus(n=4)
    tr, te = data.split_corpus(c, "D2")
    assert set(te.domain_ids) == {"D2"}
    assert "D2" not in set(tr.domain_ids)
    assert len(set(tr.domain_ids)) == 3
    assert tr.images.shape[0] == 24 and te.images.shape[0] == 8


def test_split_corpus_limited_sources():
    c = _small_corpus(n=4)
    tr, te = data.split_corpus(c, "D3", train_domains=["D0", "D1"])
    assert set(tr.domain_ids) == {"D0", "D1"}
    assert set(te.domain_ids) == {"D3"}


def test_split_corpus_rejects_unknown_holdout():
    c = _small_corpus()
    with pytest.raises(ValueError):
        data.split_corpus(c, "D9")
    with pytest.raises(ValueError):
        data.split_corpus(c, "D1", train_domains=["D1", "D2"])


def test_build_split_matches_split_corpus_protocol():
    domains = data.default_domains()
    tr, te = data.build_split(domains, 3, "D1", seed=5, size=16)
    assert set(te.domain_ids) == {"D1"}
    assert len(set(tr.domain_ids)) == 3


def test_size_validation():
    with pytest.raises(ValueError):
        data.gen_sample(1, data.default_domains()[0], REAL, size=8)


def test_roundtrip_lossless(tmp_path):
    c = _small_corpus()
    path = str(tmp_path / "c.iadg")
    data.write_dataset(path, c)
    back = data.read_dataset(path)
    assert np.array_equal(back.images, c.images)
    assert np.array_equal(back.y_cls, c.y_cls)
    assert np.array_equal(back.y_dep, c.y_dep)
    assert back.domain_ids == c.domain_ids
    assert [d.id for d in back.domains] == [d.id for d in c.domains]
    assert back.size == c.size and back.depth_size == c.depth_size


def test_write_is_deterministic(tmp_path):
    c = _small_corpus()
    p1, p2 = str(tmp_path / "a.iadg"), str(tmp_path / "b.iadg")
    data.write_dataset(p1, c)
    data.write_dataset(p2, c)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_truncated_file_rejected(tmp_path):
    c = _small_corpus()
    path = str(tmp_path / "c.iadg")
    data.write_dataset(path, c)
    blob = open(path, "rb").read()
    for cut in (2, 5, len(blob) // 2, len(blob) - 1):
        short = str(tmp_path / f"cut{cut}.iadg")
        with open(short, "wb") as fh:
            fh.write(blob[:cut])
        with pytest.raises(DatasetFormatError):
            data.read_dataset(short)


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "bad.iadg")
    with open(path, "wb") as fh:
        fh.write(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DatasetFormatError):
        data.read_dataset(path)


def test_probe_header_only(tmp_path):
    c = _small_corpus(n=4)
    path = str(tmp_path / "c.iadg")
    data.write_dataset(path, c)
    info = data.probe_dataset(path)
    assert info["count"] == 32
    assert info["size"] == 16


def test_domains_have_distinct_styles():
    specs = data.default_domains()
    keys = {(d.hue_shift, d.contrast, d.blur_sigma, d.noise_std, d.background_level)
            for d in specs}
    assert len(keys) == len(specs) == 4


def test_spoof_detectable_within_domain():
    """A linear probe on two fixed texture features separates the classes
    inside every domain: the liveness cue exists and survives domain style."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.preprocessing import StandardScaler

    c = data.build_corpus(data.default_domains(), 40, seed=11, size=32)
    feats = np.array([data.probe_features(img) for img in c.images])
    for dom in ("D0", "D1", "D2", "D3"):
        sel = np.array(c.domain_ids) == dom
        x, y = feats[sel], c.y_cls[sel]
        x = StandardScaler().fit_transform(x)
        acc = LogisticRegression(C=10).fit(x, y).score(x, y)
        assert acc >= 0.9, f"{dom}: {acc}"
