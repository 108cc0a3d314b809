from collections import Counter

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from cevae.data import (
    AugmentParams,
    ManifestEntry,
    PairedDataset,
    PairedSample,
    apply_augment,
    augment,
    batch_indices,
    batches,
    load_image,
    load_manifest,
    preprocess,
    read_manifest,
    sample_augment_params,
    save_image,
    write_manifest,
)
from cevae.errors import ManifestError, SampleError
from cevae.synthetic import synthetic_pairs


def _png(path, w=8, h=6, value=None, seed=0):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, (h, w, 3), dtype=np.uint8) if value is None else np.full((h, w, 3), value, np.uint8)
    Image.fromarray(arr).save(path)
    return arr


@pytest.fixture
def paired_root(tmp_path):
    (tmp_path / "degraded").mkdir()
    (tmp_path / "reference").mkdir()
    for i in range(5):
        _png(tmp_path / "degraded" / f"im{i}.png", seed=i)
        _png(tmp_path / "reference" / f"im{i}.png", seed=10 + i)
    return tmp_path


def _asymmetric():
    x = torch.linspace(-1, 1, 3 * 16 * 20).reshape(3, 16, 20)
    return PairedSample("a", x, x.flip(-2) * 0.5)


class TestManifest:
    def test_five_pairs(self, paired_root):
        m = load_manifest(paired_root)
        assert len(m) == 5
        assert [e.id for e in m] == [f"im{i}" for i in range(5)]
        assert all(e.degraded.parent.name == "degraded" for e in m)

    def test_identity_layout(self, tmp_path):
        for i in range(3):
            _png(tmp_path / f"x{i}.jpg", seed=i)
        m = load_manifest(tmp_path, layout="identity")
        assert len(m) == 3
        assert all(e.degraded == e.reference for e in m)

    def test_orphan_named(self, paired_root):
        _png(paired_root / "degraded" / "lonely.png")
        with pytest.raises(ManifestError, match="lonely.png") as info:
            load_manifest(paired_root)
        assert len(info.value.offenders) == 1

    def test_empty_and_missing(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "nope")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path, layout="identity")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path)
        with pytest.raises(ManifestError):
            load_manifest(tmp_path, layout="zip")

    def test_duplicate_stem(self, tmp_path):
        _png(tmp_path / "a.png")
        _png(tmp_path / "a.jpg")
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(tmp_path, layout="identity")

    def test_cache_round_trip(self, paired_root, tmp_path):
        m = load_manifest(paired_root)
        write_manifest(tmp_path / "m.tsv", m)
        lines = (tmp_path / "m.tsv").read_text().splitlines()
        assert all(len(line.split("\t")) == 3 for line in lines)
        assert read_manifest(tmp_path / "m.tsv").entries == m.entries

    def test_cache_duplicates(self, tmp_path):
        (tmp_path / "m.tsv").write_text("a\tx\ty\na\tx\ty\n")
        with pytest.raises(ManifestError, match="duplicate"):
            read_manifest(tmp_path / "m.tsv")


class TestPreprocess:
    def test_resize_512x384(self, tmp_path):
        _png(tmp_path / "big.png", w=512, h=384)
        s = preprocess(ManifestEntry("big", tmp_path / "big.png", tmp_path / "big.png"), 256)
        assert s.degraded.shape == s.reference.shape == (3, 256, 256)

    def test_range_map(self, tmp_path):
        _png(tmp_path / "black.png", value=0)
        _png(tmp_path / "white.png", value=255)
        assert torch.all(load_image(tmp_path / "black.png") == -1.0)
        assert torch.all(load_image(tmp_path / "white.png") == 1.0)

    def test_undecodable(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not an image")
        with pytest.raises(SampleError) as info:
            load_image(tmp_path / "bad.png")
        assert info.value.sample_id.endswith("bad.png")

    def test_identical_pair_stays_identical(self):
        x = torch.rand(3, 40, 30) * 2 - 1
        s = preprocess(PairedSample("p", x, x.clone()), 32)
        assert torch.equal(s.degraded, s.reference)

    def test_idempotent_at_size(self):
        x = torch.rand(3, 32, 32) * 2 - 1
        s = preprocess(PairedSample("p", x, x), 32)
        assert torch.equal(s.degraded, x)
        assert torch.equal(preprocess(s, 32).degraded, s.degraded)

    def test_save_load_round_trip(self, tmp_path):
        arr = _png(tmp_path / "a.png", w=5, h=4, seed=3)
        img = load_image(tmp_path / "a.png")
        save_image(tmp_path / "b.png", img)
        assert np.array_equal(np.asarray(Image.open(tmp_path / "b.png")), arr)


class TestAugment:
    def test_deterministic(self):
        s = _asymmetric()
        a, pa = augment(s, 123, 16)
        b, pb = augment(s, 123, 16)
        assert pa == pb
        assert torch.equal(a.degraded, b.degraded) and torch.equal(a.reference, b.reference)

    def test_flip_pairing(self):
        s = _asymmetric()
        seen = set()
        for seed in range(20):
            out, p = augment(s, seed, None)
            seen.add(p.flip)
            crop = AugmentParams(p.top, p.left, p.height, p.width, False)
            for got, raw in ((out.degraded, s.degraded), (out.reference, s.reference)):
                base = apply_augment(raw, crop)
                assert torch.equal(got, base.flip(-1) if p.flip else base)
        assert seen == {True, False}

    def test_identity_params(self):
        s = _asymmetric()
        p = AugmentParams.identity(16, 20)
        assert torch.equal(apply_augment(s.degraded, p), s.degraded)
        assert torch.equal(apply_augment(s.degraded, p, None), s.degraded)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(8, 64), st.integers(8, 64))
    def test_crop_fraction_range(self, seed, h, w):
        p = sample_augment_params(h, w, seed)
        assert 0.8 * h - 1 <= p.height <= h and 0.8 * w - 1 <= p.width <= w
        assert p.top + p.height <= h and p.left + p.width <= w

    def test_recorded_transform_reproduces_outputs(self):
        s = _asymmetric()
        for seed in range(5):
            out, p = augment(s, seed, 16)
            assert torch.equal(apply_augment(s.degraded, p, 16), out.degraded)
            assert torch.equal(apply_augment(s.reference, p, 16), out.reference)

    def test_output_size(self):
        out, _ = augment(_asymmetric(), 9, 16)
        assert out.degraded.shape == out.reference.shape == (3, 16, 16)


class TestBatches:
    def test_sizes(self):
        assert [len(b) for b in batch_indices(13, 6, 0)] == [6, 6, 1]

    def test_same_seed_same_order(self):
        assert batch_indices(13, 6, 5, 2) == batch_indices(13, 6, 5, 2)
        assert batch_indices(13, 6, 5, 2) != batch_indices(13, 6, 5, 3)

    @settings(max_examples=30)
    @given(st.integers(1, 40), st.integers(1, 10), st.integers(0, 1000), st.integers(0, 5))
    def test_exactly_once(self, n, bs, seed, epoch):
        flat = [i for b in batch_indices(n, bs, seed, epoch) for i in b]
        assert Counter(flat) == Counter(range(n))

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            batch_indices(4, 0, 0)

    def test_batches_stream(self):
        ds = PairedDataset(synthetic_pairs(13, size=16, seed=1), size=16, augment=True, seed=3)
        out = list(batches(ds, 6, shuffle_seed=4))
        assert [b.degraded.shape[0] for b in out] == [6, 6, 1]
        assert sorted(i for b in out for i in b.ids) == sorted(s.id for s in ds.samples)
        again = list(batches(ds, 6, shuffle_seed=4))
        assert all(torch.equal(a.degraded, b.degraded) for a, b in zip(out, again))

    def test_identity_dataset(self):
        ds = PairedDataset(synthetic_pairs(2, size=16), size=16, augment=False, identity=True)
        assert all(torch.equal(s.degraded, s.reference) for s in ds.samples)

    def test_dataset_from_manifest(self, paired_root):
        ds = PairedDataset(load_manifest(paired_root), size=16, augment=False)
        assert len(ds) == 5 and ds[0].degraded.shape == (3, 16, 16)


def test_synthetic_pairs():
    pairs = synthetic_pairs(4, size=16, seed=0)
    assert [p.id for p in pairs] == ["syn000", "syn001", "syn002", "syn003"]
    for p in pairs:
        assert p.degraded.shape == p.reference.shape == (3, 16, 16)
        assert p.degraded.min() >= -1 and p.degraded.max() <= 1
        assert not torch.equal(p.degraded, p.reference)
    again = synthetic_pairs(4, size=16, seed=0)
    assert all(torch.equal(a.degraded, b.degraded) for a, b in zip(pairs, again))
