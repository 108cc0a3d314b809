import logging
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from cevae.errors import SampleError
from cevae.metrics import (
    PSNR_CAP,
    evaluate_dataset,
    gaussian_window,
    psnr,
    read_metrics_tsv,
    ssim_metric,
    summarize,
    write_metrics_tsv,
)

from oracles import brute_ssim


class TestPsnr:
    def test_identical_capped(self):
        x = np.random.default_rng(0).random((3, 8, 8))
        assert psnr(x, x) == PSNR_CAP

    def test_analytic_20db(self):
        gt = np.zeros((3, 10, 10))
        assert abs(psnr(gt, gt + 0.1) - 20.0) < 1e-9

    def test_definition_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
        ref = 10 * np.log10(1.0 / np.mean((a - b) ** 2))
        assert abs(psnr(a, b) - ref) < 1e-9

    def test_peak(self):
        gt = np.zeros((4, 4))
        assert abs(psnr(gt, gt + 25.5, peak=255) - 20.0) < 1e-9

    def test_accepts_tensors(self):
        t = torch.zeros(3, 4, 4)
        assert abs(psnr(t, t + 0.1) - 20.0) < 1e-6

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(2)
        gt = rng.random((3, 32, 32))
        noise = rng.standard_normal(gt.shape)
        vals = [psnr(gt, gt + amp * noise) for amp in (0.01, 0.05, 0.2)]
        assert vals[0] > vals[1] > vals[2]

    def test_errors(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 2)), peak=0)


class TestSsim:
    def test_window_normalized(self):
        w = gaussian_window()
        assert len(w) == 11 and abs(w.sum() - 1) < 1e-15

    def test_identical(self):
        x = np.random.default_rng(0).random((3, 20, 20))
        assert abs(ssim_metric(x, x) - 1) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.random((3, 24, 20))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert abs(ssim_metric(a, b) - brute_ssim(a, b)) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_skimage_reference(self, seed):
        rng = np.random.default_rng(100 + seed)
        a, b = rng.random((3, 32, 32)), rng.random((3, 32, 32))
        ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, data_range=1.0, channel_axis=0)
        assert abs(ssim_metric(a, b) - ref) < 1e-6

    def test_constant_shift_closed_form(self):
        mu = 0.3
        a = np.full((3, 16, 16), mu)
        k1 = 1e-4
        expected = (2 * mu * (mu + 0.5) + k1) / (mu ** 2 + (mu + 0.5) ** 2 + k1)
        assert abs(ssim_metric(a, a + 0.5) - expected) < 1e-12

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((2, 13, 13)), rng.random((2, 13, 13))
        s = ssim_metric(a, b)
        assert abs(s - ssim_metric(b, a)) < 1e-12
        assert -1 <= s <= 1

    def test_grayscale(self):
        x = np.random.default_rng(3).random((12, 12))
        assert abs(ssim_metric(x, x) - 1) < 1e-12

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim_metric(np.zeros((3, 10, 10)), np.zeros((3, 10, 10)))


def _pair(i, img):
    return SimpleNamespace(id=f"img{i}", degraded=img, reference=img)


class TestEvaluate:
    def test_identity_pair(self):
        img = torch.rand(3, 16, 16) * 2 - 1
        res = evaluate_dataset([_pair(0, img)], lambda x: x)
        assert res.summary["psnr"]["mean"] == 100.0
        assert res.summary["psnr"]["std"] == 0.0

    def test_skips_unreadable(self, caplog):
        g = torch.Generator().manual_seed(0)
        good = [_pair(i, torch.rand(3, 16, 16, generator=g) * 2 - 1) for i in range(3)]

        def broken():
            raise SampleError("cannot decode", sample_id="bad7")

        with caplog.at_level(logging.WARNING):
            res = evaluate_dataset([good[2], broken, good[0], good[1]], lambda x: x * 0.5)
        assert res.skipped == 1 and res.skipped_ids == ["bad7"]
        assert len(res.records) == 3
        assert [r.image_id for r in res.records] == ["img0", "img1", "img2"]
        assert "skipping" in caplog.text
        mean = sum(r.psnr for r in res.records) / 3
        assert abs(res.summary["psnr"]["mean"] - mean) < 1e-12

    def test_order_independent(self):
        g = torch.Generator().manual_seed(1)
        pairs = [_pair(i, torch.rand(3, 16, 16, generator=g) * 2 - 1) for i in range(4)]
        model = lambda x: x.flip(-1)  # noqa: E731
        a = evaluate_dataset(pairs, model)
        b = evaluate_dataset(pairs[::-1], model)
        assert a.records == b.records and a.summary == b.summary

    def test_lpips_column(self):
        img = torch.rand(3, 16, 16) * 2 - 1
        res = evaluate_dataset([_pair(0, img)], lambda x: x, lpips_fn=lambda a, b: (a - b).abs().sum())
        assert res.records[0].lpips == 0.0

    def test_summary_stats(self):
        from cevae.metrics import MetricRecord

        recs = [MetricRecord(str(i), p, 0.5) for i, p in enumerate([10.0, 20.0, 30.0])]
        s = summarize(recs)["psnr"]
        assert s == {"mean": 20.0, "std": float(np.std([10, 20, 30])), "min": 10.0, "max": 30.0}

    def test_tsv_round_trip(self, tmp_path):
        g = torch.Generator().manual_seed(2)
        pairs = [_pair(i, torch.rand(3, 16, 16, generator=g) * 2 - 1) for i in range(2)]
        res = evaluate_dataset(pairs, lambda x: x * 0.9)
        write_metrics_tsv(tmp_path / "m.tsv", res)
        text = (tmp_path / "m.tsv").read_text().splitlines()
        assert text[0] == "id\tpsnr\tssim\tlpips"
        assert text[-1] == "#skipped\t0"
        assert read_metrics_tsv(tmp_path / "m.tsv") == res.records
