import csv
import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from rbsr.errors import InvalidBurstLength, InvalidShape
from rbsr.losses import (
    LossValue,
    compute_loss,
    every_step_loss,
    implicit_weighting_loss,
    l1_loss,
    sample_index,
)
from rbsr.metrics import MetricReport, gaussian_window, psnr, ssim, write_reports

from conftest import MICRO, seeded_model
from oracles import psnr_oracle, ssim_oracle


# PSNR --------------------------------------------------------------------------

def test_psnr_identical_is_infinite():
    x = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(x, x) == math.inf


def test_psnr_constant_offset():
    assert psnr(np.full((4, 4), 0.3), np.full((4, 4), 0.4)) == pytest.approx(20.0, abs=1e-12)


def test_psnr_matches_oracle(rng):
    for _ in range(20):
        a, b = rng.uniform(-0.1, 1.1, size=(2, 16, 16, 3))
        assert abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-10


def test_psnr_clips_predictions():
    assert psnr(np.full((4, 4), 1.7), np.ones((4, 4))) == math.inf


def test_psnr_shape_mismatch():
    with pytest.raises(InvalidShape):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


@given(a=st.sampled_from([0.25, 0.5, 2.0, 4.0, 8.0]), seed=st.integers(0, 10_000))
def test_psnr_scale_invariance_exact(a, seed):
    r = np.random.default_rng(seed)
    x, y = r.uniform(size=(2, 6, 6))
    assert psnr(a * x, a * y, a * 1.0) == psnr(x, y, 1.0)


@given(a=st.floats(0.01, 100), seed=st.integers(0, 10_000))
def test_psnr_scale_invariance_general(a, seed):
    r = np.random.default_rng(seed)
    x, y = r.uniform(size=(2, 6, 6))
    assert psnr(a * x, a * y, a) == pytest.approx(psnr(x, y, 1.0), rel=1e-9)


# SSIM --------------------------------------------------------------------------

def test_gaussian_window_normalized():
    g = gaussian_window()
    assert g.shape == (11,) and abs(g.sum() - 1) < 1e-15 and g[5] == g.max()


def test_ssim_identical_is_one(rng):
    x = rng.uniform(size=(20, 20, 3))
    assert abs(ssim(x, x) - 1.0) < 1e-9


def test_ssim_inverted_below_one(rng):
    x = rng.uniform(size=(16, 16))
    assert ssim(1 - x, x) < 1.0


def test_ssim_matches_window_oracle(rng):
    for _ in range(20):
        a, b = rng.uniform(size=(2, 16, 16))
        assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6


def test_ssim_channel_mean(rng):
    a, b = rng.uniform(size=(2, 14, 14, 3))
    assert ssim(a, b) == pytest.approx(np.mean([ssim(a[..., c], b[..., c]) for c in range(3)]), abs=1e-12)


def test_ssim_too_small():
    with pytest.raises(InvalidShape):
        ssim(np.zeros((10, 12)), np.zeros((10, 12)))


@given(arrays(np.float64, (2, 12, 13), elements=st.floats(0, 1)))
@settings(max_examples=30, deadline=None)
def test_ssim_symmetric_and_bounded(pair):
    x, y = pair
    s = ssim(x, y)
    assert s == pytest.approx(ssim(y, x), abs=1e-12)
    assert -1.0 <= s <= 1.0 + 1e-12


# reports -----------------------------------------------------------------------

def test_metric_report_serialization(tmp_path):
    rep = MetricReport(n_frames=14, param_count=123)
    rep.add("a", 30.0, 0.9, 5.0)
    rep.add("b", math.inf, 1.0, 6.0)
    write_reports([rep], tmp_path)
    lines = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert lines[1]["psnr_infinite"] and not lines[0]["psnr_infinite"]
    with open(tmp_path / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["sample_id", "n_frames", "psnr_db", "ssim", "runtime_ms"]
    assert rows[0]["sample_id"] == "a" and float(rows[0]["psnr_db"]) == 30.0
    assert (tmp_path / "summary.csv").exists()
    assert rep.mean_ssim == pytest.approx(0.95)


# losses ------------------------------------------------------------------------

def test_l1_zero_and_constant():
    x = torch.rand(1, 3, 4, 4)
    assert float(l1_loss(x, x)) == 0.0
    assert float(l1_loss(torch.full((2, 3), 0.5), torch.full((2, 3), 0.3))) == pytest.approx(0.2, abs=1e-7)


def test_l1_matches_brute_force(rng):
    a, b = rng.normal(size=(2, 3, 5, 7))
    ref = sum(abs(u - v) for u, v in zip(a.ravel(), b.ravel())) / a.size
    val = l1_loss(torch.from_numpy(a), torch.from_numpy(b))
    assert float(val) == pytest.approx(ref, abs=1e-12)
    assert isinstance(val, LossValue) and val.sampled_index is None


def test_l1_shape_mismatch():
    with pytest.raises(InvalidShape):
        l1_loss(torch.zeros(2, 3), torch.zeros(3, 2))


class PerfectModel(torch.nn.Module):
    """Returns the target for every frame count."""

    def __init__(self, target):
        super().__init__()
        self.target = target

    def forward(self, burst, flows=None):
        return self.target

    def forward_intermediates(self, burst, indices, flows=None):
        return [self.target for _ in indices]


def test_sampler_singleton_for_two_frames():
    r = np.random.default_rng(0)
    assert {sample_index(2, r) for _ in range(50)} == {1}


def test_sampler_rejects_short_bursts():
    with pytest.raises(InvalidBurstLength):
        sample_index(1, np.random.default_rng(0))


def test_sampler_uniform_chi_square():
    r = np.random.default_rng(2024)
    draws = [sample_index(14, r) for _ in range(13_000)]
    counts = np.bincount(draws, minlength=15)
    assert counts[0] == 0 and counts[14] == 0
    assert stats.chisquare(counts[1:14]).pvalue > 0.01


def test_implicit_weighting_two_frames_terms():
    model = seeded_model(MICRO, randomize=True)
    burst = torch.rand(1, 2, 4, 8, 8)
    target = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        lv = implicit_weighting_loss(model, burst, target, np.random.default_rng(0))
        ref = (model(burst[:, :1]) - target).abs().mean() + (model(burst) - target).abs().mean()
        ev = every_step_loss(model, burst, target)
    assert lv.sampled_index == 1
    assert float(lv) == pytest.approx(float(ref), abs=1e-6)
    assert float(ev) == pytest.approx(float(lv) / 2, abs=1e-6)


def test_implicit_weighting_deterministic_and_bounded():
    model = seeded_model(MICRO, randomize=True)
    burst = torch.rand(1, 5, 4, 8, 8)
    target = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        a = implicit_weighting_loss(model, burst, target, np.random.default_rng(7))
        b = implicit_weighting_loss(model, burst, target, np.random.default_rng(7))
        last = float(l1_loss(model(burst), target))
    assert float(a) == float(b) and a.sampled_index == b.sampled_index
    assert 1 <= a.sampled_index <= 4
    assert float(a) >= last


def test_implicit_weighting_rejects_single_frame():
    with pytest.raises(InvalidBurstLength):
        implicit_weighting_loss(PerfectModel(None), torch.rand(1, 1, 4, 8, 8), None, np.random.default_rng(0))


@pytest.mark.parametrize("variant", ["last_only", "every_step", "implicit_weighting"])
def test_losses_zero_for_perfect_model(variant):
    target = torch.rand(1, 3, 16, 16)
    lv = compute_loss(variant, PerfectModel(target), torch.rand(1, 4, 4, 2, 2), target, np.random.default_rng(0))
    assert float(lv) == 0.0


def test_every_step_single_frame_is_l1():
    model = seeded_model(MICRO, randomize=True)
    burst = torch.rand(1, 1, 4, 8, 8)
    target = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        assert float(every_step_loss(model, burst, target)) == float(l1_loss(model(burst), target))


def test_single_frame_falls_back_to_l1():
    model = seeded_model(MICRO, randomize=True)
    burst = torch.rand(1, 1, 4, 8, 8)
    target = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        lv = compute_loss("implicit_weighting", model, burst, target, np.random.default_rng(0))
    assert lv.sampled_index is None and float(lv) == float(l1_loss(model(burst), target))


@given(seed=st.integers(0, 1000), n=st.integers(2, 5))
@settings(max_examples=10, deadline=None)
def test_losses_non_negative(seed, n):
    model = seeded_model(MICRO, seed=seed, randomize=True)
    g = torch.Generator().manual_seed(seed)
    burst = torch.rand(1, n, 4, 8, 8, generator=g)
    target = torch.rand(1, 3, 64, 64, generator=g)
    with torch.no_grad():
        for variant in ("last_only", "every_step", "implicit_weighting"):
            assert float(compute_loss(variant, model, burst, target, np.random.default_rng(seed))) >= 0
