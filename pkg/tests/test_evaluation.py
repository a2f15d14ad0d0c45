import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import GOLDEN_2X2, circles, stripes
from xray_ddpm.core import ShapeError
from xray_ddpm.evaluation import (EvalReport, contrast_std, evaluate_pair, format_table, luminance_mean, ssim)
from xray_ddpm.preprocess import CorpusError

def test_luminance():
    assert luminance_mean(np.full((3, 3), 7.0)) == 7.0
    assert luminance_mean(np.array([0.0, 255.0])) == 127.5
    x = np.arange(20.0)
    assert luminance_mean(x) == luminance_mean(x[::-1])
    with pytest.raises(ShapeError):
        luminance_mean(np.array([]))


def test_contrast():
    assert contrast_std(np.full((4, 4), 3.0)) == 0.0
    assert contrast_std(np.array([0.0, 2.0])) == pytest.approx(1.414214, abs=1e-6)
    x = np.random.default_rng(0).normal(size=100)
    assert contrast_std(-3 * x) == pytest.approx(3 * contrast_std(x), rel=1e-12)
    with pytest.raises(ShapeError):
        contrast_std(np.array([1.0]))


def test_contrast_matches_two_pass():
    x = np.random.default_rng(1).uniform(0, 255, 1000)
    mean = sum(x) / len(x)
    var = sum((v - mean) ** 2 for v in x) / (len(x) - 1)
    assert contrast_std(x) == pytest.approx(var**0.5, rel=1e-6)


def test_ssim_golden_2x2():
    x = np.array([[0.0, 0.0], [255.0, 255.0]])
    r = ssim(x, x[::-1])
    assert r.luminance == 1.0
    assert r.contrast == pytest.approx(1.0, abs=1e-12)
    assert abs(r.ssim - GOLDEN_2X2) < 1e-9


def test_ssim_constant_images():
    r = ssim(np.full((5, 5), 100.0), np.full((5, 5), 100.0))
    assert (r.luminance, r.contrast, r.structure, r.ssim) == (1.0, 1.0, 1.0, 1.0)


def test_ssim_components_product_with_weights():
    rng = np.random.default_rng(3)
    x, y = rng.uniform(0, 255, (2, 8, 8))
    r = ssim(x, y, weights=(2.0, 1.0, 3.0))
    assert r.ssim == pytest.approx(r.luminance**2 * r.contrast * r.structure**3, abs=1e-9)


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeError):
        ssim(np.zeros((2, 2)), np.zeros((2, 3)))


images = arrays(np.float64, (6, 6), elements=st.floats(0, 255))


@settings(max_examples=100, deadline=None)
@given(images, images)
def test_ssim_properties(x, y):
    a = ssim(x, y).ssim
    assert abs(a - ssim(y, x).ssim) <= 1e-12
    assert -1.0 <= a <= 1.0
    assert abs(ssim(x, x).ssim - 1.0) <= 1e-9


def test_evaluate_identity_aligned():
    a = circles(5, 16, seed=0)
    r = evaluate_pair(a, a, "aligned")
    assert r.mean_mse == 0.0
    assert r.mean_ssim == pytest.approx(1.0, abs=1e-12)
    assert r.n_pairs == 5


def test_evaluate_random_deterministic():
    a, b = circles(6, 16, 0), stripes(4, 16, 1)
    r1 = evaluate_pair(a, b, "random", 50, seed=3)
    r2 = evaluate_pair(a, b, "random", 50, seed=3)
    assert r1 == r2
    assert r1.n_pairs == 50
    assert r1.mean_mse > 0 and -1 <= r1.mean_ssim <= 1


def test_evaluate_errors():
    a = circles(3, 8, 0)
    with pytest.raises(CorpusError):
        evaluate_pair(a, a[:2], "aligned")
    with pytest.raises(CorpusError):
        evaluate_pair(a, a[:0])
    with pytest.raises(ValueError):
        evaluate_pair(a, a, "nearest")


def test_mse_is_in_pixel_domain():
    a = np.full((1, 1, 4, 4), -1.0, np.float32)
    b = np.full((1, 1, 4, 4), 1.0, np.float32)
    assert evaluate_pair(a, b, "aligned").mean_mse == 255.0**2


def test_report_json_fields():
    r = EvalReport("real", "synthetic", "aligned", 3, 1.5, 0.5)
    assert set(json.loads(r.to_json())) == {"class_a", "class_b", "strategy", "n_pairs", "mean_mse", "mean_ssim"}


def test_table_format():
    rows = [EvalReport("Real positive cases", "Synthetic positive cases", "random", 256, 105.65, 0.43),
            EvalReport("Real negative cases", "Real positive cases", "random", 256, 194.63, 0.26)]
    lines = format_table(rows).splitlines()
    assert lines[0].split() == ["Class", "1", "Class", "2", "MSE", "SSIM"]
    assert lines[1].endswith("105.65  0.43")
    assert len({len(l) for l in lines}) == 1
