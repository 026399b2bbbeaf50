import json

import numpy as np
import pytest
from scipy import ndimage

from rawbayer.imgcore import BayerImage, ColorImage, pattern_of
from rawbayer.isp import (
    CameraModel,
    ColorMatrix,
    Demosaic,
    Denoise,
    Gamma,
    IspPipeline,
    Linearize,
    Noise,
    PipelineError,
    Resize,
    ToneCurve,
    WhiteBalance,
    add_noise,
    apply_color_matrix,
    apply_white_balance,
    camera_stages,
    gamma_compress,
    gamma_expand,
    gray_world_gains,
    invert_camera,
    load_pipeline,
    poly_invert,
    render_camera,
    run_forward,
    run_reverse,
    save_pipeline,
)
from rawbayer.mosaic import mosaic, mosaic_array

SIMPLE = {
    "stages": [
        {"type": "linearize", "black": 64, "white": 4095},
        {"type": "denoise", "method": "none"},
        {"type": "demosaic", "alg": "hybrid"},
        {"type": "white_balance", "mode": "gray_world"},
        {"type": "gamma", "a": 0.4545},
    ]
}
RGGB = pattern_of("RGGB")


def smooth_raw(rng, h, w, layout="RGGB", bits=12, black=64, white=4095):
    scene = ndimage.gaussian_filter(rng.random((3, h, w)), 3)
    scene = (scene - scene.min()) / (scene.max() - scene.min())
    scene = 0.05 + 0.6 * scene * rng.uniform(0.5, 1.0, (3, 1, 1))
    pat = pattern_of(layout)
    dn = np.floor(black + mosaic_array(scene, pat) * (white - black) + 0.5)
    return BayerImage(dn, bits, pat, black, white)


def test_simple_pipeline_parses_to_five_stages():
    pipe = IspPipeline.from_config(SIMPLE)
    assert [s.kind for s in pipe.stages] == ["linearize", "denoise", "demosaic", "white_balance", "gamma"]
    assert pipe.to_config() == SIMPLE


def test_config_file_round_trip(tmp_path):
    pipe = IspPipeline.from_config(SIMPLE)
    save_pipeline(pipe, tmp_path / "p.json")
    again = load_pipeline(tmp_path / "p.json")
    assert again == pipe
    assert json.loads((tmp_path / "p.json").read_text()) == SIMPLE


def test_full_stage_catalogue_round_trips():
    doc = {
        "stages": [
            {"type": "linearize", "black": 0, "white": 1023},
            {"type": "noise", "sigma": 1.5, "poisson_scale": 0.2, "seed": 9},
            {"type": "demosaic", "alg": "bilinear"},
            {"type": "white_balance", "mode": "fixed", "gains": [2.0, 1.0, 1.5]},
            {"type": "color_matrix", "matrix": [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.2, 0.9]]},
            {"type": "tone_curve", "coeffs": [[0.0, 1.0], [0.0, 0.5, 0.5], [0.0, 1.0]]},
            {"type": "gamma", "a": 1.0},
            {"type": "resize", "height": 4, "width": 6, "filter": "bilinear"},
        ]
    }
    assert IspPipeline.from_config(doc).to_config() == doc


@pytest.mark.parametrize(
    "doc",
    [
        {"stages": [{"type": "demosaic"}, {"type": "demosaic"}]},
        {"stages": [{"type": "gamma", "a": 0.5}, {"type": "demosaic"}]},
        {"stages": [{"type": "demosaic"}, {"type": "linearize", "black": 0, "white": 10}]},
        {"stages": [{"type": "linearize", "black": 0, "white": 10}, {"type": "gamma", "a": 0.5}]},
        {"stages": [{"type": "sharpen"}]},
        {"stages": [{"type": "gamma", "a": 0.5, "extra": 1}]},
        {"stages": [{"type": "gamma"}]},
        {"stages": [{"type": "gamma", "a": 0.0}]},
        {"stages": [{"type": "gamma", "a": 1.5}]},
        {"stages": [{"type": "demosaic", "alg": "vng"}]},
        {"stages": [], "version": 1},
        {"pipeline": []},
    ],
)
def test_schema_violations(doc):
    with pytest.raises(PipelineError):
        IspPipeline.from_config(doc)


def test_forward_constant_identity():
    raw = BayerImage(np.full((8, 8), 1000), 12, RGGB)
    pipe = IspPipeline((Linearize(0, 4095), Demosaic("bilinear")))
    out = run_forward(pipe, raw).image
    np.testing.assert_allclose(out.planes, 1000 / 4095, atol=1e-15)
    assert out.color_state == "display-referred"


def test_forward_gamma_on_quarter():
    raw = BayerImage(np.full((4, 4), 1000), 12, RGGB)
    out = run_forward(IspPipeline((Linearize(0, 4000), Demosaic(), Gamma(0.5))), raw).image
    np.testing.assert_allclose(out.planes, 0.5, atol=1e-15)


def test_forward_requires_demosaic(rng):
    with pytest.raises(PipelineError):
        run_forward(IspPipeline((Linearize(0, 255),)), BayerImage(np.zeros((2, 2), int), 8, RGGB))


def test_gray_world_on_constant_gray_raw():
    raw = BayerImage(np.full((8, 8), 2000), 12, RGGB, 64, 4095)
    res = run_forward(IspPipeline.from_config(SIMPLE), raw)
    assert res.wb_gains == ((1.0, 1.0, 1.0),)
    assert np.ptp(res.image.planes) <= 1e-15


def test_forward_differs_from_unbalanced_rendering(rng):
    raw = smooth_raw(rng, 32, 32)
    balanced = run_forward(IspPipeline.from_config(SIMPLE), raw).image
    plain = run_forward(IspPipeline((Linearize(64, 4095), Demosaic("hybrid"), Gamma(0.4545))), raw).image
    assert not np.allclose(balanced.planes, plain.planes)


def test_stage_order_matters(rng):
    raw = smooth_raw(rng, 16, 16)
    wb = WhiteBalance("fixed", (1.8, 1.0, 1.3))
    a = run_forward(IspPipeline((Linearize(64, 4095), Demosaic(), wb, Gamma(0.5))), raw).image
    b = run_forward(IspPipeline((Linearize(64, 4095), Demosaic(), Gamma(0.5), wb)), raw).image
    assert a != b


def test_gray_world_gains_examples():
    planes = np.stack([np.full((2, 2), v) for v in (0.2, 0.4, 0.8)])
    assert gray_world_gains(ColorImage(planes)) == pytest.approx((2.0, 1.0, 0.5))
    assert gray_world_gains(ColorImage(np.full((3, 2, 2), 0.3))) == (1.0, 1.0, 1.0)
    planes[0] = 0
    with pytest.raises(ValueError):
        gray_world_gains(ColorImage(planes))


def test_gray_world_equalizes_means(rng):
    planes = rng.random((3, 16, 16)) * np.array([0.3, 0.6, 0.9])[:, None, None]
    g = gray_world_gains(ColorImage(planes))
    balanced = planes * np.asarray(g)[:, None, None]
    means = balanced.reshape(3, -1).mean(axis=1)
    assert np.ptp(means) <= 1e-9


def test_white_balance_and_matrix_examples(rng):
    px = ColorImage(np.array([0.2, 0.4, 0.8])[:, None, None] * np.ones((3, 1, 1)))
    np.testing.assert_allclose(apply_white_balance(px, (2, 1, 0.5)).planes.ravel(), 0.4, atol=1e-15)
    x = ColorImage(rng.uniform(0.2, 0.6, (3, 5, 5)))
    assert apply_color_matrix(x, np.eye(3)) == x
    m = np.array([[0.9, 0.1, 0.0], [0.05, 0.9, 0.05], [0.0, 0.1, 0.9]])
    back = apply_color_matrix(apply_color_matrix(x, m), np.linalg.inv(m))
    assert np.max(np.abs(back.planes - x.planes)) <= 1e-9


def test_gamma_ops():
    half = ColorImage(np.full((3, 1, 1), 0.25), "sensor-linear")
    np.testing.assert_allclose(gamma_compress(half, 0.5).planes, 0.5)
    grid = ColorImage(np.tile(np.linspace(0, 1, 1024), (3, 1, 1)))
    for a in (0.4545, 0.5, 0.9):
        assert np.max(np.abs(gamma_expand(gamma_compress(grid, a), a).planes - grid.planes)) <= 1e-12
    assert np.array_equal(gamma_compress(grid, 1.0).planes, grid.planes)
    with pytest.raises(ValueError):
        gamma_compress(grid, 0.0)


@pytest.mark.parametrize(
    "stage",
    [
        ColorMatrix(((0.9, 0.1, 0.0), (0.05, 0.9, 0.05), (0.0, 0.1, 0.9))),
        Gamma(0.4545),
        ToneCurve(((0.0, 0.8, 0.2), (0.0, 1.0), (0.0, 0.5, 0.3, 0.2))),
    ],
)
def test_stage_inverse_real_domain(rng, stage):
    x = rng.uniform(0.05, 0.95, (3, 6, 6))
    assert np.max(np.abs(stage.inverse(stage.forward(x)) - x)) <= 1e-9


def test_white_balance_stage_inverse(rng):
    x = rng.uniform(0.05, 0.95, (3, 6, 6))
    wb = WhiteBalance("fixed", (1.5, 1.0, 0.7))
    assert np.max(np.abs(wb.inverse(wb.forward(x, wb.gains), wb.gains) - x)) <= 1e-15


def test_poly_invert_bisection_tolerance(rng):
    coeffs = (0.0, 0.3, 0.2, 0.2, 0.1, 0.2)
    y = rng.random(500)
    v = np.polynomial.polynomial.polyval(y, coeffs)
    sol, outside = poly_invert(coeffs, v)
    assert not outside.any()
    assert np.max(np.abs(np.polynomial.polynomial.polyval(sol, coeffs) - v)) <= 1e-8


@pytest.mark.parametrize(
    "stage",
    [
        Denoise("bayer_median3"),
        ColorMatrix(((1, 1, 0), (1, 1, 0), (0, 0, 1))),
        ToneCurve(((0.0, 1.0, -1.0), (0.0, 1.0), (0.0, 1.0))),
        Resize(4, 4),
    ],
)
def test_non_invertible_stages_rejected_on_reverse(stage):
    stages = (stage, Demosaic()) if stage.domain == "bayer" else (Demosaic(), stage)
    with pytest.raises(PipelineError):
        run_reverse(IspPipeline(stages), ColorImage(np.zeros((3, 4, 4))), 12, RGGB)


def test_reverse_of_forward_round_trip(rng):
    pipe = IspPipeline.from_config(SIMPLE)
    for layout in ("RGGB", "BGGR", "GRBG", "GBRG"):
        raw = smooth_raw(rng, 24, 32, layout)
        fwd = run_forward(pipe, raw)
        back = run_reverse(pipe, fwd.image, 12, layout, wb_gains=fwd.wb_gains).image
        close = np.abs(back.samples.astype(int) - raw.samples) <= 1
        assert close.mean() >= 0.99
        assert (back.black_level, back.white_level) == (64, 4095)


def test_forward_of_reverse_round_trip(rng):
    pipe = IspPipeline.from_config(SIMPLE)
    raw = smooth_raw(rng, 32, 32)
    fwd = run_forward(pipe, raw)
    rev = run_reverse(pipe, fwd.image, 12, RGGB, wb_gains=fwd.wb_gains)
    again = run_forward(pipe, rev.image)
    ok = ~(fwd.clip.mask | rev.clip.mask | again.clip.mask)
    assert ok.mean() > 0.9
    assert np.max(np.abs(again.image.planes - fwd.image.planes)[:, ok]) <= 2 / 255


def test_identity_camera_reverse_is_mosaic(rng):
    color = ColorImage(rng.random((3, 10, 12)))
    pipe = IspPipeline(camera_stages(CameraModel.identity()))
    out = run_reverse(pipe, color, 12, RGGB).image
    assert out == mosaic(color, RGGB, 12)


def test_supersaturated_color_does_not_invert(rng):
    raw = smooth_raw(rng, 16, 16)
    boosted = np.array(raw.samples, dtype=float)
    boosted[raw.pattern.masks(16, 16)[0] > 0] = 4095  # saturate red everywhere
    raw = raw.replace(boosted)
    pipe = IspPipeline((Linearize(64, 4095), Demosaic("bilinear"), WhiteBalance("fixed", (1.5, 1.0, 1.0)), Gamma(0.4545)))
    fwd = run_forward(pipe, raw)
    assert fwd.clip.clipped_fraction > 0.5
    back = run_reverse(pipe, fwd.image, 12, RGGB).image
    red = raw.pattern.masks(16, 16)[0] > 0
    assert np.all(back.samples[red] < 4095 - 1)


def test_clip_report_json():
    raw = BayerImage(np.full((4, 4), 4095), 12, RGGB)
    res = run_forward(IspPipeline((Linearize(64, 3000), Demosaic())), raw)
    assert res.clip.to_dict() == {"clipped_fraction": 1.0}


def test_resize_in_reverse_both_orders(rng):
    color = ColorImage(rng.random((3, 12, 16)))
    pipe = IspPipeline((Demosaic(), Gamma(0.5)))
    a = run_reverse(pipe, color, 12, RGGB, resize=(6, 8, "box"), resize_order="before").image
    b = run_reverse(pipe, color, 12, RGGB, resize=(6, 8, "box"), resize_order="after").image
    assert a.samples.shape == b.samples.shape == (6, 8)
    assert a != b


def test_noise_identity_and_determinism(rng):
    raw = BayerImage(rng.integers(0, 4096, (16, 16)), 12, RGGB)
    assert add_noise(raw, 0, 0, 1) == raw
    assert add_noise(raw, 3, 0.5, 42) == add_noise(raw, 3, 0.5, 42)
    assert add_noise(raw, 3, 0.5, 42) != add_noise(raw, 3, 0.5, 43)


def test_gaussian_noise_std():
    raw = BayerImage(np.full((1000, 1000), 2000), 12, RGGB)
    out = add_noise(raw, 2.0, 0.0, 7).samples.astype(float)
    # rounding adds 1/12 DN^2 of variance
    assert abs(np.sqrt(out.var() - 1 / 12) - 2.0) <= 0.04


def test_poisson_noise_variance():
    raw = BayerImage(np.full((500, 500), 1000), 12, RGGB)
    out = add_noise(raw, 0.0, 4.0, 3).samples.astype(float)
    assert out.var() == pytest.approx(4.0 * 1000, rel=0.03)
    assert out.mean() == pytest.approx(1000, abs=0.5)


def test_noise_stage_in_reverse_is_seeded(rng):
    pipe = IspPipeline((Noise(2.0, 0.0), Demosaic()))
    color = ColorImage(rng.uniform(0.2, 0.8, (3, 8, 8)))
    a = run_reverse(pipe, color, 12, RGGB, seed=5).image
    assert a == run_reverse(pipe, color, 12, RGGB, seed=5).image
    assert a != run_reverse(pipe, color, 12, RGGB, seed=6).image


def test_camera_model_render_examples():
    kappa = ColorImage(np.full((3, 2, 2), 0.5), "sensor-linear")
    assert render_camera(CameraModel.identity(), kappa).planes.tolist() == kappa.planes.tolist()
    square = CameraModel(np.ones(3), np.eye(3), np.tile([0.0, 1.0], (3, 1)))
    np.testing.assert_allclose(render_camera(square, kappa).planes, 0.25)
    assert CameraModel.identity().parameter_count == 24


def test_camera_model_round_trip(rng):
    model = CameraModel(
        np.array([1.2, 1.0, 0.8]),
        np.array([[0.8, 0.15, 0.05], [0.1, 0.8, 0.1], [0.05, 0.15, 0.8]]),
        np.array([[1.5, -0.8, 0.3, 0.0, 0.0], [1.2, -0.3, 0.1, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 0.0]]),
    )
    kappa = ColorImage(rng.uniform(0.05, 0.6, (3, 8, 8)), "sensor-linear")
    rendered = render_camera(model, kappa)
    inv = invert_camera(model, rendered)
    assert not inv.clip.mask.any()
    assert np.max(np.abs(inv.image.planes - kappa.planes)) <= 1e-6


def test_camera_inversion_flags_saturation():
    kappa = ColorImage(np.full((3, 2, 2), 0.9), "sensor-linear")
    model = CameraModel(np.array([2.0, 1.0, 1.0]), np.eye(3), np.tile([1.0, 0, 0, 0, 0], (3, 1)))
    inv = invert_camera(model, render_camera(model, kappa))
    assert inv.clip.mask.all()


def test_camera_model_rejects_non_monotone_and_singular():
    with pytest.raises(ValueError):
        CameraModel(np.ones(3), np.eye(3), np.tile([1.0, -2.0], (3, 1)))
    with pytest.raises(ValueError):
        CameraModel(np.ones(3), np.zeros((3, 3)), np.tile([1.0], (3, 1)))


def test_grayscale_model_shares_response(rng):
    resp = [0.5, 0.5]
    model = CameraModel(np.ones(3), np.eye(3), np.tile(resp, (3, 1)))
    gray = rng.random((1, 4, 4))
    out = render_camera(model, ColorImage(np.repeat(gray, 3, axis=0), "sensor-linear")).planes
    expected = 0.5 * gray + 0.5 * gray**2
    np.testing.assert_allclose(out, np.repeat(expected, 3, axis=0), atol=1e-15)
