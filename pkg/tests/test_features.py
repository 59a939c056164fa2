import numpy as np
import pytest

from vision import features as ops
from vision.feature_cube import quantize
from vision.scene_io import SceneData
from utils.errors import ConfigError


def scene_of(**channels):
    return SceneData(scene_id="t", channels={k: np.asarray(v, dtype=np.float32) for k, v in channels.items()})


def test_intensity_is_mean_of_colour_channels():
    scene = scene_of(red=np.full((3, 3), 100), green=np.full((3, 3), 200), nir=np.full((3, 3), 50))
    np.testing.assert_allclose(ops.compute_intensity(scene), 150.0)


def test_intensity_needs_a_colour_channel():
    with pytest.raises(ConfigError):
        ops.compute_intensity(scene_of(nir=np.zeros((3, 3))))


def test_saturation_extremes():
    grey = scene_of(red=np.full((2, 2), 90), green=np.full((2, 2), 90), blue=np.full((2, 2), 90))
    np.testing.assert_allclose(ops.compute_saturation(grey), 0.0, atol=1e-4)
    red = scene_of(red=np.full((2, 2), 255), green=np.zeros((2, 2)), blue=np.zeros((2, 2)))
    np.testing.assert_allclose(ops.compute_saturation(red), 255.0, rtol=1e-5)


def test_saturation_of_slight_tint_matches_hls_formula():
    r, g, b = 130.0, 128.0, 126.0
    scene = scene_of(red=np.full((1, 1), r), green=np.full((1, 1), g), blue=np.full((1, 1), b))
    hi, lo = max(r, g, b) / 255, min(r, g, b) / 255
    lightness = (hi + lo) / 2
    expected = (hi - lo) / (hi + lo) if lightness <= 0.5 else (hi - lo) / (2 - hi - lo)
    value = ops.compute_saturation(scene)[0, 0]
    assert value > 0
    assert value == pytest.approx(expected * 255, rel=1e-4)


def test_saturation_needs_two_channels():
    with pytest.raises(ConfigError):
        ops.compute_saturation(scene_of(red=np.zeros((2, 2))))


def test_local_variance_constant_grid():
    np.testing.assert_allclose(ops.compute_local_variance(np.full((9, 9), 42.0), 3), 0.0, atol=1e-6)


def test_local_variance_checkerboard_interior():
    board = (np.indices((9, 9)).sum(axis=0) % 2) * 255.0
    var = ops.compute_local_variance(board, 3)
    # 4 or 5 zeros among 9 values: sample variance 18062.5 either way
    np.testing.assert_allclose(var[1:-1, 1:-1], 18062.5, rtol=1e-7)


def test_local_variance_peaks_around_bright_pixel():
    grid = np.zeros((11, 11))
    grid[5, 5] = 255.0
    var = ops.compute_local_variance(grid, 3)
    assert var[5, 5] == pytest.approx(var.max())
    assert var[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_local_variance_window_larger_than_image():
    with pytest.raises(ConfigError):
        ops.compute_local_variance(np.zeros((5, 5)), 7)


@pytest.mark.parametrize("nir, red, expected", [(200, 100, 170), (80, 80, 128), (255, 0, 255)])
def test_ndvi_quantized(nir, red, expected):
    scene = scene_of(nir=np.full((2, 2), nir), red=np.full((2, 2), red))
    assert quantize(ops.compute_ndvi(scene), 0, 255)[0, 0] == expected


def test_ndvi_of_black_pixel_is_neutral():
    scene = scene_of(nir=np.zeros((2, 2)), red=np.zeros((2, 2)))
    np.testing.assert_allclose(ops.compute_ndvi(scene), 127.5)


def test_ndvi_antisymmetry():
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 256, (2, 20, 20))
    q = quantize(ops.compute_ndvi(scene_of(nir=a, red=b)), 0, 255).astype(int)
    q_swapped = quantize(ops.compute_ndvi(scene_of(nir=b, red=a)), 0, 255).astype(int)
    assert np.all(np.abs(q + q_swapped - 255) <= 1)


def test_ndsm_flat_and_plateau():
    flat = scene_of(dsm=np.full((20, 20), 3.0))
    np.testing.assert_allclose(ops.compute_ndsm(flat, 7, 7), 0.0)

    dsm = np.zeros((20, 20))
    dsm[8:12, 8:12] = 5.0
    ndsm = ops.compute_ndsm(scene_of(dsm=dsm), 7, 7)
    expected = np.zeros((20, 20))
    expected[8:12, 8:12] = 5.0
    np.testing.assert_allclose(ndsm, expected)


def test_ndsm_of_ground_ramp_is_small():
    ramp = np.tile(np.linspace(0.0, 2.0, 30), (30, 1))
    ndsm = ops.compute_ndsm(scene_of(dsm=ramp), 7, 7)
    assert ndsm[5:-5, 5:-5].max() < 0.1


def test_edge_map_is_strictly_above_threshold():
    ramp = np.tile(np.arange(6.0) * 2, (4, 1))
    np.testing.assert_array_equal(ops.edge_map(ramp, 2.0), np.zeros((4, 6), dtype=bool))
    assert ops.edge_map(ramp, 1.99).all()


def test_distance_to_edges():
    edges = np.zeros((10, 12), dtype=bool)
    edges[:, 5] = True
    dist = ops.distance_to_edges(edges)
    assert dist[4, 5] == 0
    assert dist[4, 8] == pytest.approx(3.0)


def test_blank_image_distance_saturates():
    dist = ops.distance_to_edges(np.zeros((6, 6), dtype=bool))
    assert np.all(quantize(dist, 0, 60) == 255)


def test_edge_threshold_percentile():
    scene = scene_of(red=np.tile(np.arange(10.0) ** 2, (10, 1)))
    magnitudes = ops.gradient_magnitude(ops.compute_intensity(scene))
    assert ops.edge_threshold_percentile([scene], 85) == pytest.approx(np.percentile(magnitudes, 85))


def test_gradient_variance_of_ramp_and_step():
    ramp = np.tile(np.arange(12.0) * 3, (12, 1))
    np.testing.assert_allclose(ops.compute_gradient_variance(ramp, 5)[4:-4, 4:-4], 0.0, atol=1e-9)
    step = np.zeros((12, 12))
    step[:, 6:] = 100.0
    var = ops.compute_gradient_variance(step, 5)
    assert var[6, 6] > 0
    assert var[6, 0] == pytest.approx(0.0, abs=1e-9)


def test_dsm_gradient_flat_and_plane():
    np.testing.assert_allclose(ops.compute_dsm_gradient(scene_of(dsm=np.ones((8, 8)))), 0.0)
    rows, cols = np.mgrid[0:8, 0:8]
    plane = scene_of(dsm=0.3 * rows + 0.4 * cols)
    np.testing.assert_allclose(ops.compute_dsm_gradient(plane)[1:-1, 1:-1], 0.5, rtol=1e-5)


def test_dsm_gradient_step_edge():
    dsm = np.zeros((6, 10))
    dsm[:, 5:] = 4.0
    grad = ops.compute_dsm_gradient(scene_of(dsm=dsm))
    assert grad.max() == pytest.approx(2.0)
    np.testing.assert_allclose(grad[:, 4], 2.0)


def test_missing_dsm_is_config_error():
    with pytest.raises(ConfigError):
        ops.compute_ndsm(scene_of(red=np.zeros((4, 4))), 3, 3)


def test_hog_of_uniform_image_is_zero():
    planes = ops.hog_planes(np.full((28, 28), 77.0))
    assert planes.shape == (9, 28, 28)
    np.testing.assert_allclose(planes, 0.0)


def test_hog_orientation_of_stripes():
    rows = np.arange(56)
    horizontal = np.tile(((rows // 2) % 2 * 255.0)[:, None], (1, 56))
    planes = ops.hog_planes(horizontal)
    assert int(np.argmax(planes[:, 28, 28])) == 0
    planes = ops.hog_planes(horizontal.T)
    assert int(np.argmax(planes[:, 28, 28])) == 4


@pytest.mark.parametrize("angle, expected_bin", [(0.0, 0), (20.0, 1)])
def test_hog_orientation_of_tilted_stripes(angle, expected_bin):
    rows, cols = np.mgrid[0:112, 0:112]
    phi = np.deg2rad(angle)
    stripes = 127.5 + 127.5 * np.sin(2 * np.pi * (rows * np.cos(phi) + cols * np.sin(phi)) / 14)
    planes = ops.hog_planes(stripes)
    assert int(np.argmax(planes[:, 14:-14, 14:-14].mean(axis=(1, 2)))) == expected_bin


def test_hog_on_tiny_image_is_zero():
    np.testing.assert_allclose(ops.hog_planes(np.random.default_rng(0).random((10, 10)) * 255), 0.0)


def test_y_coordinate():
    scene = scene_of(red=np.zeros((192, 4)))
    y = quantize(ops.compute_y_coordinate(scene), 0, 255)
    assert y[0, 0] == 0
    assert y[-1, 0] == 255
    assert y[95, 2] == 127
