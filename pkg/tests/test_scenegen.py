import numpy as np
import pytest
from scipy import ndimage

from robustfusion import scenegen as S
from robustfusion.lidar import project_points


@pytest.fixture(scope="module")
def spec():
    return S.SceneSpec(seed=7)


@pytest.fixture(scope="module")
def samples(spec):
    return [S.generate_scene(spec, i) for i in range(200)]


def test_deterministic(spec):
    a, b = S.generate_scene(spec, 3), S.generate_scene(spec, 3)
    for field in ("image", "points", "labels", "true_depth"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    c = S.generate_scene(spec, 4)
    assert not np.array_equal(a.image, c.image)


def test_single_car_projection():
    intr = S.CameraIntrinsics.for_image(48, 96)
    gy = S.CAMERA_HEIGHT
    layout = S.Layout(boxes=[S.Box((-0.9, gy - 1.5, 10.0), (0.9, gy, 14.2), S.CAR, (0.8, 0.1, 0.1))])
    image, labels, depth = S.render(layout, intr)
    car = labels == S.CAR
    _, n = ndimage.label(car)
    assert n == 1
    # front face corners: u = 48 + 48*x/10, v = 24 + 48*y/10
    u_lo, u_hi = 48 + 48 * -0.9 / 10, 48 + 48 * 0.9 / 10
    v_lo, v_hi = 24 + 48 * (gy - 1.5) / 10, 24 + 48 * gy / 10
    cols = [c for c in range(96) if u_lo <= c + 0.5 <= u_hi]
    rows = [r for r in range(48) if v_lo <= r + 0.5 <= v_hi]
    rr, cc = np.nonzero(car)
    assert (rr.min(), rr.max(), cc.min(), cc.max()) == (rows[0], rows[-1], cols[0], cols[-1])
    np.testing.assert_allclose(depth[0][car], 10.0, rtol=1e-12)


def test_sixteen_lidar_rows():
    rows, _ = S.lidar_pixels(S.CameraIntrinsics.for_image(48, 96))
    assert len(np.unique(rows)) == S.LIDAR_ROWS == 16


def test_points_in_front_and_consistent(samples, spec):
    intr = spec.intrinsics
    for s in samples[:40]:
        assert np.all(s.points[:, 2] > 0)
        sparse = project_points(s.points, intr)
        hit = np.isfinite(sparse)
        assert hit.sum() == len(s.points)
        np.testing.assert_allclose(sparse[hit], s.true_depth[0][hit], rtol=0.02)


def test_lidar_sparsity(samples):
    coverage = np.array([len(s.points) / s.labels.size for s in samples])
    assert 0.08 <= coverage.mean() <= 0.15
    assert coverage.max() <= 0.15


def test_label_depth_consistency(samples):
    for s in samples[:40]:
        d = s.true_depth[0]
        sky = d == S.SKY_DEPTH
        assert np.all(s.labels[sky] == S.BACKGROUND)
        assert np.all(d > 0) and np.all(np.isfinite(d))
        for col in range(d.shape[1]):
            rows = np.nonzero(s.labels[:, col] == S.ROAD)[0]
            # depth shrinks moving down the image, away from the horizon
            assert np.all(np.diff(d[rows, col]) <= 0)


def test_sky_only_above_horizon(samples):
    for s in samples[:40]:
        sky_rows = np.nonzero((s.true_depth[0] == S.SKY_DEPTH).any(axis=1))[0]
        assert sky_rows.size == 0 or sky_rows.max() < 24


def test_class_presence(samples):
    present = np.zeros(S.NUM_CLASSES)
    for s in samples:
        present[np.unique(s.labels)] += 1
    assert np.all(present / len(samples) >= 0.2)


def test_image_range(samples):
    for s in samples[:20]:
        assert s.image.shape == (3, 48, 96)
        assert s.image.min() >= 0 and s.image.max() <= 1


def test_build_dataset_layout(tmp_path):
    spec = S.SceneSpec(seed=1)
    root = S.build_dataset(spec, 200, 50, tmp_path / "ds")
    train = sorted((root / "train").iterdir())
    val = sorted((root / "val").iterdir())
    assert len(train) + len(val) == 250
    for d in train[:3] + val[:3]:
        assert {p.name for p in d.iterdir()} == {"image.ppm", "labels.pgm", "depth_true.bin", "points.csv"}
    m = S.read_manifest(root / "manifest.txt")
    assert (m["H"], m["W"], m["C"], m["n_train"], m["n_val"]) == ("48", "96", "6", "200", "50")
    assert float(m["fx"]) == 48.0 and float(m["cy"]) == 24.0
    # train and val come from disjoint seed streams
    t0 = S.read_sample(train[0], 48, 96)
    v0 = S.read_sample(val[0], 48, 96)
    assert not np.array_equal(t0.labels, v0.labels)


def test_sample_file_roundtrip(tmp_path, spec):
    s = S.generate_scene(spec, 11)
    S.write_sample(tmp_path / "x", s)
    r = S.read_sample(tmp_path / "x", 48, 96)
    np.testing.assert_array_equal(r.labels, s.labels)
    np.testing.assert_array_equal(r.true_depth, s.true_depth)
    np.testing.assert_allclose(r.image, s.image, atol=0.5 / 255 + 1e-12)
    np.testing.assert_allclose(r.points, s.points, atol=5e-7)
    assert (tmp_path / "x" / "image.ppm").read_bytes().startswith(b"P6\n96 48\n255\n")
    assert (tmp_path / "x" / "labels.pgm").read_bytes().startswith(b"P5\n96 48\n255\n")
