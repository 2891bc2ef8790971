import numpy as np
import pytest

from eventpose.camera import (
    FisheyeIntrinsics,
    default_intrinsics,
    fit_inverse_poly,
    load_intrinsics,
    project,
    save_intrinsics,
    unproject,
    view_angles,
)


@pytest.fixture(scope="module")
def intr():
    return default_intrinsics()


def test_axial_point_hits_principal_point(intr):
    uv = project(np.array([0.0, 0.0, -2.0]), intr)
    np.testing.assert_allclose(uv, intr.center, atol=1e-9)


def test_origin_rejected(intr):
    with pytest.raises(ValueError):
        project(np.array([0.0, 0.0, 0.0]), intr)


def test_projection_depth_invariant(intr):
    p = np.array([0.3, -0.2, -1.0])
    uv1 = project(p, intr)
    uv2 = project(3.7 * p, intr)
    np.testing.assert_allclose(uv1, uv2, atol=1e-9)


def test_project_unproject_round_trip(intr):
    rng = np.random.default_rng(0)
    # rays within the lens field of view, pointing into the viewing half-space
    dirs = rng.normal(size=(200, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs[:, 2] = -np.abs(dirs[:, 2]) - 0.15
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    uv = project(dirs, intr)
    inside = (
        (uv[:, 0] >= 0) & (uv[:, 0] <= intr.width - 1)
        & (uv[:, 1] >= 0) & (uv[:, 1] <= intr.height - 1)
    )
    rays = unproject(uv[inside], intr)
    cos = np.sum(rays * dirs[inside], axis=1)
    assert inside.sum() > 100
    np.testing.assert_allclose(cos, 1.0, atol=1e-8)


def test_unproject_bounds_check(intr):
    with pytest.raises(ValueError):
        unproject(np.array([-3.0, 10.0]), intr)
    # super-sampling escape hatch
    ray = unproject(np.array([-3.0, 10.0]), intr, check_bounds=False)
    assert ray.shape == (3,)


def test_unproject_returns_unit_rays(intr):
    rng = np.random.default_rng(1)
    px = np.stack([
        rng.uniform(0, intr.width - 1, 64),
        rng.uniform(0, intr.height - 1, 64),
    ], axis=1)
    rays = unproject(px, intr)
    np.testing.assert_allclose(np.linalg.norm(rays, axis=1), 1.0, atol=1e-12)


def test_view_angle_zero_on_axis(intr):
    ang = view_angles(np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]), intr)
    np.testing.assert_allclose(ang, [0.0, np.pi / 2], atol=1e-12)


def test_inverse_poly_fit_accuracy(intr):
    r = np.linspace(0.0, intr.max_radius(), 500)
    z = np.polynomial.polynomial.polyval(r, intr.poly)
    theta = np.arctan2(z, r)
    r_back = np.polynomial.polynomial.polyval(theta, intr.inverse_poly)
    assert np.max(np.abs(r_back - r)) < 1e-5


def test_non_invertible_poly_rejected():
    with pytest.raises(ValueError):
        fit_inverse_poly(np.array([5.0, 0.0, -0.5]), 100.0)


def test_singular_affine_rejected():
    with pytest.raises(ValueError):
        FisheyeIntrinsics(poly=np.array([-70.0, 0.0, 0.005]),
                          center=(10.0, 10.0), affine=(1.0, 1.0, 1.0))


def test_intrinsics_file_round_trip(tmp_path, intr):
    path = tmp_path / "intrinsics.txt"
    save_intrinsics(path, intr)
    back = load_intrinsics(path)
    np.testing.assert_array_equal(back.poly, intr.poly)
    np.testing.assert_array_equal(back.inverse_poly, intr.inverse_poly)
    assert back.center == intr.center
    assert (back.width, back.height) == (intr.width, intr.height)
    # projections agree exactly since the fitted inverse is persisted
    pts = np.array([[0.2, 0.1, -1.0], [-0.4, 0.3, -0.8]])
    np.testing.assert_array_equal(project(pts, back), project(pts, intr))


def test_intrinsics_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("poly: 1 2 3\n")
    with pytest.raises(ValueError):
        load_intrinsics(bad)
    bad.write_text("nonsense without separator\n")
    with pytest.raises(ValueError):
        load_intrinsics(bad)
