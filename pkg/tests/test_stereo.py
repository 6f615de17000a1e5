from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bonemill.errors import ConfigError, RowMismatch
from bonemill.stereo import (
    CameraIntrinsics,
    PixelPoint,
    StereoObservation,
    normalized_radius,
    project,
    project_array,
    reconstruct,
    reconstruct_array,
)

coord = st.floats(-1e3, 1e3, allow_nan=False)


def obs(xl, yl, xr, yr) -> StereoObservation:
    return StereoObservation(PixelPoint(xl, yl), PixelPoint(xr, yr))


def test_default_intrinsics():
    k = CameraIntrinsics()
    assert (k.c_x, k.c_y, k.p_rho_x, k.p_rho_y, k.d_e, k.h_rho) == (480, 270, 0.03947, 0.03894, 0, 6.4)


@pytest.mark.parametrize("name", ["p_rho_x", "p_rho_y", "h_rho"])
@pytest.mark.parametrize("value", [0.0, -1.0, float("nan")])
def test_intrinsics_reject_nonpositive_scales(name, value):
    with pytest.raises(ConfigError):
        CameraIntrinsics(**{name: value})


@pytest.mark.parametrize(
    "pixels, expected",
    [
        ((480, 270, 480, 270), (0.0, 0.0, 0.0)),
        ((544, 270, 480, 270), (0.03947 * 64, 0.0, 64 / 6.4)),
        ((480, 322, 480, 322), (0.0, 0.03894 * 52, 0.0)),
    ],
)
def test_reconstruct_hand_evaluated(k, pixels, expected):
    np.testing.assert_allclose(reconstruct(obs(*pixels), k), expected, atol=1e-12)


def test_reconstruct_matches_matrix_form(k, rng):
    rows = rng.uniform(0, 960, size=(50, 4))
    rows[:, 3] = rows[:, 1]
    via_matrix = rows @ k.coefficient_matrix.T + k.bias
    np.testing.assert_allclose(reconstruct_array(rows, k), via_matrix, atol=1e-12)


def test_row_mismatch_carries_delta(k):
    with pytest.raises(RowMismatch) as info:
        reconstruct(obs(480, 270, 480, 273.5), k)
    assert info.value.delta == pytest.approx(3.5)
    assert info.value.tolerance == 2.0
    # within tolerance is accepted
    reconstruct(obs(480, 270, 480, 271.5), k)


@pytest.mark.parametrize(
    "point, left, right",
    [((0, 0, 0), (480, 270), (480, 270)), ((0.03947 * 64, 0, 10.0), (544, 270), (480, 270))],
)
def test_project_examples(k, point, left, right):
    o, visible = project(point, k)
    np.testing.assert_allclose(o.as_array(), [*left, *right], atol=1e-9)
    assert visible


def test_project_flags_out_of_view(k):
    _, visible = project((30.0, 0.0, 0.0), k)
    assert not visible
    _, visible = project((0.0, 0.0, 100.0), k)  # right pixel leaves the image
    assert not visible


@given(st.tuples(st.floats(0, 10), st.floats(-20, 0), st.floats(0, 10)))
def test_round_trip_validity_box(p):
    k = CameraIntrinsics()
    o, _ = project(p, k)
    assert np.linalg.norm(reconstruct(o, k) - np.array(p)) < 1e-9


@given(coord, coord, coord, st.floats(-100, 100))
def test_depth_depends_only_on_disparity(xl, yl, xr, delta):
    k = CameraIntrinsics()
    a = reconstruct_array(np.array([xl, yl, xr, yl]), k)
    b = reconstruct_array(np.array([xl + delta, yl, xr + delta, yl]), k)
    assert b[2] == pytest.approx(a[2], abs=1e-9)
    assert b[0] - a[0] == pytest.approx(k.p_rho_x * delta, abs=1e-9)


@settings(max_examples=50)
@given(st.lists(coord, min_size=8, max_size=8))
def test_reconstruct_is_affine(values):
    k = CameraIntrinsics()
    o1 = np.array(values[:4])
    o2 = np.array(values[4:])
    lin = lambda o: reconstruct_array(o, k) - k.bias  # noqa: E731
    np.testing.assert_allclose(lin(o1 + o2), lin(o1) + lin(o2), atol=1e-8)
    np.testing.assert_allclose(
        reconstruct_array(o1, k) + reconstruct_array(o2, k), 2 * reconstruct_array((o1 + o2) / 2, k), atol=1e-8
    )


def test_project_array_inverts_reconstruct(k, rng):
    pts = rng.normal(size=(100, 3)) * 5
    np.testing.assert_allclose(reconstruct_array(project_array(pts, k), k), pts, atol=1e-12)


def test_normalized_radius(k):
    assert normalized_radius(480, 270, k) == 0
    assert normalized_radius(960, 270, k) == pytest.approx(1.0)
    assert normalized_radius(480, 0, k) == pytest.approx(1.0)
