import numpy as np
import pytest

from gyrodenoise import so3


# --- independent quaternion oracle -----------------------------------------

def quat_mul(p, q):
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_from_axis_angle(v):
    theta = np.linalg.norm(v)
    if theta < 1e-300:
        return np.array([1.0, 0, 0, 0])
    axis = v / theta
    return np.concatenate([[np.cos(theta / 2)], np.sin(theta / 2) * axis])


def rot_from_quat(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# --- exp --------------------------------------------------------------------

def test_exp_zero_is_identity():
    assert np.array_equal(so3.exp_so3([0.0, 0.0, 0.0]), np.eye(3))


def test_exp_quarter_turn_maps_x_to_y():
    r = so3.exp_so3([0.0, 0.0, np.pi / 2])
    np.testing.assert_allclose(r @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-15)
    # cross-check against the quaternion oracle
    np.testing.assert_allclose(
        r, rot_from_quat(quat_from_axis_angle(np.array([0, 0, np.pi / 2]))),
        atol=1e-15,
    )


def test_exp_generic_vector_is_orthonormal_and_roundtrips():
    v = np.array([0.3, -0.2, 0.1])
    r = so3.exp_so3(v)
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(r) - 1) < 1e-12
    np.testing.assert_allclose(so3.log_so3(r), v, atol=1e-9)


def test_exp_matches_quaternion_oracle_randomized():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.normal(size=3) * rng.uniform(0, np.pi - 0.05)
        np.testing.assert_allclose(
            so3.exp_so3(v), rot_from_quat(quat_from_axis_angle(v)), atol=1e-12
        )


def test_exp_rejects_non_finite():
    with pytest.raises(ValueError):
        so3.exp_so3([np.nan, 0, 0])


# --- log --------------------------------------------------------------------

def test_log_identity_is_zero():
    assert np.array_equal(so3.log_so3(np.eye(3)), np.zeros(3))


def test_log_near_pi_branch():
    theta = np.pi - 1e-4
    r = so3.exp_so3([0, 0, theta])
    v = so3.log_so3(r)
    assert abs(np.linalg.norm(v) - theta) < 1e-6
    np.testing.assert_allclose(v, [0, 0, theta], atol=1e-6)


def test_log_near_pi_oracle_randomized():
    rng = np.random.default_rng(1)
    for _ in range(50):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        theta = np.pi - rng.uniform(1e-6, 1e-4)
        r = rot_from_quat(quat_from_axis_angle(theta * axis))
        np.testing.assert_allclose(so3.log_so3(r), theta * axis, atol=1e-6)


def test_log_rejects_non_orthonormal():
    with pytest.raises(so3.InvalidRotationError):
        so3.log_so3(np.eye(3) + 1e-3)


def test_exp_log_roundtrip_property():
    rng = np.random.default_rng(2)
    n = 10_000
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    thetas = rng.uniform(0, np.pi - 0.05, size=n)
    # force coverage of both branches
    thetas[:100] = rng.uniform(0, 1e-7, size=100)
    thetas[100:200] = np.pi - 0.05 - rng.uniform(0, 1e-6, size=100)
    v = axes * thetas[:, None]
    err = np.linalg.norm(so3.log_so3(so3.exp_so3(v)) - v, axis=1)
    assert np.max(err) < 1e-8


def test_collinear_group_property():
    rng = np.random.default_rng(3)
    for _ in range(50):
        v = rng.normal(size=3)
        v *= rng.uniform(0, np.pi / 2 - 0.1) / np.linalg.norm(v)
        lhs = so3.exp_so3(v) @ so3.exp_so3(v)
        np.testing.assert_allclose(lhs, so3.exp_so3(2 * v), atol=1e-10)


# --- compose ----------------------------------------------------------------

def test_compose_identity_and_inverse():
    r = so3.exp_so3([0.4, 0.1, -0.7])
    np.testing.assert_allclose(so3.compose(r, np.eye(3)), r, atol=0)
    np.testing.assert_allclose(so3.compose(r, r.T), np.eye(3), atol=1e-12)


def test_drift_bounded_over_many_compositions():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(10_000, 3)) * 0.05
    rots = so3.exp_so3(v)
    out = so3.sequential_product(rots, reproject_every=512)
    assert np.linalg.norm(out.T @ out - np.eye(3)) < 1e-9


def test_project_to_so3_recovers_perturbed_rotation():
    rng = np.random.default_rng(5)
    r = so3.exp_so3(rng.normal(size=3))
    p = so3.project_to_so3(r + 1e-10 * rng.normal(size=(3, 3)))
    assert so3.is_rotation(p, tol=1e-12)
    np.testing.assert_allclose(p, r, atol=1e-9)


# --- integrate_increments ---------------------------------------------------

def test_integrate_zero_rates_stays_put():
    r0 = so3.exp_so3([0.1, 0.2, 0.3])
    out = so3.integrate_increments(r0, np.zeros((10, 3)), 0.005)
    assert out.shape == (11, 3, 3)
    for r in out:
        np.testing.assert_allclose(r, r0, atol=0)


def test_integrate_constant_yaw_closed_form():
    omegas = np.tile([0.0, 0.0, 0.1], (2000, 1))
    out = so3.integrate_increments(np.eye(3), omegas, 0.005)
    np.testing.assert_allclose(out[-1], so3.exp_so3([0, 0, 1.0]), atol=1e-9)


def test_integrate_matches_sequential_exp_product():
    rng = np.random.default_rng(6)
    omegas = rng.normal(size=(300, 3))
    dt = 0.005
    out = so3.integrate_increments(np.eye(3), omegas, dt, reproject_every=0)
    prod = so3.sequential_product(so3.exp_so3(omegas * dt), reproject_every=0)
    np.testing.assert_allclose(out[0].T @ out[-1], prod, atol=1e-12)


def test_integrate_left_equivariance():
    rng = np.random.default_rng(7)
    omegas = rng.normal(size=(100, 3)) * 0.3
    r0 = so3.exp_so3(rng.normal(size=3))
    dr = so3.exp_so3(rng.normal(size=3))
    a = so3.integrate_increments(dr @ r0, omegas, 0.01, reproject_every=0)
    b = so3.integrate_increments(r0, omegas, 0.01, reproject_every=0)
    np.testing.assert_allclose(a, dr @ b, atol=1e-12)


def test_integrate_reports_offending_index():
    omegas = np.zeros((5, 3))
    omegas[3, 1] = np.inf
    with pytest.raises(ValueError, match="index 3"):
        so3.integrate_increments(np.eye(3), omegas, 0.01)
    with pytest.raises(ValueError):
        so3.integrate_increments(np.eye(3), np.zeros((5, 3)), 0.0)


def test_relative_increments_count():
    rng = np.random.default_rng(8)
    rots = so3.integrate_increments(np.eye(3), rng.normal(size=(1599, 3)) * 0.01, 0.005)
    starts, incs = so3.relative_increments(rots, 16)
    assert len(starts) == 99
    np.testing.assert_allclose(incs[1], rots[16].T @ rots[32], atol=0)
