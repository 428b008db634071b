#!/usr/bin/env python3

import os
import sys
import unittest

import numpy as np
from numpy.testing import assert_allclose

# Add the parent directory to the path so we can import modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lgvci_geometry import (
    Pose,
    apply_pose,
    as_rotation,
    asym,
    cayley_so3,
    compose_pose,
    exp_so3,
    fd_matrix_gradient,
    fd_vector_gradient,
    inverse_pose,
    is_rotation,
    lie_inner,
    log_so3,
    mat3,
    project_to_so3,
    rotation_error,
    skew,
    sym,
    unskew,
    vec3,
)


class TestSkewMap(unittest.TestCase):
    """Tests for the so(3) helpers."""

    def test_skew_matches_cross_product(self):
        v = np.array([1.0, -2.0, 0.5])
        w = np.array([0.3, 4.0, -1.0])
        assert_allclose(skew(v) @ w, np.cross(v, w), rtol=0, atol=1e-15)

    def test_unskew_inverts_skew(self):
        v = np.array([0.25, -7.0, 3.5])
        assert_allclose(unskew(skew(v)), v, rtol=0, atol=0)

    def test_unskew_rejects_symmetric_matrix(self):
        with self.assertRaises(ValueError):
            unskew(np.eye(3))

    def test_asym_and_sym_split_a_matrix(self):
        m = np.arange(9.0).reshape(3, 3)
        assert_allclose(asym(m) + sym(m), 2.0 * m)
        assert_allclose(asym(m), -asym(m).T)

    def test_lie_inner_is_dot_product(self):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([-1.0, 0.5, 2.0])
        self.assertAlmostEqual(lie_inner(skew(a), skew(b)), float(a @ b), places=14)

    def test_lie_inner_rejects_non_skew(self):
        with self.assertRaises(ValueError):
            lie_inner(np.eye(3), skew([1.0, 0.0, 0.0]))


class TestRotations(unittest.TestCase):
    """Tests for the exponential, Cayley and logarithm maps."""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_exp_of_zero_is_identity(self):
        assert_allclose(exp_so3(np.zeros(3)), np.eye(3), rtol=0, atol=0)

    def test_exp_quarter_turn_about_z(self):
        R = exp_so3(np.array([0.0, 0.0, np.pi / 2]))
        assert_allclose(R @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)

    def test_exp_and_cayley_are_rotations(self):
        for f in self.rng.normal(size=(50, 3)) * 2.0:
            self.assertLessEqual(rotation_error(exp_so3(f)), 1e-14)
            self.assertLessEqual(rotation_error(cayley_so3(f)), 1e-14)
            self.assertTrue(is_rotation(cayley_so3(f)))

    def test_small_angle_series_is_continuous(self):
        f = np.array([1.0, -1.0, 0.5])
        just_below = exp_so3(f / np.linalg.norm(f) * 0.99e-4)
        just_above = exp_so3(f / np.linalg.norm(f) * 1.01e-4)
        self.assertLess(np.max(np.abs(just_below - just_above)), 1e-5)

    def test_log_inverts_exp(self):
        for f in self.rng.normal(size=(50, 3)):
            f = f / np.linalg.norm(f) * self.rng.uniform(1e-9, 3.0)
            assert_allclose(log_so3(exp_so3(f)), f, rtol=1e-9, atol=1e-13)

    def test_log_of_tiny_rotation_keeps_precision(self):
        f = np.array([1e-10, -2e-10, 3e-10])
        assert_allclose(log_so3(exp_so3(f)), f, rtol=1e-12)

    def test_as_rotation_rejects_scaled_matrix(self):
        with self.assertRaises(ValueError):
            as_rotation(2.0 * np.eye(3))

    def test_is_rotation_rejects_reflection(self):
        self.assertFalse(is_rotation(np.diag([1.0, 1.0, -1.0])))

    def test_project_to_so3_repairs_small_error(self):
        R = exp_so3(np.array([0.2, 0.1, -0.3])) + 1e-8
        projected = project_to_so3(R)
        self.assertLessEqual(rotation_error(projected), 1e-14)
        self.assertLess(np.max(np.abs(projected - R)), 1e-7)


class TestConversions(unittest.TestCase):
    def test_vec3_rejects_wrong_shape(self):
        with self.assertRaises(ValueError):
            vec3([1.0, 2.0])

    def test_vec3_rejects_nan(self):
        with self.assertRaises(ValueError):
            vec3([1.0, float("nan"), 0.0])

    def test_mat3_accepts_row_major_list(self):
        assert_allclose(mat3(range(9)), np.arange(9.0).reshape(3, 3))


class TestPose(unittest.TestCase):
    """Tests for SE(3) poses."""

    def setUp(self):
        self.a = Pose(np.array([1.0, 2.0, 3.0]), exp_so3(np.array([0.1, -0.4, 0.7])))
        self.b = Pose(np.array([-0.5, 0.0, 2.0]), exp_so3(np.array([0.9, 0.2, -0.1])))

    def test_compose_matches_homogeneous_product(self):
        assert_allclose(compose_pose(self.a, self.b).matrix(), self.a.matrix() @ self.b.matrix(), atol=1e-14)

    def test_inverse_undoes_pose(self):
        z = np.array([0.3, -1.2, 4.0])
        assert_allclose(apply_pose(inverse_pose(self.a), apply_pose(self.a, z)), z, atol=1e-14)

    def test_make_validates_attitude(self):
        with self.assertRaises(ValueError):
            Pose.make([0.0, 0.0, 0.0], np.ones((3, 3)))

    def test_identity(self):
        assert_allclose(Pose.identity().matrix(), np.eye(4))


class TestFiniteDifferences(unittest.TestCase):
    def test_matrix_gradient_of_linear_function(self):
        A = np.arange(9.0).reshape(3, 3)
        grad = fd_matrix_gradient(lambda X: float(np.trace(A.T @ X)), np.eye(3))
        assert_allclose(grad, A, atol=1e-8)

    def test_vector_gradient_of_quadratic(self):
        grad = fd_vector_gradient(lambda x: float(x @ x), np.array([1.0, -2.0, 3.0]))
        assert_allclose(grad, [2.0, -4.0, 6.0], atol=1e-8)

    def test_nonpositive_step_rejected(self):
        with self.assertRaises(ValueError):
            fd_vector_gradient(lambda x: 0.0, np.zeros(3), step=0.0)


if __name__ == "__main__":
    unittest.main()
