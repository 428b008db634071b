#!/usr/bin/env python3

import os
import sys
import unittest

import numpy as np
from numpy.testing import assert_allclose

# Add the parent directory to the path so we can import modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lgvci_body import (
    ComplementNode,
    Ellipsoid,
    EllipsoidNode,
    IntersectionNode,
    PolyhedronNode,
    RigidBody,
    UnionNode,
    cube_polyhedron,
    inertia_cube,
    inertia_ellipsoid,
)
from lgvci_contact import (
    Plane,
    UnsupportedShapeError,
    chi_vector,
    closest_point_ellipsoid,
    closest_point_polyhedron,
    ellipsoid_plane_distance,
    is_separated,
    normal_velocity,
    phi_ellipsoid,
    phi_general,
    phi_grad_ellipsoid,
    pole_of_plane,
    pole_of_point,
)
from lgvci_geometry import Pose, exp_so3, fd_matrix_gradient
from lgvci_integrator import State


def ellipsoid_body(a=2.0, b=3.0, c=4.0):
    return RigidBody.from_inertia(1.0, inertia_ellipsoid(1.0, a, b, c), EllipsoidNode(Ellipsoid(a, b, c)))


class TestPlane(unittest.TestCase):
    def test_tilted_normal(self):
        plane = Plane.from_tilt(2.0)
        assert_allclose(plane.normal, [np.sin(-np.pi / 90), 0.0, np.cos(-np.pi / 90)], atol=1e-16)

    def test_non_unit_normal_rejected(self):
        with self.assertRaises(ValueError):
            Plane(np.array([0.0, 0.0, 2.0]))

    def test_pulled_back_plane(self):
        pose = Pose(np.array([0.0, 0.0, 5.0]), exp_so3(np.array([np.pi / 2, 0.0, 0.0])))
        body_plane = Plane.horizontal(-1.0).pulled_back(pose)
        self.assertAlmostEqual(body_plane.offset, 4.0)
        assert_allclose(body_plane.normal, [0.0, 1.0, 0.0], atol=1e-15)

    def test_height(self):
        self.assertEqual(Plane.horizontal(1.0).height(np.array([3.0, 4.0, 2.0])), 3.0)


class TestEllipsoidContact(unittest.TestCase):
    """Collision detection for a single ellipsoid."""

    def setUp(self):
        self.e = Ellipsoid(2.0, 3.0, 4.0)
        self.plane = Plane.horizontal()

    def test_phi_of_upright_ellipsoid(self):
        pose = Pose(np.array([0.0, 0.0, 10.0]), np.eye(3))
        self.assertEqual(phi_ellipsoid(pose, self.e, self.plane), 6.0)
        self.assertEqual(phi_general(pose, ellipsoid_body(), self.plane).phi, 6.0)

    def test_closest_point_of_upright_ellipsoid(self):
        assert_allclose(closest_point_ellipsoid(np.eye(3), self.e, self.plane), [0.0, 0.0, -4.0])

    def test_gradient_matches_finite_differences(self):
        x = np.array([0.3, -0.2, 9.0])
        R = exp_so3(np.array([0.4, -0.7, 1.1]))
        _, dphi_dR = phi_grad_ellipsoid(Pose(x, R), self.e, self.plane)
        fd = fd_matrix_gradient(lambda M: phi_ellipsoid(Pose(x, M), self.e, self.plane), R)
        assert_allclose(dphi_dR, fd, atol=1e-7)

    def test_chi_is_cross_product_of_closest_point(self):
        R = exp_so3(np.array([0.4, -0.7, 1.1]))
        cg = phi_general(Pose(np.array([0.0, 0.0, 9.0]), R), ellipsoid_body(), self.plane)
        assert_allclose(cg.chi, np.cross(cg.rho_C, R.T @ self.plane.normal), atol=1e-13)
        assert_allclose(chi_vector(R, cg.dphi_dR), cg.chi, rtol=0, atol=0)

    def test_chi_vanishes_for_sphere(self):
        R = exp_so3(np.array([1.0, 2.0, 0.5]))
        cg = phi_general(Pose(np.array([0.0, 0.0, 3.0]), R), ellipsoid_body(1.0, 1.0, 1.0), self.plane)
        assert_allclose(cg.chi, np.zeros(3), atol=1e-14)

    def test_separation_and_distance(self):
        above = Pose(np.array([0.0, 0.0, 6.0]), np.eye(3))
        touching = Pose(np.array([0.0, 0.0, 3.0]), np.eye(3))
        self.assertTrue(is_separated(above, self.e, self.plane))
        self.assertFalse(is_separated(touching, self.e, self.plane))
        self.assertEqual(ellipsoid_plane_distance(above, self.e, self.plane), 2.0)

    def test_poles(self):
        plane = Plane(np.array([0.0, 0.0, 1.0]), -8.0)
        assert_allclose(pole_of_plane(plane, self.e), [0.0, 0.0, 2.0])
        assert_allclose(pole_of_point(np.array([0.0, 0.0, 8.0]), self.e), [0.0, 0.0, 2.0])
        self.assertLess(self.e.f_e(pole_of_plane(plane, self.e)), 1.0)

    def test_pole_undefined_at_centre(self):
        with self.assertRaises(ValueError):
            pole_of_point(np.zeros(3), self.e)
        with self.assertRaises(ValueError):
            pole_of_plane(Plane.horizontal(), self.e)

    def test_normal_velocity_of_falling_body(self):
        s = State(np.array([0.0, 0.0, 5.0]), np.eye(3), np.array([0.0, 0.0, -2.0]), np.zeros(3))
        body = ellipsoid_body()
        cg = phi_general(s.pose, body, self.plane)
        self.assertEqual(normal_velocity(s, cg, body), -2.0)


class TestPolyhedronContact(unittest.TestCase):
    def setUp(self):
        s = 2.0 * np.sqrt(3.0)
        self.body = RigidBody.from_inertia(1.0, inertia_cube(1.0, s), PolyhedronNode(cube_polyhedron(s, 1e-13)))
        self.plane = Plane.horizontal()

    def test_phi_of_upright_cube(self):
        cg = phi_general(Pose(np.array([0.0, 0.0, 10.0]), np.eye(3)), self.body, self.plane)
        self.assertAlmostEqual(cg.phi, 10.0 - np.sqrt(3.0) - 1e-13, places=13)

    def test_tie_goes_to_lowest_index(self):
        index, rho = closest_point_polyhedron(np.eye(3), self.body.shape.polyhedron, self.plane)
        self.assertEqual(index, 0)
        assert_allclose(rho, [-np.sqrt(3.0), -np.sqrt(3.0), -np.sqrt(3.0) - 1e-13])

    def test_gradient_matches_finite_differences(self):
        x = np.array([0.0, 0.0, 10.0])
        R = exp_so3(np.array([0.3, 0.5, -0.2]))
        cg = phi_general(Pose(x, R), self.body, self.plane)
        fd = fd_matrix_gradient(lambda M: phi_general(Pose(x, M), self.body, self.plane).phi, R)
        assert_allclose(cg.dphi_dR, fd, atol=1e-7)


class TestCompositeContact(unittest.TestCase):
    """Closest points of unions and intersections of ellipsoids."""

    def test_union_lowest_leaf_wins(self):
        c = -0.9937128
        shape = UnionNode(
            EllipsoidNode(Ellipsoid(3.0, 4.0, 5.0), np.array([1.5 + c, 0.0, 0.0])),
            EllipsoidNode(Ellipsoid(6.0, 1.0, 1.0), np.array([-4.5 + c, 0.0, 0.0])),
        )
        body = RigidBody.from_inertia(1.0, np.diag([7.5932718, 9.9326434, 8.2731252]), shape)
        cg = phi_general(Pose(np.array([0.0, 0.0, 10.0]), np.eye(3)), body, Plane.horizontal())
        self.assertAlmostEqual(cg.phi, 5.0, places=12)
        assert_allclose(cg.rho_C, [1.5 + c, 0.0, -5.0], atol=1e-12)

    def test_union_gradient_matches_finite_differences(self):
        shape = UnionNode(
            EllipsoidNode(Ellipsoid(2.0, 1.0, 1.0), np.array([1.0, 0.0, 0.0])),
            EllipsoidNode(Ellipsoid(1.0, 1.0, 2.0), np.array([-1.0, 0.0, 0.0])),
        )
        body = RigidBody.from_inertia(1.0, np.eye(3), shape)
        x = np.array([0.0, 0.0, 6.0])
        R = exp_so3(np.array([0.2, -0.4, 0.3]))
        cg = phi_general(Pose(x, R), body, Plane.horizontal())
        fd = fd_matrix_gradient(lambda M: phi_general(Pose(x, M), body, Plane.horizontal()).phi, R)
        assert_allclose(cg.dphi_dR, fd, atol=1e-6)

    def test_intersection_contained_leaf(self):
        shape = IntersectionNode(
            EllipsoidNode(Ellipsoid(3.0, 3.0, 3.0)),
            EllipsoidNode(Ellipsoid(1.0, 1.0, 1.0)),
        )
        body = RigidBody.from_inertia(1.0, np.eye(3), shape)
        cg = phi_general(Pose(np.array([0.0, 0.0, 4.0]), np.eye(3)), body, Plane.horizontal())
        self.assertAlmostEqual(cg.phi, 3.0, places=12)

    def test_intersection_lens_bottom(self):
        shape = IntersectionNode(
            EllipsoidNode(Ellipsoid(1.0, 1.0, 1.0), np.array([-0.5, 0.0, 0.0])),
            EllipsoidNode(Ellipsoid(1.0, 1.0, 1.0), np.array([0.5, 0.0, 0.0])),
        )
        body = RigidBody.from_inertia(1.0, np.eye(3), shape)
        cg = phi_general(Pose(np.array([0.0, 0.0, 4.0]), np.eye(3)), body, Plane.horizontal())
        self.assertAlmostEqual(cg.phi, 4.0 - np.sqrt(0.75), places=8)
        assert_allclose(cg.rho_C, [0.0, 0.0, -np.sqrt(0.75)], atol=1e-6)

    def test_unsupported_shape(self):
        body = RigidBody.from_inertia(1.0, np.eye(3), ComplementNode(EllipsoidNode(Ellipsoid(1.0, 1.0, 1.0))))
        with self.assertRaises(UnsupportedShapeError):
            phi_general(Pose(np.array([0.0, 0.0, 4.0]), np.eye(3)), body, Plane.horizontal())


if __name__ == "__main__":
    unittest.main()
