#!/usr/bin/env python3
"""
Tests for the Nystrom solver, the capacitance matrix and the modes S_1, S_2
"""

import os
import sys
from functools import lru_cache

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from numpy.testing import assert_allclose

from honeycomb.errors import InvalidArgumentError
from honeycomb.lattice import TAU, build_lattice
from honeycomb.layerpot import (
    CapacitanceSolver,
    InclusionGeometry,
    discretize_boundary,
    eval_S,
    kress_weights,
    parity_conjugate,
    rotate_mode,
)
from honeycomb.quasigreen import GreenMethod, GreenParams

ALPHA = np.array([0.31, -0.17])


@lru_cache(maxsize=None)
def _solver(N: int = 96) -> CapacitanceSolver:
    return CapacitanceSolver.from_settings(build_lattice(), 0.15, N)


def _cell_points(n=30, seed=11):
    lat = build_lattice()
    rng = np.random.default_rng(seed)
    return lat.from_fractional(rng.uniform(0.0, 1.0, size=(n, 2)))


def test_geometry_validation():
    lat = build_lattice()
    with pytest.raises(InvalidArgumentError):
        InclusionGeometry.from_fraction(lat, 0.3)
    with pytest.raises(InvalidArgumentError):
        InclusionGeometry(lattice=lat, radius=0.0)
    geom = InclusionGeometry.from_fraction(lat, 0.15)
    assert geom.radius < geom.local_radius < geom.lattice.neighbour_distance / 2.0
    for bad in (8, 15, 33):
        with pytest.raises(InvalidArgumentError):
            discretize_boundary(geom, bad)


def test_kress_weights_integrate_log_kernel():
    R = kress_weights(64)
    t = 2.0 * np.pi * np.arange(64) / 64
    assert abs(R.sum()) < 1e-12
    # int_0^{2pi} log(4 sin^2(t/2)) cos t dt = -2 pi
    assert abs(R @ np.cos(t) + 2.0 * np.pi) < 1e-12


def test_solver_requires_ewald():
    lat = build_lattice()
    quad = discretize_boundary(InclusionGeometry.from_fraction(lat, 0.15), 32)
    with pytest.raises(InvalidArgumentError):
        CapacitanceSolver(quad, GreenParams.for_lattice(lat, method=GreenMethod.SPECTRAL_CUTOFF))


def test_capacitance_structure():
    print("🧪 Testing capacitance matrix structure")
    cap = _solver().capacitance(ALPHA)
    C = cap.C
    assert cap.c1 > 0
    assert abs(C[1, 0] - np.conj(C[0, 1])) < 1e-10 * cap.c1
    assert abs(C[0, 0] - C[1, 1]) < 1e-10 * cap.c1
    assert np.all(cap.eigenvalues > 0)
    assert_allclose(np.linalg.eigvalsh(C), cap.eigenvalues, rtol=1e-10)


def test_time_reversal():
    solver = _solver()
    C_plus = solver.capacitance(ALPHA).C
    C_minus = solver.capacitance(-ALPHA).C
    assert_allclose(C_minus, np.conj(C_plus), atol=1e-10 * abs(C_plus[0, 0]))


def test_dirac_point_degeneracy():
    print("🧪 Testing degeneracy at alpha*")
    solver = _solver()
    cap = solver.capacitance(solver.alpha_star)
    assert abs(cap.c2) / cap.c1 < 1e-6


def test_mode_values_on_inclusions():
    solver = _solver()
    lat = solver.lattice
    pts = np.stack([lat.x1, lat.x2, lat.x1 + lat.l1, lat.x2 - lat.l2])
    S1 = solver.eval_S(1, ALPHA, pts).values
    S2 = solver.eval_S(2, ALPHA, pts).values
    assert_allclose(S1, [1.0, 0.0, np.exp(1j * ALPHA @ lat.l1), 0.0], atol=1e-10)
    assert_allclose(S2, [0.0, 1.0, 0.0, np.exp(-1j * ALPHA @ lat.l2)], atol=1e-10)


def test_local_expansion_matches_direct_sum():
    print("🧪 Testing local expansions against the Nystrom sum")
    solver = _solver()
    geom = solver.geometry
    theta = np.linspace(0.0, 2.0 * np.pi, 17)[:-1]
    rho = 0.21 * geom.lattice.L
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    pts = np.vstack([geom.centers[0] + rho * ring, geom.centers[1] + rho * ring])

    field = solver.mode_fields(ALPHA)[0]
    local = field.evaluate(pts, with_gradient=True, mode="local")
    direct = field.evaluate(pts, with_gradient=True, mode="direct")
    scale = np.max(np.abs(direct.values))
    assert np.max(np.abs(local.values - direct.values)) < 1e-7 * scale
    assert np.max(np.abs(local.gradients - direct.gradients)) < 1e-6 * scale
    assert not np.any(direct.degraded)


def test_local_expansion_rejects_far_targets():
    solver = _solver()
    field = solver.mode_fields(ALPHA)[0]
    with pytest.raises(InvalidArgumentError):
        field.evaluate(np.zeros((1, 2)), mode="local")
    with pytest.raises(InvalidArgumentError):
        field.evaluate(np.zeros((1, 2)), mode="nearest")


def test_mode_quasi_periodicity():
    solver = _solver()
    lat = solver.lattice
    pts = _cell_points()
    S = solver.mode_fields(ALPHA)[1]
    assert_allclose(S(pts + lat.l2).values, np.exp(1j * ALPHA @ lat.l2) * S(pts).values, atol=1e-10)


def test_rotation_and_parity_symmetry():
    print("🧪 Testing R S1 = tau S1 and the parity-conjugation pairing")
    solver = _solver()
    lat = solver.lattice
    star = solver.alpha_star
    S1, S2 = solver.mode_fields(star)
    pts = _cell_points(40)

    def f1(x):
        return S1(x).values

    def f2(x):
        return S2(x).values

    scale = np.max(np.abs(f1(pts)))
    assert np.max(np.abs(rotate_mode(f1, star, pts, lat) - TAU * f1(pts))) < 1e-6 * scale
    assert np.max(np.abs(f2(pts) - parity_conjugate(f1, pts, lat))) < 1e-6 * scale


def test_mode_table_interpolation():
    solver = _solver()
    table = solver.mode_table(ALPHA, n=64)
    pts = _cell_points(60, seed=5)
    T1, T2 = table(pts)
    S1, S2 = solver.mode_fields(ALPHA)
    for approx, exact in ((T1, S1(pts).values), (T2, S2(pts).values)):
        assert np.max(np.abs(approx - exact)) < 2e-3 * np.max(np.abs(exact))


def test_energy_form_matches_boundary_form():
    print("🧪 Testing the energy form of the capacitance")
    cap = _solver().capacitance(ALPHA, energy=True, resolution=48)
    assert cap.energy_gap < 1e-4


def test_coefficient_c_two_ways():
    print("🧪 Testing the cone coefficient c")
    coeff = _solver().dirac_coefficient_c()
    assert abs(coeff.c_fd) > 0
    assert coeff.rel_gap < 1e-2
    assert coeff.ratio_error < 1e-3
    # alpha* is a critical point of c1
    assert np.max(np.abs(coeff.grad_c1)) < 1e-3 * abs(coeff.c_fd)


def test_pairing_vector_b():
    solver = _solver()
    coeff = solver.dirac_coefficient_c()
    pairing = solver.pairing_b()
    assert pairing.rel_change < 1e-3
    assert pairing.rotation_error < 1e-3
    ratio = pairing.b / (1j * coeff.c_fd)
    assert np.linalg.norm(ratio - np.array([1.0, 1j])) < 0.03 * np.sqrt(2.0)


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_capacitance_self_convergence():
    print("🧪 Testing capacitance convergence under node doubling")
    coarse, fine = _solver(64), _solver(128)
    for alpha in (ALPHA, coarse.alpha_star, np.array([-0.42, 0.08])):
        C64 = coarse.capacitance_matrix(alpha)
        C128 = fine.capacitance_matrix(alpha)
        assert np.max(np.abs(C64 - C128)) < 1e-6 * abs(C128[0, 0])


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_coefficient_c_self_convergence():
    c64 = _solver(64).dirac_coefficient_c().c_fd
    c128 = _solver(128).dirac_coefficient_c().c_fd
    assert abs(c64 - c128) < 1e-4 * abs(c128)


def test_collocation_residual():
    solution = _solver(128).solve_densities(ALPHA)
    assert solution.residual < 1e-8


def test_functional_eval_S_reports_degraded_targets():
    solver = _solver()
    geom = solver.geometry
    on_edge = geom.centers[0] + np.array([geom.radius, 0.0])
    away = solver.lattice.x0
    with pytest.warns(UserWarning):
        evaluation = eval_S(1, ALPHA, np.stack([on_edge, away]), solver.quad, solver.green)
    assert evaluation.values.shape == (2,)
    assert evaluation.degraded.tolist() == [True, False]
    assert_allclose(evaluation.values, solver.eval_S(1, ALPHA, np.stack([on_edge, away])).values, atol=1e-12)


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_grad_alpha_of_modes():
    print("🧪 Testing d/dalpha S_1 against the auxiliary fields")
    solver = _solver(128)
    lat = solver.lattice
    r = solver.geometry.radius
    inside = lat.x1 + 0.5 * r * np.array([[1.0, 0.0], [0.0, 1.0], [-0.6, -0.3]])
    pts = np.vstack([inside, _cell_points(10)])
    check = solver.grad_alpha_S_check(1, None, pts)
    assert check.max_error < 1e-3
    assert check.inclusion_error < 1e-3 * lat.L
    assert check.periodicity_error < 1e-3 * lat.L
    # W_1 equals x on D_1 and vanishes on D_2
    assert_allclose(check.w_centers[0], lat.x1, atol=1e-8 * lat.L)
    assert_allclose(check.w_centers[1], [0.0, 0.0], atol=1e-8 * lat.L)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
