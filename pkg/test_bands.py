#!/usr/bin/env python3
"""
Tests for the subwavelength bands, the Dirac cone fit and the near-cone eigenvectors
"""

import math
import os
import sys
from functools import lru_cache

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from numpy.testing import assert_allclose

from config import Config
from honeycomb.bands import (
    band_diagram,
    band_grid,
    band_pair,
    band_sweep,
    cone_fit,
    eigvec_expansion_check,
    omega_star,
    predicted_phase,
    sweep_workers,
)
from honeycomb.errors import DegenerateInputError, InconsistencyError, InvalidArgumentError
from honeycomb.lattice import build_lattice
from honeycomb.layerpot import CapacitanceResult, CapacitanceSolver

DELTA = Config.DELTA


@lru_cache(maxsize=None)
def _solver() -> CapacitanceSolver:
    return CapacitanceSolver.from_settings(build_lattice(), 0.15, 96)


@lru_cache(maxsize=None)
def _coefficient():
    return _solver().dirac_coefficient_c()


def test_band_pair_at_dirac_point():
    print("🧪 Testing band touching at alpha*")
    solver = _solver()
    cap = solver.capacitance(solver.alpha_star)
    sample = band_pair(solver.alpha_star, DELTA, cap, solver.geometry.area)
    w_star = omega_star(solver, DELTA)
    assert sample.gap < 1e-6 * w_star
    assert abs(sample.omega1 - w_star) < 1e-6 * w_star


def test_bands_scale_with_sqrt_delta():
    solver = _solver()
    alpha = np.array([0.31, -0.17])
    cap = solver.capacitance(alpha)
    low = band_pair(alpha, DELTA, cap, solver.geometry.area)
    high = band_pair(alpha, 4.0 * DELTA, cap, solver.geometry.area)
    assert abs(high.omega1 - 2.0 * low.omega1) < 1e-12 * high.omega1
    assert abs(high.omega2 - 2.0 * low.omega2) < 1e-12 * high.omega2


def test_band_pair_rejects_bad_input():
    solver = _solver()
    cap = solver.capacitance(np.array([0.31, -0.17]))
    with pytest.raises(InvalidArgumentError):
        band_pair(cap.alpha, 0.0, cap, solver.geometry.area)
    with pytest.raises(InvalidArgumentError):
        band_pair(cap.alpha, DELTA, cap, -1.0)

    C = np.array([[1.0, 2.0], [2.0, 1.0]], dtype=complex)
    broken = CapacitanceResult(alpha=cap.alpha, C=C, c1=1.0, c2=2.0 + 0j)
    with pytest.raises(InconsistencyError):
        band_pair(cap.alpha, DELTA, broken, 1.0)


def test_band_grid_ordering_and_symmetry():
    solver = _solver()
    samples = band_grid(solver, 3, DELTA)
    assert len(samples) == 9
    assert all(s.omega1 <= s.omega2 for s in samples)

    alphas = np.array([s.alpha for s in samples[:4]])
    mirrored = band_sweep(solver, -alphas, DELTA)
    for s, m in zip(samples[:4], mirrored):
        assert abs(s.omega1 - m.omega1) < 1e-8 * s.omega2
        assert abs(s.omega2 - m.omega2) < 1e-8 * s.omega2


def test_threaded_sweep_matches_serial():
    solver = _solver()
    alphas = np.array([[0.2, 0.1], [0.4, -0.3], [-0.25, 0.5], [0.1, 0.45]])
    serial = band_sweep(solver, alphas, DELTA, threads=1)
    threaded = band_sweep(solver, alphas, DELTA, threads=2)
    auto = band_sweep(solver, alphas, DELTA, threads=0)
    assert_allclose([s.omega1 for s in threaded], [s.omega1 for s in serial], rtol=1e-12)
    assert_allclose([s.omega2 for s in threaded], [s.omega2 for s in serial], rtol=1e-12)
    assert_allclose([s.omega1 for s in auto], [s.omega1 for s in serial], rtol=1e-12)


def test_sweep_workers():
    assert sweep_workers(0) == (os.cpu_count() or 1)
    assert sweep_workers(1) == 1
    assert sweep_workers(3) == 3
    with pytest.raises(InvalidArgumentError):
        sweep_workers(-1)


def test_band_grid_ordering_fine():
    samples = band_grid(_solver(), 32, DELTA)
    assert len(samples) == 32 * 32
    assert all(0.0 < s.omega1 <= s.omega2 for s in samples)


def test_band_diagram_path():
    path = band_diagram(_solver(), 2, DELTA)
    assert len(path.samples) == 6
    assert path.labels[2] == "M-K"
    assert np.all(np.diff(path.lengths) > 0)


def test_cone_fit():
    print("🧪 Testing the Dirac cone fit")
    solver = _solver()
    fit = cone_fit(solver, DELTA, coefficient=_coefficient())
    assert abs(fit.slope_ratio - 1.0) < 2e-2
    assert fit.anisotropy < 2e-2
    assert fit.intercept_error < 1e-3
    assert fit.residual < Config.CONE_FIT_TOL

    wider = cone_fit(solver, 4.0 * DELTA, coefficient=_coefficient())
    assert abs(wider.lambda_fit / fit.lambda_fit - 2.0) < 1e-8
    assert abs(wider.omega_star / fit.omega_star - 2.0) < 1e-12


def test_cone_fit_residual_shrinks_with_window():
    solver = _solver()
    full = cone_fit(solver, DELTA, coefficient=_coefficient())
    half = cone_fit(solver, DELTA, coefficient=_coefficient(), window=Config.CONE_WINDOW / 2.0)
    assert half.residual < full.residual
    assert abs(half.slope_ratio - 1.0) <= abs(full.slope_ratio - 1.0) + 1e-3


def test_cone_fit_needs_enough_samples():
    with pytest.raises(InvalidArgumentError):
        cone_fit(_solver(), DELTA, radii=[0.01, 0.02])


def test_predicted_phase():
    c = 0.7 - 0.4j
    assert abs(abs(predicted_phase(np.array([0.3, -0.8]), c)) - 1.0) < 1e-15
    assert abs(predicted_phase(np.array([2.0, 0.0]), c) - c / abs(c)) < 1e-15
    assert abs(predicted_phase(np.array([0.0, 1.0]), c) + 1j * c / abs(c)) < 1e-15
    with pytest.raises(DegenerateInputError):
        predicted_phase(np.zeros(2), c)


def test_eigvec_expansion():
    print("🧪 Testing near-cone eigenvectors")
    solver = _solver()
    c = _coefficient().c_fd
    eps = 1e-3 * float(np.linalg.norm(solver.alpha_star))
    for theta in 2.0 * np.pi * np.arange(8) / 8:
        beta = eps * np.array([math.cos(theta), math.sin(theta)])
        cap = solver.capacitance(solver.alpha_star + beta)
        check = eigvec_expansion_check(beta, cap, c)
        assert check.error <= 1e-2


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
