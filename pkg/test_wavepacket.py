#!/usr/bin/env python3
"""
Tests for the Floquet-Bloch transform and the microscale wave-packet synthesis
"""

import os
import sys
from functools import lru_cache

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from numpy.testing import assert_allclose

from config import EnvelopeSpec, GaussianSpec
from honeycomb.dirac import DiracParams, EnvelopeGrid, InitialEnvelopes, evolve_real
from honeycomb.errors import InvalidArgumentError, ResolutionError
from honeycomb.lattice import build_lattice
from honeycomb.layerpot import CapacitanceSolver
from honeycomb.wavepacket import (
    GaussianEnvelope,
    ansatz_field,
    envelope_bound,
    floquet_data,
    floquet_transform,
    inverse_contrast_weight,
    inverse_floquet,
    packet_grid,
    plancherel_check,
    synthesize_initial,
)

LAT = build_lattice()
EPSILON = 0.25
BUMP = GaussianEnvelope(GaussianSpec(center=tuple(LAT.x0), width=0.6 * LAT.L))


@lru_cache(maxsize=None)
def _solver() -> CapacitanceSolver:
    return CapacitanceSolver.from_settings(LAT, 0.15, 96)


@lru_cache(maxsize=None)
def _table():
    solver = _solver()
    return solver.mode_table(solver.alpha_star, n=64)


def _center_grid() -> EnvelopeGrid:
    """Grid on which the point index (n/2 + 8, n/2) sits exactly at eps * x1"""
    spacing = EPSILON * LAT.x1[0] / 8.0
    return EnvelopeGrid(64, 64 * spacing)


def test_floquet_quasi_periodicity_and_inversion():
    print("🧪 Testing the Floquet-Bloch transform")
    alphas = LAT.dual_grid(8)
    data = floquet_data(BUMP, alphas[:6], LAT, 16)
    assert data.tail < 1e-12
    assert data.quasiperiodicity_error(BUMP, 12) < 1e-12

    full = floquet_data(BUMP, alphas, LAT, 16)
    assert_allclose(inverse_floquet(full), BUMP(full.points), atol=1e-10)
    assert_allclose(inverse_floquet(full, (1, 0)), BUMP(full.points + LAT.l1), atol=1e-10)


def test_floquet_transform_single_alpha():
    pts = LAT.from_fractional(np.array([[0.2, 0.7], [0.5, 0.5]]))
    alpha = np.array([0.3, 0.1])
    U = floquet_transform(BUMP, alpha, LAT, pts)
    direct = sum(np.exp(1j * alpha @ LAT.lattice_vector(m, n)) * BUMP(pts - LAT.lattice_vector(m, n))
                 for m in range(-12, 13) for n in range(-12, 13))
    assert_allclose(U, direct, atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        floquet_transform(BUMP, alpha, LAT, pts, R_trunc=-1)


def test_truncation_warning():
    wide = GaussianEnvelope(GaussianSpec(center=tuple(LAT.x0), width=2.0 * LAT.L))
    with pytest.warns(UserWarning):
        floquet_transform(wide, np.array([0.3, 0.1]), LAT, LAT.x0[None, :], R_trunc=2)


@pytest.mark.parametrize("delta", [1.0, 1e-2])
def test_plancherel(delta):
    print(f"🧪 Testing weighted Plancherel identity at delta={delta}")
    weight = inverse_contrast_weight(_solver().geometry, delta)
    fine = plancherel_check(BUMP, LAT.dual_grid(8), weight, LAT, n=32)
    coarse = plancherel_check(BUMP, LAT.dual_grid(4), weight, LAT, n=32)
    assert fine.rel_gap < 1e-10
    assert fine.rel_gap < coarse.rel_gap


def test_plancherel_zero_function():
    weight = inverse_contrast_weight(_solver().geometry, 1.0)
    record = plancherel_check(lambda x: np.zeros(np.shape(x)[:-1]), LAT.dual_grid(4), weight, LAT, n=8)
    assert record.lhs == 0.0 and record.rhs == 0.0 and record.rel_gap == 0.0


def test_contrast_weight():
    weight = inverse_contrast_weight(_solver().geometry, 1e-2)
    values = weight(np.stack([LAT.x1, LAT.x2 + LAT.l1, np.zeros(2)]))
    assert_allclose(values, [100.0, 100.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        inverse_contrast_weight(_solver().geometry, 0.0)


def test_resolution_is_enforced():
    with pytest.raises(ResolutionError):
        packet_grid(EnvelopeSpec(), EPSILON, LAT, n=16, span_factor=16.0)
    grid = packet_grid(EnvelopeSpec(), EPSILON, LAT, n=128, span_factor=16.0)
    assert grid.spacing <= EPSILON * LAT.L / 8.0


@pytest.mark.filterwarnings("ignore:initial envelopes")
def test_synthesis_on_an_inclusion():
    print("🧪 Testing wave-packet synthesis")
    grid = _center_grid()
    spec = EnvelopeSpec(F1=GaussianSpec(width=1.0), F2=GaussianSpec(width=1.0, amplitude=0.5))
    envelopes = InitialEnvelopes.from_spec(grid, spec)
    params = DiracParams.from_eta(0.5, omega_star=2.0)
    packet = synthesize_initial(envelopes, EPSILON, _table(), params)

    k = grid.n // 2
    assert_allclose(grid.points[k + 8, k], EPSILON * LAT.x1, atol=1e-15)
    assert abs(packet.values[k + 8, k] - envelopes.F1[k + 8, k]) < 1e-12
    assert_allclose(packet.velocity, 1j * 2.0 / EPSILON * packet.values)

    bound = envelope_bound(spec, EPSILON, _table(), grid)
    assert packet.l2_norm() <= bound


def test_zero_envelopes_give_zero_packet():
    grid = _center_grid()
    zeros = np.zeros((grid.n, grid.n), dtype=complex)
    packet = synthesize_initial(InitialEnvelopes(grid, zeros, zeros), EPSILON, _table())
    assert np.all(packet.values == 0)
    assert packet.velocity is None
    with pytest.raises(InvalidArgumentError):
        synthesize_initial(InitialEnvelopes(grid, zeros, zeros), 0.0, _table())


@pytest.mark.filterwarnings("ignore:initial envelopes")
def test_ansatz_tracks_envelopes():
    grid = _center_grid()
    spec = EnvelopeSpec(F1=GaussianSpec(width=1.0), F2=GaussianSpec(center=(0.5, 0.0), width=1.0, amplitude=0.5))
    envelopes = InitialEnvelopes.from_spec(grid, spec)
    params = DiracParams.from_eta(0.5, omega_star=2.0)
    table = _table()

    start = ansatz_field(envelopes, EPSILON, params, 0.0, table)
    assert np.max(np.abs(start.values - synthesize_initial(envelopes, EPSILON, table).values)) < 1e-12

    later = ansatz_field(envelopes, EPSILON, params, 0.7, table)
    V = evolve_real(envelopes, 0.7, params)
    S1, S2 = table(grid.points / EPSILON)
    assert_allclose(np.abs(later.values), np.abs(V.V1 * S1 + V.V2 * S2), atol=1e-12)


def test_ansatz_norm_is_nearly_conserved():
    print("🧪 Testing L2 conservation of the two-scale ansatz")
    grid = EnvelopeGrid(160, 32.0)
    spec = EnvelopeSpec(F1=GaussianSpec(width=2.0), F2=GaussianSpec(center=(1.0, 0.0), width=2.0, amplitude=0.5))
    envelopes = InitialEnvelopes.from_spec(grid, spec)
    params = DiracParams.from_eta(0.5, omega_star=2.0)
    start = ansatz_field(envelopes, EPSILON, params, 0.0, _table())
    later = ansatz_field(envelopes, EPSILON, params, 2.0, _table())
    assert abs(later.l2_norm() / start.l2_norm() - 1.0) < 1e-3


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
