"""Floquet-Bloch transform and microscale wave-packet synthesis.

Quasimomentum integrals are normalized by |Y*|, so the transform is an
isometry for any lattice constant (the default lattice has |Y*| = 1).
"""

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from config import Config, EnvelopeSpec, GaussianSpec

from .dirac import DiracParams, EnvelopeGrid, InitialEnvelopes, discrete_l2, evolve_real, sample_gaussian
from .errors import InvalidArgumentError, ResolutionError
from .lattice import Lattice
from .layerpot import InclusionGeometry, ModeTable, locate

Sampler = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GaussianEnvelope:
    spec: GaussianSpec

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return sample_gaussian(self.spec, np.asarray(points, dtype=float))

    def sup_over_ball(self, centers: np.ndarray, radius: float) -> np.ndarray:
        """Exact max of |F| over closed balls"""
        dist = np.linalg.norm(np.asarray(centers) - np.asarray(self.spec.center), axis=-1)
        gap = np.maximum(dist - radius, 0.0)
        return self.spec.amplitude * np.exp(-gap ** 2 / (2.0 * self.spec.width ** 2))


@dataclass(frozen=True)
class FloquetData:
    lattice: Lattice
    alpha_grid: np.ndarray
    points: np.ndarray
    cell_samples: np.ndarray
    tail: float

    def quasiperiodicity_error(self, f: Sampler, R_trunc: int) -> float:
        """max |Uf(x + l1) - e^{i alpha.l1} Uf(x)| over the stored alphas and points"""
        worst = 0.0
        for k, alpha in enumerate(self.alpha_grid):
            shifted = floquet_transform(f, alpha, self.lattice, self.points + self.lattice.l1, R_trunc, warn=False)
            gap = np.abs(shifted - np.exp(1j * alpha @ self.lattice.l1) * self.cell_samples[k])
            worst = max(worst, float(gap.max()))
        return worst


@dataclass(frozen=True)
class PlancherelRecord:
    lhs: float
    rhs: float
    rel_gap: float


@dataclass(frozen=True)
class PacketField:
    grid: EnvelopeGrid
    values: np.ndarray
    epsilon: float
    time: float = 0.0
    velocity: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")
        if self.values.shape != (self.grid.n, self.grid.n):
            raise InvalidArgumentError("packet values do not match the grid")

    def l2_norm(self) -> float:
        return discrete_l2(self.grid, self.values)


def cell_grid(lattice: Lattice, n: int) -> np.ndarray:
    """n x n points s l1 + t l2 with s, t = k / n"""
    s = np.arange(n) / n
    S, T = np.meshgrid(s, s, indexing="ij")
    return lattice.from_fractional(np.stack([S, T], axis=-1))


def _shifts(lattice: Lattice, R_trunc: int):
    idx = np.arange(-R_trunc, R_trunc + 1)
    M, N = np.meshgrid(idx, idx, indexing="ij")
    ring = (np.abs(M) == R_trunc) | (np.abs(N) == R_trunc)
    return lattice.lattice_vector(M.ravel(), N.ravel()), ring.ravel()


def floquet_transform(f: Sampler, alpha: np.ndarray, lattice: Lattice, points: np.ndarray,
                      R_trunc: int = Config.FLOQUET_TRUNCATION, warn: bool = True) -> np.ndarray:
    """Uf(x, alpha) = sum_{|m|,|n| <= R} e^{i alpha.l} f(x - l)"""
    if R_trunc < 0:
        raise InvalidArgumentError(f"R_trunc must be nonnegative, got {R_trunc}")
    alpha = np.asarray(alpha, dtype=float)
    pts = np.asarray(points, dtype=float)
    shifts, ring = _shifts(lattice, R_trunc)
    samples = np.stack([f(pts - l) for l in shifts])
    if warn:
        _check_tail(samples, ring)
    phases = np.exp(1j * shifts @ alpha)
    return np.tensordot(phases, samples, axes=1)


def _check_tail(samples: np.ndarray, ring: np.ndarray) -> float:
    peak = float(np.max(np.abs(samples), initial=0.0))
    if peak == 0.0:
        return 0.0
    tail = float(np.max(np.abs(samples[ring]), initial=0.0)) / peak
    if tail > Config.FLOQUET_TAIL_TOL:
        warnings.warn(f"Floquet sum truncated with tail {tail:.2e} of the peak; raise R_trunc")
    return tail


def floquet_data(f: Sampler, alpha_grid: np.ndarray, lattice: Lattice, n: int,
                 R_trunc: int = Config.FLOQUET_TRUNCATION) -> FloquetData:
    """Uf(., alpha) on an n x n cell grid for each alpha of the grid"""
    pts = cell_grid(lattice, n)
    shifts, ring = _shifts(lattice, R_trunc)
    samples = np.stack([f(pts - l) for l in shifts])
    tail = _check_tail(samples, ring)
    phases = np.exp(1j * np.asarray(alpha_grid) @ shifts.T)
    cells = np.tensordot(phases, samples, axes=1)
    return FloquetData(lattice=lattice, alpha_grid=np.asarray(alpha_grid, dtype=float), points=pts,
                       cell_samples=cells, tail=tail)


def inverse_floquet(data: FloquetData, shift: tuple = (0, 0)) -> np.ndarray:
    """f on the cell translated by m l1 + n l2, as the Y*-average of Uf"""
    l = data.lattice.lattice_vector(*shift)
    phases = np.exp(1j * data.alpha_grid @ l)
    return np.tensordot(phases, data.cell_samples, axes=1) / len(data.alpha_grid)


def inverse_contrast_weight(geometry: InclusionGeometry, delta: float) -> Sampler:
    """sigma_delta^{-1}: 1/delta in the inclusions, 1 in the background"""
    if delta <= 0:
        raise InvalidArgumentError(f"delta must be positive, got {delta}")

    def weight(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        inside = locate(geometry, pts.reshape(-1, 2)).rho < geometry.radius
        return np.where(inside, 1.0 / delta, 1.0).reshape(pts.shape[:-1])

    return weight


def plancherel_check(f: Sampler, alpha_grid: np.ndarray, weight: Sampler, lattice: Lattice,
                     n: int = 32, R_trunc: int = Config.FLOQUET_TRUNCATION) -> PlancherelRecord:
    """Weighted ||f||^2 on the plane against the Y*-average of ||Uf(., alpha)||^2 on Y"""
    data = floquet_data(f, alpha_grid, lattice, n, R_trunc)
    w = weight(data.points)
    dA = lattice.cell_area / n ** 2

    shifts, _ = _shifts(lattice, R_trunc)
    lhs = sum(float(np.sum(w * np.abs(f(data.points + l)) ** 2)) for l in shifts) * dA
    rhs = float(np.mean(np.sum(w * np.abs(data.cell_samples) ** 2, axis=(1, 2)))) * dA
    gap = abs(lhs - rhs) / lhs if lhs > 0 else abs(rhs)
    return PlancherelRecord(lhs=lhs, rhs=rhs, rel_gap=gap)


def packet_grid(envelope: EnvelopeSpec, epsilon: float, lattice: Lattice, n: int = Config.PACKET_POINTS,
                span_factor: float = Config.PACKET_SPAN_FACTOR) -> EnvelopeGrid:
    grid = EnvelopeGrid(n=n, span=span_factor * envelope.width)
    check_resolution(grid, epsilon, lattice)
    return grid


def check_resolution(grid: EnvelopeGrid, epsilon: float, lattice: Lattice) -> None:
    limit = epsilon * lattice.L / 8.0
    if grid.spacing > limit:
        raise ResolutionError(
            f"grid spacing {grid.spacing:.4g} cannot resolve cells of size {epsilon * lattice.L:.4g}; "
            f"need spacing <= {limit:.4g}"
        )


def _modes(table: ModeTable, grid: EnvelopeGrid, epsilon: float):
    return table(grid.points / epsilon)


def synthesize_initial(envelopes: InitialEnvelopes, epsilon: float, table: ModeTable,
                       params: Optional[DiracParams] = None) -> PacketField:
    """w(x, 0) = F1(x) S1(x/eps) + F2(x) S2(x/eps), with dw/dt = i (omega*/eps) w when params are given"""
    if epsilon <= 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    grid = envelopes.grid
    check_resolution(grid, epsilon, table.geometry.lattice)
    S1, S2 = _modes(table, grid, epsilon)
    w = envelopes.F1 * S1 + envelopes.F2 * S2
    velocity = None if params is None else 1j * params.omega_star / epsilon * w
    return PacketField(grid=grid, values=w, epsilon=float(epsilon), time=0.0, velocity=velocity)


def ansatz_field(envelopes: InitialEnvelopes, epsilon: float, params: DiracParams, t: float,
                 table: ModeTable) -> PacketField:
    """e^{i omega* t / eps} (V1(x, t) S1(x/eps) + V2(x, t) S2(x/eps))"""
    if epsilon <= 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    grid = envelopes.grid
    check_resolution(grid, epsilon, table.geometry.lattice)
    V = evolve_real(envelopes, t, params)
    S1, S2 = _modes(table, grid, epsilon)
    phase = np.exp(1j * params.omega_star * t / epsilon)
    return PacketField(grid=grid, values=phase * (V.V1 * S1 + V.V2 * S2), epsilon=float(epsilon), time=float(t))


def mode_norms(table: ModeTable) -> np.ndarray:
    """||S_j||_{L2(Y)} from the tabulated periodic parts"""
    area = table.geometry.lattice.cell_area
    return np.array([math.sqrt(float(np.mean(np.abs(p) ** 2)) * area) for p in table.periodic])


def envelope_bound(envelope: EnvelopeSpec, epsilon: float, table: ModeTable, grid: EnvelopeGrid) -> float:
    """Upper bound on ||F1 S1(./eps) + F2 S2(./eps)||_{L2}.

    Each eps-cell contributes at most sup_cell |F_j|^2 eps^2 ||S_j||^2_{L2(Y)}; cells
    are covered by balls around their centers.
    """
    lat = table.geometry.lattice
    half = grid.span / 2.0
    reach = int(math.ceil(half / (epsilon * lat.L) * 2.0)) + 2
    idx = np.arange(-reach, reach + 1)
    M, N = np.meshgrid(idx, idx, indexing="ij")
    centers = epsilon * (lat.lattice_vector(M.ravel(), N.ravel()) + lat.x0)
    keep = np.all(np.abs(centers) <= half + epsilon * lat.L, axis=1)
    centers = centers[keep]
    radius = epsilon * float(np.linalg.norm(lat.x0))

    norms = mode_norms(table)
    total = 0.0
    for spec, norm in zip((envelope.F1, envelope.F2), norms):
        sup = GaussianEnvelope(spec).sup_over_ball(centers, radius)
        total += epsilon * norm * math.sqrt(float(np.sum(sup ** 2)))
    return total
