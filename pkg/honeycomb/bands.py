"""Leading-order subwavelength bands, the Dirac cone fit and the near-cone eigenvectors."""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from config import Config

from .errors import ConeWindowError, DegenerateInputError, InconsistencyError, InvalidArgumentError
from .lattice import band_path
from .layerpot import CapacitanceResult, CapacitanceSolver, CoefficientC


@dataclass(frozen=True)
class BandSample:
    alpha: np.ndarray
    omega1: float
    omega2: float
    delta: float

    @property
    def gap(self) -> float:
        return self.omega2 - self.omega1


@dataclass(frozen=True)
class ConeFit:
    delta: float
    lambda_fit: float
    lambda_formula: float
    omega_star: float
    omega_intercept: float
    anisotropy: float
    residual: float
    quadratic: float
    slopes: np.ndarray
    radii: np.ndarray
    directions: np.ndarray

    @property
    def slope_ratio(self) -> float:
        return self.lambda_fit / self.lambda_formula

    @property
    def intercept_error(self) -> float:
        return abs(self.omega_intercept - self.omega_star) / self.omega_star


@dataclass(frozen=True)
class EigvecCheck:
    beta: np.ndarray
    A: complex
    lower_error: float
    upper_error: float

    @property
    def error(self) -> float:
        return max(self.lower_error, self.upper_error)


@dataclass(frozen=True)
class BandPath:
    alphas: np.ndarray
    lengths: np.ndarray
    labels: List[str]
    samples: List[BandSample]


def band_pair(alpha: np.ndarray, delta: float, cap: CapacitanceResult, D1_area: float) -> BandSample:
    """omega_{1,2}^2 = delta (c1 -/+ |c2|) / |D1|, cross-checked against a direct eigensolve"""
    if delta <= 0:
        raise InvalidArgumentError(f"delta must be positive, got {delta}")
    if D1_area <= 0:
        raise InvalidArgumentError(f"|D1| must be positive, got {D1_area}")

    lam = np.linalg.eigvalsh(cap.C)
    closed = cap.eigenvalues
    if np.max(np.abs(lam - closed)) > Config.STRUCTURE_TOL * cap.c1:
        raise InconsistencyError(f"capacitance eigenvalues {lam} disagree with c1 -/+ |c2| = {closed}")
    if closed[0] < 0:
        raise InconsistencyError(f"capacitance at alpha={alpha} has a negative eigenvalue {closed[0]:.3e}")

    omega = np.sqrt(delta * closed / D1_area)
    return BandSample(alpha=np.asarray(alpha, dtype=float), omega1=float(omega[0]), omega2=float(omega[1]),
                      delta=float(delta))


def omega_star(solver: CapacitanceSolver, delta: float) -> float:
    c1 = solver.capacitance(solver.alpha_star).c1
    return math.sqrt(delta * c1 / solver.geometry.area)


def sweep_workers(threads: int) -> int:
    """Worker count for a sweep: 0 means one per CPU"""
    if threads < 0:
        raise InvalidArgumentError(f"threads must be >= 0, got {threads}")
    return threads or os.cpu_count() or 1


def capacitance_sweep(solver: CapacitanceSolver, alphas: np.ndarray, threads: int = 0) -> List[CapacitanceResult]:
    """C^alpha at many alphas; cache reads and writes stay on the calling thread"""
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    results: List[Optional[CapacitanceResult]] = [None] * len(alphas)
    cache = solver.cache
    keys = [solver._cache_key(a) for a in alphas]

    missing = []
    for idx, (alpha, key) in enumerate(zip(alphas, keys)):
        hit = cache.get_cached_capacitance(key) if cache is not None else None
        if hit is not None:
            results[idx] = solver.checked_capacitance(alpha, hit)
        else:
            missing.append(idx)

    def work(idx: int) -> CapacitanceResult:
        return solver.capacitance(alphas[idx], use_cache=False)

    workers = sweep_workers(threads)
    if workers > 1 and len(missing) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            computed = list(pool.map(work, missing))
    else:
        computed = [work(idx) for idx in missing]

    for idx, res in zip(missing, computed):
        results[idx] = res
        if cache is not None:
            cache.cache_capacitance(keys[idx], res.C)
    return results


def band_sweep(solver: CapacitanceSolver, alphas: np.ndarray, delta: float, threads: int = 0) -> List[BandSample]:
    caps = capacitance_sweep(solver, alphas, threads)
    return [band_pair(cap.alpha, delta, cap, solver.geometry.area) for cap in caps]


def band_grid(solver: CapacitanceSolver, n: int, delta: float, threads: int = 0) -> List[BandSample]:
    """Bands on a cell-centered n x n grid of Y*"""
    return band_sweep(solver, solver.lattice.dual_grid(n), delta, threads)


def band_diagram(solver: CapacitanceSolver, points_per_segment: int, delta: float, threads: int = 0) -> BandPath:
    """Bands along Gamma -> M -> K -> Gamma"""
    alphas, lengths, labels = band_path(solver.lattice, points_per_segment)
    samples = band_sweep(solver, alphas, delta, threads)
    return BandPath(alphas=alphas, lengths=lengths, labels=labels, samples=samples)


def _fit(design: np.ndarray, y: np.ndarray):
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef, y - design @ coef


def cone_fit(solver: CapacitanceSolver, delta: float, radii: Optional[Sequence[float]] = None,
             directions: Optional[np.ndarray] = None, coefficient: Optional[CoefficientC] = None,
             window: Optional[float] = None, threads: int = 0) -> ConeFit:
    """Fit omega_{1,2}(alpha* + beta) = omega* -/+ lambda |beta| + O(|beta|^2) along several directions"""
    star = solver.alpha_star
    scale = float(np.linalg.norm(star))
    window = window or Config.CONE_WINDOW
    if radii is None:
        radii = window * scale * np.arange(1, Config.CONE_RADII + 1) / Config.CONE_RADII
    if directions is None:
        angles = 2.0 * np.pi * np.arange(Config.CONE_DIRECTIONS) / Config.CONE_DIRECTIONS
        directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    radii = np.asarray(radii, dtype=float)
    directions = np.asarray(directions, dtype=float)
    if len(radii) < 3 or len(directions) < 4:
        raise InvalidArgumentError("cone fit needs at least 3 radii and 4 directions")
    if np.any(radii <= 0):
        raise InvalidArgumentError("cone radii must be positive")

    alphas = star + (radii[None, :, None] * directions[:, None, :]).reshape(-1, 2)
    samples = band_sweep(solver, alphas, delta, threads)
    lower = np.array([s.omega1 for s in samples]).reshape(len(directions), len(radii))
    upper = np.array([s.omega2 for s in samples]).reshape(len(directions), len(radii))

    half_gap = (upper - lower) / 2.0
    mean = (upper + lower) / 2.0
    design = np.stack([radii, radii ** 2], axis=1)

    slopes = np.empty(len(directions))
    quadratic = np.empty(len(directions))
    residuals = []
    for k in range(len(directions)):
        coef, res = _fit(design, half_gap[k])
        slopes[k], quadratic[k] = coef
        residuals.append(res)

    lam = float(np.mean(slopes))
    if lam <= 0:
        raise ConeWindowError(f"fitted cone slope {lam:.3e} is not positive")
    rms = float(np.sqrt(np.mean(np.concatenate(residuals) ** 2)))
    residual = rms / (lam * radii.max())
    if residual > Config.CONE_FIT_TOL:
        raise ConeWindowError(f"cone fit residual {residual:.2e} above {Config.CONE_FIT_TOL:.1e}; shrink the window",
                              achieved=residual)

    intercept_design = np.stack([np.ones(mean.size), np.tile(radii, len(directions)),
                                 np.tile(radii ** 2, len(directions))], axis=1)
    coef, _ = _fit(intercept_design, mean.ravel())

    coefficient = coefficient or solver.dirac_coefficient_c()
    c1_star = coefficient.c1_star
    area = solver.geometry.area
    lambda_formula = 0.5 * math.sqrt(1.0 / (area * c1_star)) * abs(coefficient.c_fd) * math.sqrt(delta)

    return ConeFit(
        delta=float(delta),
        lambda_fit=lam,
        lambda_formula=lambda_formula,
        omega_star=math.sqrt(delta * c1_star / area),
        omega_intercept=float(coef[0]),
        anisotropy=float(np.max(np.abs(slopes - lam)) / lam),
        residual=residual,
        quadratic=float(np.mean(quadratic)),
        slopes=slopes,
        radii=radii,
        directions=directions,
    )


def predicted_phase(beta: np.ndarray, c: complex) -> complex:
    """A(beta) = (c/|c|) (beta_1 - i beta_2) / |beta|"""
    beta = np.asarray(beta, dtype=float)
    norm = float(np.linalg.norm(beta))
    if norm == 0.0 or c == 0:
        raise DegenerateInputError("A(beta) is undefined at beta = 0 or c = 0")
    return complex(c / abs(c) * (beta[0] - 1j * beta[1]) / norm)


def _phase_distance(v: np.ndarray, p: np.ndarray) -> float:
    """min over theta of |v e^{i theta} - p| for unit vectors"""
    return math.sqrt(max(0.0, 2.0 - 2.0 * abs(np.vdot(v, p))))


def eigvec_expansion_check(beta: np.ndarray, cap: CapacitanceResult, c: complex) -> EigvecCheck:
    """Compare the eigenvectors of C^{alpha*+beta} with (A/sqrt 2, -/+ 1/sqrt 2)"""
    A = predicted_phase(beta, c)
    lam, vecs = np.linalg.eigh(cap.C)
    if lam[1] - lam[0] <= Config.STRUCTURE_TOL * cap.c1:
        raise DegenerateInputError(f"eigenvalues of C at beta={beta} are degenerate")
    lower = np.array([A, -1.0]) / math.sqrt(2.0)
    upper = np.array([A, 1.0]) / math.sqrt(2.0)
    return EigvecCheck(beta=np.asarray(beta, dtype=float), A=A,
                       lower_error=_phase_distance(vecs[:, 0], lower),
                       upper_error=_phase_distance(vecs[:, 1], upper))
