"""Single-layer potentials on the two inclusion circles.

The Nystrom discretization uses the trapezoid rule on each circle, with the
logarithmic part of the kernel on the same circle integrated by Kress' product
quadrature. Everything else in the kernel is smooth and uses plain
trapezoid weights.

Fields are evaluated three ways depending on where the target sits:
  * inside an inclusion: harmonic interior expansion of the boundary trace
  * in the annulus around an inclusion: local expansion built from the trace
    and the density through the jump relation of the single layer
  * farther out: the Nystrom sum against the quasi-periodic Green's function
"""

import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from config import Config

from .errors import (
    ConvergenceError,
    DegenerateConeError,
    InconsistencyError,
    InvalidArgumentError,
    SolverError,
)
from .lattice import SQRT3, TAU, Lattice, dirac_points, symmetry_map
from .quasigreen import GreenMethod, GreenParams, GreenTable

# Target pairs per direct-evaluation chunk
_DIRECT_CHUNK = 40000


class InclusionShape(str, Enum):
    DISK = "disk"


@dataclass(frozen=True)
class InclusionGeometry:
    lattice: Lattice
    radius: float
    shape: InclusionShape = InclusionShape.DISK

    def __post_init__(self):
        limit = self.lattice.L / (2.0 * SQRT3)
        if not 0 < self.radius < limit:
            raise InvalidArgumentError(
                f"disk radius {self.radius:.6g} must lie in (0, {limit:.6g}) so the inclusions stay disjoint"
            )

    @classmethod
    def from_fraction(cls, lattice: Lattice, fraction: float) -> "InclusionGeometry":
        return cls(lattice=lattice, radius=fraction * lattice.L)

    @property
    def centers(self) -> np.ndarray:
        return self.lattice.centers

    @property
    def area(self) -> float:
        """|D_1|"""
        return math.pi * self.radius ** 2

    @property
    def local_radius(self) -> float:
        """Outer radius of the annulus served by local expansions"""
        half_gap = self.lattice.neighbour_distance / 2.0 - self.radius
        return self.radius + 0.5 * half_gap

    @property
    def expansion_limit(self) -> float:
        """Local expansions converge up to the nearest other boundary"""
        return self.lattice.neighbour_distance - self.radius


@dataclass(frozen=True)
class BoundaryQuadrature:
    geometry: InclusionGeometry
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    owner: np.ndarray
    angles: np.ndarray
    N_per_boundary: int

    @property
    def spacing(self) -> float:
        return 2.0 * math.pi * self.geometry.radius / self.N_per_boundary

    def indicator(self, j: int) -> np.ndarray:
        return (self.owner == j).astype(complex)


def discretize_boundary(geom: InclusionGeometry, N: int) -> BoundaryQuadrature:
    """N equispaced trapezoid nodes per circle; D1 first, then D2."""
    if N < 16 or N % 2:
        raise InvalidArgumentError(f"N must be even and at least 16, got {N}")

    theta = 2.0 * np.pi * np.arange(N) / N
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    nodes = np.vstack([c + geom.radius * ring for c in geom.centers])
    return BoundaryQuadrature(
        geometry=geom,
        nodes=nodes,
        normals=np.vstack([ring, ring]),
        weights=np.full(2 * N, 2.0 * np.pi * geom.radius / N),
        owner=np.repeat([1, 2], N),
        angles=theta,
        N_per_boundary=N,
    )


def kress_weights(N: int) -> np.ndarray:
    """R_d with sum_k R_{j-k} f(t_k) ~ int_0^{2pi} log(4 sin^2((t_j - t)/2)) f(t) dt"""
    n = N // 2
    d = np.arange(N)
    m = np.arange(1, n)
    cos = np.cos(2.0 * np.pi * np.outer(d, m) / N)
    return -(2.0 * np.pi / n) * (cos @ (1.0 / m)) - (np.pi / n ** 2) * (-1.0) ** d


@dataclass(frozen=True)
class DensitySolution:
    alpha: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    residual: float
    condition: float

    def density(self, j: int) -> np.ndarray:
        return self.psi1 if j == 1 else self.psi2


@dataclass(frozen=True)
class CapacitanceResult:
    alpha: np.ndarray
    C: np.ndarray
    c1: float
    c2: complex
    energy_C: Optional[np.ndarray] = None

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([self.c1 - abs(self.c2), self.c1 + abs(self.c2)])

    @property
    def energy_gap(self) -> Optional[float]:
        if self.energy_C is None:
            return None
        return float(np.max(np.abs(self.energy_C - self.C)) / self.c1)


@dataclass
class FieldEvaluation:
    values: np.ndarray
    gradients: Optional[np.ndarray] = None
    degraded: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CoefficientC:
    c_fd: complex
    c_bi: complex
    rel_gap: float
    grad_c1: np.ndarray
    grad_c2: np.ndarray
    ratio_error: float
    phase_gap: float
    c1_star: float
    fd_step: float


@dataclass(frozen=True)
class PairingB:
    b: np.ndarray
    rel_change: float
    resolution: int

    @property
    def rotation_error(self) -> float:
        return rotation_error(self.b)


@dataclass(frozen=True)
class GradAlphaCheck:
    max_error: float
    inclusion_error: float
    periodicity_error: float
    w_centers: np.ndarray


def _powers(z: np.ndarray, M: int) -> np.ndarray:
    """Columns z^0 .. z^M"""
    out = np.empty((len(z), M + 1), dtype=complex)
    out[:, 0] = 1.0
    if M:
        out[:, 1:] = np.cumprod(np.repeat(z[:, None], M, axis=1), axis=1)
    return out


@dataclass
class _Located:
    owner: np.ndarray
    shift: np.ndarray
    local: np.ndarray
    rho: np.ndarray


def locate(geom: InclusionGeometry, points: np.ndarray) -> _Located:
    """Nearest inclusion image for every point"""
    lat = geom.lattice
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    base = np.floor(lat.to_fractional(pts))
    best = np.full(len(pts), np.inf)
    owner = np.zeros(len(pts), dtype=int)
    shift = np.zeros_like(pts)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            cell = lat.from_fractional(base + np.array([di, dj]))
            for idx, center in enumerate(geom.centers):
                dist = np.linalg.norm(pts - center - cell, axis=1)
                closer = dist < best
                best = np.where(closer, dist, best)
                owner = np.where(closer, idx, owner)
                shift = np.where(closer[:, None], cell, shift)
    local = pts - geom.centers[owner] - shift
    return _Located(owner=owner, shift=shift, local=local, rho=best)


class LayerField:
    """Single-layer field with known density and known trace on both circles"""

    def __init__(self, solver: "CapacitanceSolver", alpha: np.ndarray, density: np.ndarray, trace: np.ndarray):
        self.solver = solver
        self.alpha = np.asarray(alpha, dtype=float)
        self.density = np.asarray(density, dtype=complex)
        self.trace = np.asarray(trace, dtype=complex)
        self._coefficients = [self._expansion(i) for i in range(2)]

    def _expansion(self, i: int) -> Dict[str, np.ndarray]:
        quad = self.solver.quad
        N = quad.N_per_boundary
        r = quad.geometry.radius
        sl = slice(i * N, (i + 1) * N)
        phi = np.fft.fft(self.density[sl]) / N
        g = np.fft.fft(self.trace[sl]) / N
        M = N // 2 - 1
        m = np.arange(1, M + 1)

        g_pos, g_neg = g[1:M + 1], g[N - m]
        dec_pos = r * phi[1:M + 1] / (2.0 * m)
        dec_neg = r * phi[N - m] / (2.0 * m)
        grow_pos = g_pos + dec_pos
        grow_neg = g_neg + dec_neg

        # Growing powers amplify roundoff; drop modes at the noise floor
        scale = max(abs(g[0]), abs(r * phi[0]), np.max(np.abs(grow_pos)), np.max(np.abs(grow_neg)),
                    np.max(np.abs(g_pos)), np.max(np.abs(g_neg)))
        floor = Config.MODE_TOL * scale
        for arr in (grow_pos, grow_neg, g_pos, g_neg):
            arr[np.abs(arr) < floor] = 0.0

        return {
            "m": m.astype(float),
            "g0": g[0],
            "log": r * phi[0],
            "g_pos": g_pos,
            "g_neg": g_neg,
            "grow_pos": grow_pos,
            "grow_neg": grow_neg,
            "dec_pos": dec_pos,
            "dec_neg": dec_neg,
        }

    def _local(self, i: int, u: np.ndarray, interior: bool, with_gradient: bool):
        co = self._coefficients[i]
        r = self.solver.quad.geometry.radius
        m = co["m"]
        zeta = (u[:, 0] + 1j * u[:, 1]) / r
        zbar = np.conj(zeta)
        M = len(m)
        zpow, cpow = _powers(zeta, M), _powers(zbar, M)
        zp, zp1 = zpow[:, 1:], zpow[:, :-1]
        zc, zc1 = cpow[:, 1:], cpow[:, :-1]

        if interior:
            values = co["g0"] + zp @ co["g_pos"] + zc @ co["g_neg"]
            if not with_gradient:
                return values, None
            a = (zp1 * m) @ co["g_pos"]
            b = (zc1 * m) @ co["g_neg"]
            grad = np.stack([a + b, 1j * (a - b)], axis=1) / r
            return values, grad

        modulus = np.abs(zeta)
        zi = 1.0 / zeta
        zci = 1.0 / zbar
        zpi = _powers(zi, M)[:, 1:]
        zcin = _powers(zci, M)[:, 1:]
        values = (co["g0"] + co["log"] * np.log(modulus) + zp @ co["grow_pos"] + zc @ co["grow_neg"]
                  - zcin @ co["dec_pos"] - zpi @ co["dec_neg"])
        if not with_gradient:
            return values, None
        a = (zp1 * m) @ co["grow_pos"]
        b = (zc1 * m) @ co["grow_neg"]
        c = (zcin * zci[:, None] * m) @ co["dec_pos"]
        d = (zpi * zi[:, None] * m) @ co["dec_neg"]
        radial = co["log"] / (r * modulus ** 2)
        gx = radial * zeta.real + (a + b + c + d) / r
        gy = radial * zeta.imag + 1j * (a - b - c + d) / r
        return values, np.stack([gx, gy], axis=1)

    def _direct(self, points: np.ndarray, with_gradient: bool):
        quad = self.solver.quad
        strength = quad.weights * self.density
        chunk = max(1, _DIRECT_CHUNK // len(quad.nodes))
        values = np.empty(len(points), dtype=complex)
        grads = np.empty((len(points), 2), dtype=complex) if with_gradient else None
        for start in range(0, len(points), chunk):
            sl = slice(start, start + chunk)
            disp = points[sl, None, :] - quad.nodes[None, :, :]
            table = GreenTable(self.solver.green, disp, with_gradient=with_gradient)
            values[sl] = table.values(self.alpha) @ strength
            if with_gradient:
                grads[sl] = np.einsum("pkc,k->pc", table.gradients(self.alpha), strength)
        return values, grads

    def evaluate(self, points: np.ndarray, with_gradient: bool = False, mode: str = "auto") -> FieldEvaluation:
        """mode: 'auto', 'direct' (Nystrom sum outside D) or 'local' (expansions only)"""
        geom = self.solver.quad.geometry
        pts = np.asarray(points, dtype=float)
        shape = pts.shape[:-1]
        pts = pts.reshape(-1, 2)
        where = locate(geom, pts)
        phase = np.exp(1j * where.shift @ self.alpha)

        inside = where.rho <= geom.radius
        if mode == "auto":
            near = ~inside & (where.rho <= geom.local_radius)
        elif mode == "local":
            near = ~inside
            if np.any(where.rho[near] >= geom.expansion_limit):
                raise InvalidArgumentError("local expansions requested beyond their convergence radius")
        elif mode == "direct":
            near = np.zeros(len(pts), dtype=bool)
        else:
            raise InvalidArgumentError(f"unknown evaluation mode '{mode}'")
        far = ~inside & ~near

        values = np.empty(len(pts), dtype=complex)
        grads = np.empty((len(pts), 2), dtype=complex) if with_gradient else None
        for i in range(2):
            for mask, interior in ((inside, True), (near, False)):
                sel = mask & (where.owner == i)
                if not np.any(sel):
                    continue
                v, g = self._local(i, where.local[sel], interior, with_gradient)
                values[sel] = v * phase[sel]
                if with_gradient:
                    grads[sel] = g * phase[sel, None]
        if np.any(far):
            v, g = self._direct(pts[far], with_gradient)
            values[far] = v
            if with_gradient:
                grads[far] = g

        gap = where.rho - geom.radius
        degraded = np.abs(gap) < Config.EXCLUSION_FACTOR * geom.lattice.L
        if mode == "direct":
            degraded |= far & (gap < 5.0 * self.solver.quad.spacing)
        if np.any(degraded):
            warnings.warn(f"{int(degraded.sum())} target(s) within the near-singular zone of the boundary")

        return FieldEvaluation(
            values=values.reshape(shape),
            gradients=None if grads is None else grads.reshape(shape + (2,)),
            degraded=degraded.reshape(shape),
        )

    __call__ = evaluate


class ModeTable:
    """Fast sampler of (S_1, S_2) at one alpha for large target sets.

    The periodic parts exp(-i alpha.x) S_j are tabulated on an n x n grid of
    the cell and interpolated with local cubic Lagrange stencils; targets in
    or near an inclusion use the exact local expansions instead.
    """

    def __init__(self, fields: Tuple[LayerField, LayerField], n: int):
        self.fields = fields
        self.alpha = fields[0].alpha
        self.geometry = fields[0].solver.quad.geometry
        self.n = n
        lat = self.geometry.lattice
        s = np.arange(n) / n
        S, T = np.meshgrid(s, s, indexing="ij")
        grid = lat.from_fractional(np.stack([S, T], axis=-1))
        bloch = np.exp(-1j * grid @ self.alpha)
        self.periodic = [f.evaluate(grid).values * bloch for f in fields]

    @staticmethod
    def _stencil(tau: np.ndarray) -> np.ndarray:
        return np.stack([
            -tau * (tau - 1.0) * (tau - 2.0) / 6.0,
            (tau + 1.0) * (tau - 1.0) * (tau - 2.0) / 2.0,
            -(tau + 1.0) * tau * (tau - 2.0) / 2.0,
            (tau + 1.0) * tau * (tau - 1.0) / 6.0,
        ], axis=-1)

    def _interpolate(self, table: np.ndarray, frac: np.ndarray) -> np.ndarray:
        n = self.n
        scaled = np.mod(frac, 1.0) * n
        base = np.floor(scaled).astype(int)
        ws = self._stencil(scaled[:, 0] - base[:, 0])
        wt = self._stencil(scaled[:, 1] - base[:, 1])
        out = np.zeros(len(frac), dtype=complex)
        for a in range(4):
            ia = (base[:, 0] + a - 1) % n
            for b in range(4):
                ib = (base[:, 1] + b - 1) % n
                out += ws[:, a] * wt[:, b] * table[ia, ib]
        return out

    def __call__(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=float)
        shape = pts.shape[:-1]
        pts = pts.reshape(-1, 2)
        where = locate(self.geometry, pts)
        exact = where.rho <= self.geometry.local_radius
        frac = self.geometry.lattice.to_fractional(pts[~exact])
        bloch = np.exp(1j * pts[~exact] @ self.alpha)
        out = []
        for f, table in zip(self.fields, self.periodic):
            values = np.empty(len(pts), dtype=complex)
            if np.any(exact):
                values[exact] = f.evaluate(pts[exact]).values
            values[~exact] = bloch * self._interpolate(table, frac)
            out.append(values.reshape(shape))
        return out[0], out[1]


def _edge_rule(lat: Lattice, M: int, edges: str = "all"):
    """Gauss-Legendre nodes on the edges of Y with outward normals"""
    t, w = np.polynomial.legendre.leggauss(M)
    t = (t + 1.0) / 2.0
    w = w / 2.0 * lat.L
    n1 = -lat.a2 / np.linalg.norm(lat.a2)
    n2 = -lat.a1 / np.linalg.norm(lat.a1)
    zero = np.zeros(2)
    spec = [(zero, lat.l1, n1), (zero, lat.l2, n2)]
    if edges == "all":
        spec += [(lat.l2, lat.l1, -n1), (lat.l1, lat.l2, -n2)]
    pts = np.vstack([start + np.outer(t, direction) for start, direction, _ in spec])
    normals = np.vstack([np.tile(normal, (M, 1)) for _, _, normal in spec])
    return pts, normals, np.tile(w, len(spec))


def _circle_rule(center: np.ndarray, radius: float, M: int):
    theta = 2.0 * np.pi * np.arange(M) / M
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return center + radius * ring, ring, np.full(M, 2.0 * np.pi * radius / M)


def _annulus_rule(center: np.ndarray, r_in: float, r_out: float, M_rho: int, M_theta: int):
    x, w = np.polynomial.legendre.leggauss(M_rho)
    rho = r_in + (x + 1.0) * (r_out - r_in) / 2.0
    w_rho = w * (r_out - r_in) / 2.0 * rho
    theta = 2.0 * np.pi * np.arange(M_theta) / M_theta
    R, T = np.meshgrid(rho, theta, indexing="ij")
    pts = center + np.stack([R.ravel() * np.cos(T.ravel()), R.ravel() * np.sin(T.ravel())], axis=1)
    weights = np.outer(w_rho, np.full(M_theta, 2.0 * np.pi / M_theta)).ravel()
    return pts, weights


class CapacitanceSolver:
    """Nystrom solver for the densities psi_j and everything built on them"""

    def __init__(self, quad: BoundaryQuadrature, green: GreenParams, cache=None):
        if green.method is not GreenMethod.EWALD:
            raise InvalidArgumentError("layer potentials need the ewald method")
        if green.lattice is not quad.geometry.lattice and green.lattice.L != quad.geometry.lattice.L:
            raise InvalidArgumentError("quadrature and Green's function use different lattices")
        self.quad = quad
        self.green = green
        self.cache = cache
        self.geometry = quad.geometry
        self.lattice = quad.geometry.lattice
        self._factors: Dict[Tuple[float, float], tuple] = {}

        N = quad.N_per_boundary
        owner = quad.owner
        disp = quad.nodes[:, None, :] - quad.nodes[None, :, :]
        same = owner[:, None] == owner[None, :]
        self._table = GreenTable(green, disp, smooth=same)
        self._same = same

        r = self.geometry.radius
        R = kress_weights(N)
        idx = (np.arange(N)[:, None] - np.arange(N)[None, :]) % N
        block = r / (4.0 * np.pi) * R[idx] + quad.weights[0] * math.log(r) / (2.0 * np.pi)
        self._log_part = np.zeros((2 * N, 2 * N))
        self._log_part[:N, :N] = block
        self._log_part[N:, N:] = block

    @classmethod
    def from_settings(cls, lattice: Lattice, radius_fraction: float, N: int, cache=None, **green_kwargs):
        geom = InclusionGeometry.from_fraction(lattice, radius_fraction)
        quad = discretize_boundary(geom, N)
        return cls(quad, GreenParams.for_lattice(lattice, **green_kwargs), cache=cache)

    @property
    def alpha_star(self) -> np.ndarray:
        return dirac_points(self.lattice)[0]

    def default_fd_step(self) -> float:
        return Config.FD_STEP_FACTOR * float(np.linalg.norm(self.alpha_star))

    # -- Nystrom system -----------------------------------------------------

    def matrix(self, alpha: np.ndarray) -> np.ndarray:
        G = self._table.values(alpha)
        return G * self.quad.weights[None, :] + self._log_part

    def _factor(self, alpha: np.ndarray):
        key = tuple(np.round(np.asarray(alpha, dtype=float), 15))
        cached = self._factors.get(key)
        if cached is not None:
            return cached
        A = self.matrix(alpha)
        condition = float(np.linalg.cond(A))
        if not np.isfinite(condition) or condition > Config.MAX_CONDITION:
            raise SolverError(f"Nystrom system at alpha={alpha} is ill-conditioned (cond ~ {condition:.2e})",
                              condition=condition)
        entry = (A, lu_factor(A), condition)
        if len(self._factors) > 64:
            self._factors.clear()
        self._factors[key] = entry
        return entry

    def solve(self, alpha: np.ndarray, rhs: np.ndarray) -> Tuple[np.ndarray, float, float]:
        A, lu, condition = self._factor(alpha)
        x = lu_solve(lu, rhs)
        residual = float(np.max(np.abs(A @ x - rhs)))
        return x, residual, condition

    def solve_densities(self, alpha: np.ndarray) -> DensitySolution:
        alpha = np.asarray(alpha, dtype=float)
        rhs = np.stack([self.quad.indicator(1), self.quad.indicator(2)], axis=1)
        psi, residual, condition = self.solve(alpha, rhs)
        if residual > Config.SOLVE_TOL:
            raise SolverError(f"collocation residual {residual:.2e} above {Config.SOLVE_TOL:.1e}", condition=condition)
        return DensitySolution(alpha=alpha, psi1=psi[:, 0], psi2=psi[:, 1], residual=residual, condition=condition)

    # -- capacitance --------------------------------------------------------

    def _cache_key(self, alpha: np.ndarray) -> Dict:
        return {
            "alpha": [float(a) for a in alpha],
            "L": self.lattice.L,
            "radius": self.geometry.radius,
            "N": self.quad.N_per_boundary,
            "method": self.green.method.value,
            "ewald_split": self.green.ewald_split,
            "target_tol": self.green.target_tol,
        }

    def capacitance_matrix(self, alpha: np.ndarray, use_cache: bool = True) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        key = self._cache_key(alpha)
        use_cache = use_cache and self.cache is not None
        if use_cache:
            hit = self.cache.get_cached_capacitance(key)
            if hit is not None:
                return hit
        sol = self.solve_densities(alpha)
        w = self.quad.weights
        C = np.empty((2, 2), dtype=complex)
        for i in (1, 2):
            on_i = self.quad.owner == i
            for j in (1, 2):
                C[i - 1, j - 1] = -np.sum(w[on_i] * sol.density(j)[on_i])
        if use_cache:
            self.cache.cache_capacitance(key, C)
        return C

    def capacitance(self, alpha: np.ndarray, energy: bool = False, resolution: Optional[int] = None,
                    use_cache: bool = True) -> CapacitanceResult:
        """C^alpha with its structure checked; use_cache=False keeps worker threads off the cache"""
        alpha = np.asarray(alpha, dtype=float)
        result = self.checked_capacitance(alpha, self.capacitance_matrix(alpha, use_cache=use_cache))
        if not energy:
            return result
        return replace(result, energy_C=self.energy_capacitance(alpha, resolution))

    @staticmethod
    def checked_capacitance(alpha: np.ndarray, C: np.ndarray) -> CapacitanceResult:
        """Wrap an assembled C^alpha after checking its Hermitian structure"""
        scale = abs(C[0, 0].real)
        problems = []
        if C[0, 0].real <= 0:
            problems.append(f"C11 = {C[0, 0]:.6g} is not positive")
        tol = Config.STRUCTURE_TOL * scale
        if abs(C[1, 0] - np.conj(C[0, 1])) > tol:
            problems.append(f"|C21 - conj(C12)| = {abs(C[1, 0] - np.conj(C[0, 1])):.2e}")
        if abs(C[0, 0] - C[1, 1]) > tol:
            problems.append(f"|C11 - C22| = {abs(C[0, 0] - C[1, 1]):.2e}")
        if abs(C[0, 0].imag) > tol:
            problems.append(f"Im C11 = {C[0, 0].imag:.2e}")
        if problems:
            raise InconsistencyError(f"capacitance at alpha={alpha} violates its structure: " + "; ".join(problems))
        return CapacitanceResult(alpha=alpha, C=C, c1=float(C[0, 0].real), c2=complex(C[0, 1]))

    # -- fields -------------------------------------------------------------

    def mode_fields(self, alpha: np.ndarray) -> Tuple[LayerField, LayerField]:
        sol = self.solve_densities(alpha)
        return (LayerField(self, alpha, sol.psi1, self.quad.indicator(1)),
                LayerField(self, alpha, sol.psi2, self.quad.indicator(2)))

    def eval_S(self, j: int, alpha: np.ndarray, points: np.ndarray, with_gradient: bool = False,
               mode: str = "auto") -> FieldEvaluation:
        if j not in (1, 2):
            raise InvalidArgumentError(f"mode index must be 1 or 2, got {j}")
        return self.mode_fields(alpha)[j - 1].evaluate(points, with_gradient=with_gradient, mode=mode)

    def mode_table(self, alpha: np.ndarray, n: int = Config.MODE_TABLE_POINTS) -> ModeTable:
        return ModeTable(self.mode_fields(alpha), n)

    def auxiliary_fields(self, j: int, alpha: np.ndarray) -> Tuple[LayerField, LayerField]:
        """W_j components: harmonic off the boundary, equal to y_k on D_j and 0 on the other disk"""
        on_j = self.quad.owner == j
        fields = []
        for k in range(2):
            trace = np.where(on_j, self.quad.nodes[:, k], 0.0).astype(complex)
            phi, _, _ = self.solve(alpha, trace)
            fields.append(LayerField(self, alpha, phi, trace))
        return fields[0], fields[1]

    # -- integrals over the cell ---------------------------------------------

    def _cell_pieces(self, fields: Tuple[LayerField, LayerField], M: int):
        """Field samples on the annuli (local), on the cell edges and on the annulus rims (direct)"""
        geom = self.geometry
        rim = geom.local_radius
        M_theta = 2 * M
        M_rho = max(8, M // 4)

        annuli = [_annulus_rule(c, geom.radius, rim, M_rho, M_theta) for c in geom.centers]
        a_pts = np.vstack([p for p, _ in annuli])
        a_w = np.concatenate([w for _, w in annuli])

        e_pts, e_n, e_w = _edge_rule(self.lattice, M)
        circles = [_circle_rule(c, rim, M_theta) for c in geom.centers]
        c_pts = np.vstack([p for p, _, _ in circles])
        c_n = -np.vstack([n for _, n, _ in circles])
        c_w = np.concatenate([w for _, _, w in circles])

        b_pts = np.vstack([e_pts, c_pts])
        b_n = np.vstack([e_n, c_n])
        b_w = np.concatenate([e_w, c_w])

        area = [f.evaluate(a_pts, with_gradient=True, mode="local") for f in fields]
        bound = [f.evaluate(b_pts, with_gradient=True, mode="direct") for f in fields]
        return (a_w, area), (b_pts, b_n, b_w, bound)

    def energy_capacitance(self, alpha: np.ndarray, resolution: Optional[int] = None) -> np.ndarray:
        """C_ij = int_{Y minus D} conj(grad S_i) . grad S_j"""
        M = resolution or Config.PAIRING_RESOLUTION
        fields = self.mode_fields(alpha)
        (a_w, area), (_, b_n, b_w, bound) = self._cell_pieces(fields, M)
        E = np.empty((2, 2), dtype=complex)
        for i in range(2):
            for j in range(2):
                bulk = np.sum(a_w * np.einsum("pk,pk->p", np.conj(area[i].gradients), area[j].gradients))
                dn = np.einsum("pk,pk->p", bound[j].gradients, b_n)
                E[i, j] = bulk + np.sum(b_w * np.conj(bound[i].values) * dn)
        return E

    def _pairing_once(self, fields: Tuple[LayerField, LayerField], M: int) -> np.ndarray:
        (a_w, area), (b_pts, b_n, b_w, bound) = self._cell_pieces(fields, M)
        S1, S2 = area
        integrand = S2.gradients * np.conj(S1.values)[:, None] - S2.values[:, None] * np.conj(S1.gradients)
        bulk = np.sum(a_w[:, None] * integrand, axis=0)
        B1, B2 = bound
        flux = (np.einsum("pk,pk->p", B2.gradients, b_n) * np.conj(B1.values)
                - B2.values * np.conj(np.einsum("pk,pk->p", B1.gradients, b_n)))
        # Divergence theorem on the rest of the cell, weight x_k for component k
        outer = np.sum((b_w * flux)[:, None] * b_pts, axis=0)
        return bulk + outer

    def pairing_b(self, resolution: Optional[int] = None, check_convergence: bool = True) -> PairingB:
        M = resolution or Config.PAIRING_RESOLUTION
        fields = self.mode_fields(self.alpha_star)
        fine = self._pairing_once(fields, 2 * M)
        if not check_convergence:
            return PairingB(b=fine, rel_change=float("nan"), resolution=2 * M)
        coarse = self._pairing_once(fields, M)
        rel = float(np.linalg.norm(fine - coarse) / np.linalg.norm(fine))
        if rel > Config.PAIRING_TOL:
            raise ConvergenceError(f"b changes by {rel:.2e} between resolutions {M} and {2 * M}", achieved=rel)
        return PairingB(b=fine, rel_change=rel, resolution=2 * M)

    def boundary_formula_c(self, resolution: Optional[int] = None) -> complex:
        """(i sqrt(3) L / 2) * int over the edges {t l1}, {t l2} of conj(S1) dS2/dn - conj(dS1/dn) S2"""
        M = resolution or Config.PAIRING_RESOLUTION
        S1, S2 = self.mode_fields(self.alpha_star)
        pts, normals, w = _edge_rule(self.lattice, M, edges="left")
        F1 = S1.evaluate(pts, with_gradient=True, mode="direct")
        F2 = S2.evaluate(pts, with_gradient=True, mode="direct")
        dn1 = np.einsum("pk,pk->p", F1.gradients, normals)
        dn2 = np.einsum("pk,pk->p", F2.gradients, normals)
        integral = np.sum(w * (np.conj(F1.values) * dn2 - np.conj(dn1) * F2.values))
        return complex(1j * SQRT3 * self.lattice.L / 2.0 * integral)

    def dirac_coefficient_c(self, fd_step: Optional[float] = None, resolution: Optional[int] = None) -> CoefficientC:
        h = fd_step or self.default_fd_step()
        star = self.alpha_star
        if self.lattice.dual_distance_to_origin(star) <= 2.0 * h:
            raise InvalidArgumentError(f"fd_step {h:.3e} reaches the dual lattice")

        c1_star = self.capacitance(star).c1
        grad_c1 = np.empty(2)
        grad_c2 = np.empty(2, dtype=complex)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            plus, minus = self.capacitance(star + e), self.capacitance(star - e)
            grad_c1[k] = (plus.c1 - minus.c1) / (2.0 * h)
            grad_c2[k] = (plus.c2 - minus.c2) / (2.0 * h)

        c_fd = complex(grad_c2[0])
        floor = 10.0 * Config.STRUCTURE_TOL * c1_star / h
        if abs(c_fd) < floor:
            raise DegenerateConeError(f"|c| = {abs(c_fd):.2e} is below the noise floor {floor:.2e}")

        c_bi = self.boundary_formula_c(resolution)
        rel_gap = abs(c_fd - c_bi) / abs(c_fd)
        phase_gap = abs(float(np.angle(c_bi / c_fd)))
        ratio_error = abs(grad_c2[1] / grad_c2[0] + 1j)
        return CoefficientC(c_fd=c_fd, c_bi=c_bi, rel_gap=float(rel_gap), grad_c1=grad_c1, grad_c2=grad_c2,
                            ratio_error=float(ratio_error), phase_gap=phase_gap, c1_star=c1_star, fd_step=h)

    def grad_alpha_S_check(self, j: int, fd_step: Optional[float], test_points: np.ndarray) -> GradAlphaCheck:
        """Finite-difference d/dalpha S_j at alpha* against i (x S_j - W_j)"""
        h = fd_step or self.default_fd_step()
        star = self.alpha_star
        pts = np.asarray(test_points, dtype=float).reshape(-1, 2)
        shifted = pts + self.lattice.l1
        both = np.vstack([pts, shifted])

        fd = np.empty((len(both), 2), dtype=complex)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            plus = self.mode_fields(star + e)[j - 1].evaluate(both).values
            minus = self.mode_fields(star - e)[j - 1].evaluate(both).values
            fd[:, k] = (plus - minus) / (2.0 * h)

        S = self.mode_fields(star)[j - 1].evaluate(both).values
        Wx, Wy = self.auxiliary_fields(j, star)
        W = np.stack([Wx.evaluate(both).values, Wy.evaluate(both).values], axis=1)

        remainder = fd - 1j * both * S[:, None]
        error = np.max(np.abs(remainder + 1j * W), axis=1)
        n = len(pts)

        inside = locate(self.geometry, both).rho < self.geometry.radius
        inclusion_error = float(np.max(error[inside], initial=0.0))
        bloch = np.exp(1j * star @ self.lattice.l1)
        periodicity_error = float(np.max(np.abs(remainder[n:] - bloch * remainder[:n]), initial=0.0))

        centers = self.geometry.centers
        w_centers = np.stack([Wx.evaluate(centers).values, Wy.evaluate(centers).values], axis=1)
        return GradAlphaCheck(max_error=float(np.max(error[:n], initial=0.0)), inclusion_error=inclusion_error,
                              periodicity_error=periodicity_error, w_centers=w_centers)


def rotate_mode(f: Callable[[np.ndarray], np.ndarray], alpha: np.ndarray, points: np.ndarray,
                lat: Lattice) -> np.ndarray:
    """(R f)(x): exp(-i alpha.l1) f(R1 x) on Y1, exp(-2i alpha.l1) f(R2 x) on Y2"""
    pts = np.asarray(points, dtype=float)
    left = lat.in_left_half(pts)
    R1, R2 = symmetry_map("R1", lat), symmetry_map("R2", lat)
    phase = alpha @ lat.l1
    return np.where(left,
                    np.exp(-1j * phase) * f(R1(pts)),
                    np.exp(-2j * phase) * f(R2(pts)))


def parity_conjugate(f: Callable[[np.ndarray], np.ndarray], points: np.ndarray, lat: Lattice) -> np.ndarray:
    """conj f(2 x0 - x)"""
    return np.conj(f(symmetry_map("R0", lat)(points)))


def rotation_error(b: np.ndarray) -> float:
    """|R b - tau b| / |b| for a complex 2-vector"""
    R = symmetry_map("R", None)
    return float(np.linalg.norm(R.matrix @ b - TAU * b) / np.linalg.norm(b))


# Functional entry points mirroring the solver methods

def solve_densities(alpha: np.ndarray, quad: BoundaryQuadrature, gp: GreenParams) -> DensitySolution:
    return CapacitanceSolver(quad, gp).solve_densities(alpha)


def capacitance(alpha: np.ndarray, quad: BoundaryQuadrature, gp: GreenParams, energy: bool = False) -> CapacitanceResult:
    return CapacitanceSolver(quad, gp).capacitance(alpha, energy=energy)


def eval_S(j: int, alpha: np.ndarray, points: np.ndarray, quad: BoundaryQuadrature, gp: GreenParams,
           with_gradient: bool = False, mode: str = "auto") -> FieldEvaluation:
    """S_j at points, with the degraded-accuracy flag of targets hugging the boundary"""
    return CapacitanceSolver(quad, gp).eval_S(j, alpha, points, with_gradient=with_gradient, mode=mode)


def dirac_coefficient_c(geom: InclusionGeometry, quad: BoundaryQuadrature, gp: GreenParams,
                        fd_step: Optional[float] = None) -> CoefficientC:
    if quad.geometry is not geom:
        raise InvalidArgumentError("quadrature was built for a different geometry")
    return CapacitanceSolver(quad, gp).dirac_coefficient_c(fd_step)


def pairing_b(geom: InclusionGeometry, quad: BoundaryQuadrature, gp: GreenParams,
              area_grid_resolution: Optional[int] = None) -> PairingB:
    if quad.geometry is not geom:
        raise InvalidArgumentError("quadrature was built for a different geometry")
    return CapacitanceSolver(quad, gp).pairing_b(area_grid_resolution)


def grad_alpha_S_check(j: int, fd_step: Optional[float], test_points: np.ndarray, quad: BoundaryQuadrature,
                       gp: GreenParams) -> GradAlphaCheck:
    return CapacitanceSolver(quad, gp).grad_alpha_S_check(j, fd_step, test_points)
