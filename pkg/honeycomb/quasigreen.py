"""Quasi-periodic Green's function of the Laplacian on the triangular lattice.

G(x) = -(1/|Y|) sum_q exp(i(alpha+q).x) / |alpha+q|^2, which behaves like
(1/2pi) log|x| near every lattice point. The default evaluation splits the sum
Ewald-style into a Gaussian-screened real-space image sum (exponential
integrals E1) and a rapidly convergent dual-space sum.
"""

import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Union

import numpy as np
from scipy.special import exp1

from config import Config

from .errors import ConvergenceError, InvalidArgumentError, SingularEvaluationError
from .lattice import Lattice, dirac_points

# Ein(z) = E1(z) + log z + gamma, entire; series used below z = 1
_EIN_SERIES_TERMS = 40


class GreenMethod(str, Enum):
    EWALD = "ewald"
    SPECTRAL_CUTOFF = "spectral_cutoff"


@dataclass(frozen=True)
class GreenParams:
    lattice: Lattice
    alpha: np.ndarray
    method: GreenMethod = GreenMethod.EWALD
    cutoff_radius: float = 0.0
    ewald_split: float = 0.0
    target_tol: float = Config.GREEN_TOL
    exclusion_radius: float = 0.0

    @classmethod
    def for_lattice(
        cls,
        lattice: Lattice,
        alpha: Optional[np.ndarray] = None,
        method: Union[str, GreenMethod, None] = None,
        target_tol: Optional[float] = None,
        ewald_split: Optional[float] = None,
        cutoff_radius: Optional[float] = None,
    ) -> "GreenParams":
        """Fill every unset field from the configured defaults"""
        method = GreenMethod(method or Config.GREEN_METHOD)
        if target_tol is None:
            target_tol = Config.GREEN_TOL if method is GreenMethod.EWALD else Config.SPECTRAL_TOL
        if alpha is None:
            alpha = dirac_points(lattice)[0]
        return cls(
            lattice=lattice,
            alpha=np.asarray(alpha, dtype=float),
            method=method,
            cutoff_radius=cutoff_radius or Config.SPECTRAL_CUTOFF_FACTOR * 2.0 * np.pi / lattice.L,
            ewald_split=ewald_split or Config.EWALD_SPLIT_FACTOR * math.sqrt(math.pi) / lattice.L,
            target_tol=float(target_tol),
            exclusion_radius=Config.EXCLUSION_FACTOR * lattice.L,
        )

    def with_alpha(self, alpha: np.ndarray) -> "GreenParams":
        return replace(self, alpha=np.asarray(alpha, dtype=float))


def ein(z: np.ndarray) -> np.ndarray:
    """Entire exponential integral sum_{k>=1} (-1)^(k+1) z^k / (k k!)"""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 1.0
    zs = z[small]
    term = zs.copy()
    total = zs.copy()
    for k in range(2, _EIN_SERIES_TERMS):
        term = -term * zs * (k - 1) / (k * k)
        total = total + term
    out[small] = total
    zl = z[~small]
    out[~small] = exp1(zl) + np.log(zl) + np.euler_gamma
    return out


def _lattice_points(basis: np.ndarray, radius: float, spacing: float, max_index: int):
    """All m b1 + n b2 with norm <= radius; None when more than max_index shells are needed."""
    K = int(math.ceil(radius / spacing))
    if K > max_index:
        return None
    idx = np.arange(-K, K + 1)
    M, N = np.meshgrid(idx, idx, indexing="ij")
    pts = np.outer(M.ravel(), basis[0]) + np.outer(N.ravel(), basis[1])
    keep = np.linalg.norm(pts, axis=1) <= radius
    return pts[keep]


class GreenTable:
    """Alpha-independent pieces of the lattice sum for a fixed set of points.

    Building the table costs the special-function evaluations once; values()
    and gradients() are then cheap matrix-vector products for any alpha, which
    is what band sweeps and finite differences in alpha need.

    smooth=True evaluates G(x) - (1/2pi) log|x| instead of G(x).
    """

    def __init__(self, params: GreenParams, points: np.ndarray, smooth=False, with_gradient: bool = False):
        self.params = params
        lat = params.lattice
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != 2:
            raise InvalidArgumentError(f"points must have a trailing axis of length 2, got shape {pts.shape}")
        self.shape = pts.shape[:-1]
        pts = pts.reshape(-1, 2)
        self.points = pts
        self.reduced, self.shift = lat.reduce_to_cell(pts)
        self.with_gradient = with_gradient

        smooth = np.broadcast_to(np.asarray(smooth, dtype=bool), self.shape).reshape(-1)
        at_home = np.all(np.abs(self.shift) < 1e-12 * lat.L, axis=1)
        if np.any(smooth) and params.method is not GreenMethod.EWALD:
            raise InvalidArgumentError("the smooth part is only available with the ewald method")
        # Rows whose log singularity sits at the l = 0 image get the series treatment
        self._ein_rows = smooth & at_home
        self._log_rows = smooth & ~at_home

        self._cell_radius = float(np.max(np.linalg.norm(self.reduced, axis=1), initial=0.0))
        self._check_exclusion()

        if params.method is GreenMethod.EWALD:
            self._build_ewald()
        else:
            self._build_spectral_cutoff()

    # -- construction -----------------------------------------------------

    def _check_exclusion(self):
        lat = self.params.lattice
        ring = _lattice_points(lat.basis, 2.0 * lat.L, lat.cell_area / lat.L, 10)
        dist = np.linalg.norm(self.reduced[:, None, :] - ring[None, :, :], axis=2).min(axis=1)
        bad = (dist < self.params.exclusion_radius) & ~self._ein_rows
        if np.any(bad):
            x = self.points[np.argmax(bad)]
            raise SingularEvaluationError(
                f"point {x} lies within {self.params.exclusion_radius:.3e} of the source lattice"
            )

    def _build_ewald(self):
        p = self.params
        lat = p.lattice
        s = p.ewald_split
        z_cut = max(math.log(1.0 / p.target_tol) + 2.0, 4.0)
        self.error_estimate = math.exp(-z_cut) / (2.0 * math.pi * z_cut)

        r_cut = math.sqrt(z_cut) / s + self._cell_radius
        images = _lattice_points(lat.basis, r_cut, lat.cell_area / lat.L, Config.EWALD_MAX_INDEX)
        k_cut = 2.0 * s * math.sqrt(z_cut) + 2.0 * np.pi / lat.L
        dual = _lattice_points(lat.dual_basis, k_cut, lat.dual_cell_area / np.linalg.norm(lat.a1),
                               Config.EWALD_MAX_INDEX)
        if images is None or dual is None:
            raise ConvergenceError(
                f"ewald split {s:.3e} needs more than {Config.EWALD_MAX_INDEX} shells for tol {p.target_tol:.1e}",
                achieved=None,
            )
        self.images = images
        self.dual = dual

        diff = self.reduced[:, None, :] - images[None, :, :]
        rho2 = np.einsum("nlk,nlk->nl", diff, diff)
        z = s * s * rho2
        origin = np.argmin(np.linalg.norm(images, axis=1))

        with np.errstate(divide="ignore", invalid="ignore"):
            real = -exp1(np.where(z > 0, z, 1.0)) / (4.0 * np.pi)
        rows = np.flatnonzero(self._ein_rows)
        if len(rows):
            z0 = z[rows, origin]
            real[rows, origin] = -ein(z0) / (4.0 * np.pi) + np.euler_gamma / (4.0 * np.pi) + math.log(s) / (2.0 * np.pi)
        self._real = real

        if self.with_gradient:
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(rho2 > 0, np.exp(-z) / rho2, 0.0) / (2.0 * np.pi)
                if len(rows):
                    r0 = rho2[rows, origin]
                    scale[rows, origin] = np.where(r0 > 0, np.expm1(-z[rows, origin]) / np.where(r0 > 0, r0, 1.0), 0.0) / (2.0 * np.pi)
            self._real_grad = scale[:, :, None] * diff

        self._plane = np.exp(1j * self.reduced @ dual.T)

    def _build_spectral_cutoff(self):
        p = self.params
        lat = p.lattice
        self.images = np.zeros((0, 2))
        k_cut = p.cutoff_radius + 2.0 * np.pi / lat.L
        dual = _lattice_points(lat.dual_basis, k_cut, lat.dual_cell_area / np.linalg.norm(lat.a1), 10 ** 6)
        self.dual = dual
        self._plane = np.exp(1j * self.reduced @ dual.T)
        self.error_estimate = None

    # -- evaluation ---------------------------------------------------------

    def _reduced_alpha(self, alpha: np.ndarray) -> np.ndarray:
        lat = self.params.lattice
        alpha = np.asarray(alpha, dtype=float)
        if lat.dual_distance_to_origin(alpha) < 1e-12 * 2.0 * np.pi / lat.L:
            raise InvalidArgumentError(f"alpha = {alpha} is congruent to 0 modulo the dual lattice")
        return lat.reduce_dual(alpha)

    def _spectral_weights(self, k: np.ndarray, cutoff: Optional[float] = None) -> np.ndarray:
        k2 = np.einsum("qk,qk->q", k, k)
        if cutoff is None:
            s = self.params.ewald_split
            return np.exp(-k2 / (4.0 * s * s)) / k2
        return np.where(k2 <= cutoff * cutoff, 1.0 / k2, 0.0)

    def _check_spectral(self, full: np.ndarray, half: np.ndarray) -> None:
        estimate = float(np.max(np.abs(full - half), initial=0.0))
        self.error_estimate = estimate
        if estimate > self.params.target_tol:
            raise ConvergenceError(
                f"spectral cutoff {self.params.cutoff_radius:.3e} reaches only {estimate:.2e} "
                f"(target {self.params.target_tol:.1e}); use the ewald method",
                achieved=estimate,
            )

    def values(self, alpha: Optional[np.ndarray] = None) -> np.ndarray:
        p = self.params
        a = self._reduced_alpha(p.alpha if alpha is None else alpha)
        k = a[None, :] + self.dual
        bloch = np.exp(1j * self.reduced @ a) / p.lattice.cell_area

        if p.method is GreenMethod.EWALD:
            out = -bloch * (self._plane @ self._spectral_weights(k))
            out = out + self._real @ np.exp(1j * self.images @ a)
        else:
            out = -bloch * (self._plane @ self._spectral_weights(k, p.cutoff_radius))
            half = -bloch * (self._plane @ self._spectral_weights(k, p.cutoff_radius / 2.0))
            self._check_spectral(out, half)

        out = out * np.exp(1j * self.shift @ a)
        if np.any(self._log_rows):
            out[self._log_rows] -= np.log(np.linalg.norm(self.points[self._log_rows], axis=1)) / (2.0 * np.pi)
        return out.reshape(self.shape)

    def gradients(self, alpha: Optional[np.ndarray] = None) -> np.ndarray:
        if not self.with_gradient and self.params.method is GreenMethod.EWALD:
            raise InvalidArgumentError("table was built without gradient support")
        p = self.params
        a = self._reduced_alpha(p.alpha if alpha is None else alpha)
        k = a[None, :] + self.dual
        bloch = np.exp(1j * self.reduced @ a) / p.lattice.cell_area

        if p.method is GreenMethod.EWALD:
            w = self._spectral_weights(k)
            out = -bloch[:, None] * (self._plane @ (1j * w[:, None] * k))
            out = out + np.einsum("nlk,l->nk", self._real_grad, np.exp(1j * self.images @ a))
        else:
            w = self._spectral_weights(k, p.cutoff_radius)
            wh = self._spectral_weights(k, p.cutoff_radius / 2.0)
            out = -bloch[:, None] * (self._plane @ (1j * w[:, None] * k))
            half = -bloch[:, None] * (self._plane @ (1j * wh[:, None] * k))
            self._check_spectral(out, half)

        out = out * np.exp(1j * self.shift @ a)[:, None]
        if np.any(self._log_rows):
            x = self.points[self._log_rows]
            out[self._log_rows] -= x / np.einsum("nk,nk->n", x, x)[:, None] / (2.0 * np.pi)
        return out.reshape(self.shape + (2,))


def _as_points(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    return x, x.ndim == 1


def greens0(params: GreenParams, x: np.ndarray):
    """G(x) for one point or an array of points (..., 2)"""
    x, single = _as_points(x)
    out = GreenTable(params, x).values()
    return complex(out) if single else out


def grad_greens0(params: GreenParams, x: np.ndarray) -> np.ndarray:
    x, single = _as_points(x)
    if params.method is GreenMethod.SPECTRAL_CUTOFF and params.target_tol < 1e-6:
        warnings.warn("spectral gradients converge slowly; expect a convergence error below 1e-6")
    return GreenTable(params, x, with_gradient=True).gradients()


def greens0_smooth(params: GreenParams, x: np.ndarray):
    """G(x) - (1/2pi) log|x|, finite at x = 0"""
    x, single = _as_points(x)
    out = GreenTable(params, x, smooth=True).values()
    return complex(out) if single else out


def spectral_brute_force(params: GreenParams, x: np.ndarray, cutoff: float) -> np.ndarray:
    """Plain truncated dual sum, used as an independent reference"""
    lat = params.lattice
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = lat.reduce_dual(params.alpha)
    spacing = lat.dual_cell_area / np.linalg.norm(lat.a1)
    q = _lattice_points(lat.dual_basis, cutoff + 2.0 * np.pi / lat.L, spacing, 10 ** 6)
    k = a + q
    k2 = np.einsum("qk,qk->q", k, k)
    keep = k2 <= cutoff * cutoff
    k, k2 = k[keep], k2[keep]
    return -(np.exp(1j * x @ k.T) @ (1.0 / k2)) / lat.cell_area


__all__ = [
    "GreenMethod",
    "GreenParams",
    "GreenTable",
    "greens0",
    "grad_greens0",
    "greens0_smooth",
    "spectral_brute_force",
    "ein",
]
