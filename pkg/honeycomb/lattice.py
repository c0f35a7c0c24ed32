"""Triangular lattice, its dual, the honeycomb cell and its point symmetries."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import InvalidArgumentError

SQRT3 = math.sqrt(3.0)

# |Y*| = (2 pi / L)^2 * 2 sqrt(3) / 3 = 1
DEFAULT_LATTICE_CONSTANT = 2.0 * math.pi * math.sqrt(2.0 * SQRT3 / 3.0)

# Clockwise rotation by 2 pi / 3
ROTATION = np.array([[-0.5, SQRT3 / 2.0], [-SQRT3 / 2.0, -0.5]])

TAU = np.exp(2j * np.pi / 3.0)


@dataclass(frozen=True)
class Lattice:
    """Equilateral triangular lattice with the honeycomb sub-cell centers"""

    L: float
    l1: np.ndarray
    l2: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    cell_area: float
    dual_cell_area: float

    @property
    def basis(self) -> np.ndarray:
        """Rows l1, l2"""
        return np.stack([self.l1, self.l2])

    @property
    def dual_basis(self) -> np.ndarray:
        """Rows a1, a2"""
        return np.stack([self.a1, self.a2])

    @property
    def centers(self) -> np.ndarray:
        return np.stack([self.x1, self.x2])

    @property
    def neighbour_distance(self) -> float:
        return self.L / SQRT3

    def to_fractional(self, points: np.ndarray) -> np.ndarray:
        """Coordinates (s, t) with x = s l1 + t l2"""
        return np.asarray(points, dtype=float) @ self.dual_basis.T / (2.0 * np.pi)

    def from_fractional(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=float) @ self.basis

    def lattice_vector(self, m, n) -> np.ndarray:
        return np.multiply.outer(m, self.l1) + np.multiply.outer(n, self.l2)

    def reduce_to_cell(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Split points into (reduced, shift) with reduced in the centered cell."""
        frac = self.to_fractional(points)
        shift = self.from_fractional(np.round(frac))
        return np.asarray(points, dtype=float) - shift, shift

    def reduce_dual(self, alpha: np.ndarray) -> np.ndarray:
        """Representative of alpha modulo the dual lattice, in the centered Y*"""
        alpha = np.asarray(alpha, dtype=float)
        frac = alpha @ self.basis.T / (2.0 * np.pi)
        return alpha - np.round(frac) @ self.dual_basis

    def dual_distance_to_origin(self, alpha: np.ndarray) -> float:
        """Distance from alpha to the nearest dual lattice point"""
        reduced = self.reduce_dual(alpha)
        best = np.inf
        for m in (-1, 0, 1):
            for n in (-1, 0, 1):
                q = m * self.a1 + n * self.a2
                best = min(best, float(np.linalg.norm(reduced + q)))
        return best

    def in_left_half(self, points: np.ndarray) -> np.ndarray:
        """Membership of Y1 (the half of the cell left of x0)"""
        return np.asarray(points, dtype=float)[..., 0] < self.x0[0]

    def dual_grid(self, n: int) -> np.ndarray:
        """Cell-centered n x n grid of Y*, never hitting alpha = 0"""
        s = (np.arange(n) + 0.5) / n
        S, T = np.meshgrid(s, s, indexing="ij")
        return np.outer(S.ravel(), self.a1) + np.outer(T.ravel(), self.a2)


def build_lattice(L: Optional[float] = None) -> Lattice:
    """Build the lattice; L defaults to the normalization |Y*| = 1."""
    if L is None:
        L = DEFAULT_LATTICE_CONSTANT
    if not np.isfinite(L) or L <= 0:
        raise InvalidArgumentError(f"lattice constant must be positive, got {L}")

    l1 = L * np.array([SQRT3 / 2.0, 0.5])
    l2 = L * np.array([SQRT3 / 2.0, -0.5])
    a1 = (2.0 * np.pi / L) * np.array([SQRT3 / 3.0, 1.0])
    a2 = (2.0 * np.pi / L) * np.array([SQRT3 / 3.0, -1.0])

    cell_area = abs(float(np.linalg.det(np.stack([l1, l2]))))
    dual_cell_area = abs(float(np.linalg.det(np.stack([a1, a2]))))

    return Lattice(
        L=float(L),
        l1=l1,
        l2=l2,
        a1=a1,
        a2=a2,
        x0=(l1 + l2) / 2.0,
        x1=(l1 + l2) / 3.0,
        x2=2.0 * (l1 + l2) / 3.0,
        cell_area=cell_area,
        dual_cell_area=dual_cell_area,
    )


def dirac_points(lat: Lattice) -> Tuple[np.ndarray, np.ndarray]:
    return (2.0 * lat.a1 + lat.a2) / 3.0, (lat.a1 + 2.0 * lat.a2) / 3.0


def high_symmetry_points(lat: Lattice) -> Dict[str, np.ndarray]:
    alpha_star, alpha_star_2 = dirac_points(lat)
    return {
        "Gamma": np.zeros(2),
        "K": alpha_star,
        "K'": alpha_star_2,
        "M": (lat.a1 + lat.a2) / 2.0,
    }


def band_path(lat: Lattice, points_per_segment: int) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Gamma -> M -> K -> Gamma, sampled at segment midpoints so Gamma itself is skipped.

    Returns (alphas, cumulative path length, segment labels).
    """
    hs = high_symmetry_points(lat)
    corners = [("Gamma", "M"), ("M", "K"), ("K", "Gamma")]
    t = (np.arange(points_per_segment) + 0.5) / points_per_segment
    alphas, labels, lengths = [], [], []
    offset = 0.0
    for start, stop in corners:
        a, b = hs[start], hs[stop]
        seg = a + np.outer(t, b - a)
        alphas.append(seg)
        lengths.append(offset + t * np.linalg.norm(b - a))
        labels.extend([f"{start}-{stop}"] * points_per_segment)
        offset += float(np.linalg.norm(b - a))
    return np.vstack(alphas), np.concatenate(lengths), labels


class SymmetryKind(str, Enum):
    R = "R"
    R0 = "R0"
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"


@dataclass(frozen=True)
class SymmetryMap:
    """Affine map x -> matrix @ x + offset"""

    kind: SymmetryKind
    matrix: np.ndarray
    offset: np.ndarray

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return apply_symmetry(self, points)


def symmetry_map(kind, lat: Lattice) -> SymmetryMap:
    kind = SymmetryKind(kind)
    if kind is SymmetryKind.R:
        return SymmetryMap(kind, ROTATION, np.zeros(2))
    if kind is SymmetryKind.R0:
        return SymmetryMap(kind, -np.eye(2), 2.0 * lat.x0)
    if kind is SymmetryKind.R1:
        return SymmetryMap(kind, ROTATION, lat.l1.copy())
    if kind is SymmetryKind.R2:
        return SymmetryMap(kind, ROTATION, 2.0 * lat.l1)
    # reflection across the vertical line through x0
    return SymmetryMap(kind, np.diag([-1.0, 1.0]), np.array([2.0 * lat.x0[0], 0.0]))


def apply_symmetry(sym: SymmetryMap, p: np.ndarray) -> np.ndarray:
    return np.asarray(p, dtype=float) @ sym.matrix.T + sym.offset
