"""Univariate B-spline bases and their tensor products.

Conventions used throughout the package:

* Knot vectors are clamped (open-uniform): the boundary knots are repeated
  ``degree + 1`` times, so the basis spans constants on the closed domain and
  each row of a basis matrix sums to one.
* Points exactly at the right endpoint evaluate through the last interval.
* Coefficient matrices ``theta`` of shape ``(p1, p2)`` are vectorized
  column-major (Fortran order), so ``vec(L @ eta @ G.T) = kron(G, L) @ vec(eta)``
  and the evaluation row matching ``vec(theta)`` is ``kron(b2_row, b1_row)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

__all__ = ["BasisConfig", "build_basis", "tensor_row", "tensor_design", "eval_surface"]


@dataclass(frozen=True)
class BasisConfig:
    """Specification of a univariate B-spline basis.

    Parameters
    ----------
    degree : int
        Polynomial degree (>= 0).
    interior_knots : tuple of float
        Nondecreasing knots strictly inside the domain; repetitions allowed.
    domain : tuple of float
        Closed interval ``(lo, hi)`` with ``lo < hi``.
    """

    degree: int
    interior_knots: tuple[float, ...]
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "interior_knots", tuple(float(k) for k in self.interior_knots))
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        lo, hi = self.domain
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if not lo < hi:
            raise ValueError(f"domain must satisfy lo < hi, got [{lo}, {hi}]")
        knots = np.asarray(self.interior_knots, dtype=float)
        if knots.size and np.any(np.diff(knots) < 0):
            raise ValueError("interior knots must be nondecreasing")
        if knots.size and (knots[0] <= lo or knots[-1] >= hi):
            raise ValueError("interior knots must lie strictly inside the domain")

    @property
    def dim(self) -> int:
        """Basis dimension: number of interior knots + degree + 1."""
        return len(self.interior_knots) + self.degree + 1

    def knot_vector(self) -> np.ndarray:
        """Full clamped knot vector with boundary multiplicity degree + 1."""
        lo, hi = self.domain
        return np.concatenate(
            [
                np.full(self.degree + 1, lo),
                np.asarray(self.interior_knots, dtype=float),
                np.full(self.degree + 1, hi),
            ]
        )


def build_basis(config: BasisConfig, points) -> np.ndarray:
    """Evaluate every basis function of ``config`` at ``points``.

    Returns a dense matrix of shape ``(len(points), config.dim)``.  Rows are
    nonnegative and sum to one (partition of unity on the clamped domain).

    Raises
    ------
    ValueError
        If ``points`` is empty or any point lies outside the domain.
    """
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ValueError("points must be nonempty")
    lo, hi = config.domain
    if np.any(pts < lo) or np.any(pts > hi):
        bad = pts[(pts < lo) | (pts > hi)][0]
        raise ValueError(f"point {bad} outside basis domain [{lo}, {hi}]")
    knots = config.knot_vector()
    return BSpline.design_matrix(pts, knots, config.degree).toarray()


def tensor_row(b1_row: np.ndarray, b2_row: np.ndarray) -> np.ndarray:
    """Tensor-product evaluation row for one ``(s, t)`` pair.

    With column-major vectorization of a ``(p1, p2)`` coefficient matrix the
    matching row is ``kron(b2_row, b1_row)``: entry ``l * p1 + m`` holds
    ``b2_row[l] * b1_row[m]``.
    """
    b1_row = np.asarray(b1_row, dtype=float)
    b2_row = np.asarray(b2_row, dtype=float)
    return np.kron(b2_row, b1_row)


def tensor_design(B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
    """Stack tensor rows for the full grid, s-major (t varies fastest).

    Row ``i_s * n_t + i_t`` equals ``tensor_row(B1[i_s], B2[i_t])``, i.e. the
    row ordering matches C-order flattening of an ``(n_s, n_t)`` surface.
    Output shape ``(n_s * n_t, p1 * p2)``.
    """
    n_s, p1 = B1.shape
    n_t, p2 = B2.shape
    out = np.einsum("sm,tl->stlm", B1, B2)
    return out.reshape(n_s * n_t, p1 * p2)


def eval_surface(theta: np.ndarray, B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
    """Evaluate the tensor expansion ``B1 @ theta @ B2.T`` on the grid.

    ``theta`` has shape ``(p1, p2)``; the result has shape ``(n_s, n_t)``
    with entry ``(j, k) = B1[j] @ theta @ B2[k]``.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (B1.shape[1], B2.shape[1]):
        raise ValueError(
            f"theta shape {theta.shape} does not match basis dims "
            f"({B1.shape[1]}, {B2.shape[1]})"
        )
    return B1 @ theta @ B2.T
