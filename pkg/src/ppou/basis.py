"""Multivariate polynomial bases of fixed total degree."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

FAMILIES = ("monomial", "chebyshev")


def basis_size(latent_dim: int, degree: int) -> int:
    """Number of multi-indices with ``|alpha| <= degree`` in ``latent_dim`` variables."""
    if latent_dim < 1 or degree < 0:
        raise ValueError(f"need latent_dim >= 1 and degree >= 0, got {latent_dim}, {degree}")
    return comb(latent_dim + degree, degree)


def _compositions(total: int, parts: int):
    # descending lexicographic order, so x1 varies slowest within a degree
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def graded_lex_exponents(latent_dim: int, degree: int) -> np.ndarray:
    rows = [c for total in range(degree + 1) for c in _compositions(total, latent_dim)]
    return np.array(rows, dtype=np.int64).reshape(len(rows), latent_dim)


@dataclass(frozen=True)
class PolyBasis:
    """Polynomial basis descriptor.

    Entry ``k`` of an evaluation is ``prod_i b_{alpha_k,i}(x_i)`` where ``b_e`` is
    ``x**e`` (monomial) or the Chebyshev polynomial ``T_e`` (chebyshev).
    """

    latent_dim: int
    degree: int
    family: str = "chebyshev"
    exponent_table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}; expected one of {FAMILIES}")
        basis_size(self.latent_dim, self.degree)
        table = graded_lex_exponents(self.latent_dim, self.degree)
        table.setflags(write=False)
        object.__setattr__(self, "exponent_table", table)

    @property
    def size(self) -> int:
        return self.exponent_table.shape[0]

    def _check(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != self.latent_dim:
            raise ValueError(
                f"expected points with {self.latent_dim} columns, got shape {points.shape}"
            )
        return points

    def _univariate(self, points, stats=None):
        """Tables ``V[n, i, e] = b_e(points[n, i])`` and their derivatives."""
        n, dim = points.shape
        p = self.degree
        vals = np.empty((n, dim, p + 1))
        ders = np.empty((n, dim, p + 1))
        vals[..., 0] = 1.0
        ders[..., 0] = 0.0
        if p >= 1:
            vals[..., 1] = points
            ders[..., 1] = 1.0
        if self.family == "monomial":
            for e in range(2, p + 1):
                vals[..., e] = vals[..., e - 1] * points
                ders[..., e] = e * vals[..., e - 1]
        else:
            if stats is not None:
                stats["out_of_range"] = stats.get("out_of_range", 0) + int(
                    np.count_nonzero(np.abs(points) > 1.0)
                )
            for e in range(2, p + 1):
                vals[..., e] = 2.0 * points * vals[..., e - 1] - vals[..., e - 2]
                ders[..., e] = (
                    2.0 * vals[..., e - 1] + 2.0 * points * ders[..., e - 1] - ders[..., e - 2]
                )
        return vals, ders

    def design_matrix(self, points, stats=None) -> np.ndarray:
        """N x K matrix whose row ``n`` is the basis evaluated at ``points[n]``.

        ``stats``, when given, is a dict whose ``"out_of_range"`` entry counts
        Chebyshev coordinates outside ``[-1, 1]``.
        """
        points = self._check(points)
        vals, _ = self._univariate(points, stats)
        out = np.ones((points.shape[0], self.size))
        for i in range(self.latent_dim):
            out *= vals[:, i, self.exponent_table[:, i]]
        return out

    def design_jacobian(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Design matrix and its derivative ``D[n, k, i] = d p_k / d x_i`` at each point."""
        points = self._check(points)
        vals, ders = self._univariate(points)
        factors = [vals[:, i, self.exponent_table[:, i]] for i in range(self.latent_dim)]
        dfactors = [ders[:, i, self.exponent_table[:, i]] for i in range(self.latent_dim)]
        design = np.ones((points.shape[0], self.size))
        for f in factors:
            design *= f
        jac = np.empty((points.shape[0], self.size, self.latent_dim))
        for i in range(self.latent_dim):
            term = dfactors[i].copy()
            for l, f in enumerate(factors):
                if l != i:
                    term *= f
            jac[:, :, i] = term
        return design, jac

    def eval(self, point) -> np.ndarray:
        point = np.asarray(point, dtype=np.float64)
        if point.ndim != 1:
            raise ValueError(f"expected a vector, got shape {point.shape}")
        return self.design_matrix(point[None, :])[0]

    def to_dict(self) -> dict:
        return {"latent_dim": self.latent_dim, "degree": self.degree, "family": self.family}


def eval_basis(point, basis: PolyBasis) -> np.ndarray:
    return basis.eval(point)


def design_matrix(points, basis: PolyBasis, stats=None) -> np.ndarray:
    return basis.design_matrix(points, stats)
