"""Sphere and subspace projection primitives.

Everything downstream (loss heads, scoring backend) is built on three
operations: projecting a vector onto the unit sphere, projecting it onto
the span of a small set of basis rows, and the cosine between a vector
and its subspace projection.  All functions are pure and operate on
float64 numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidDimsError,
    RankDeficientError,
    ZeroVectorError,
)

# Norms at or below this threshold are treated as zero vectors.
EPS_NORM = 1e-12


def _as_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ZeroVectorError("vector contains non-finite entries")
    return x


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal rows spanning a J-dimensional subspace of R^D, J < D.

    Instances are produced by :func:`orthonormalize` or :func:`random_basis`;
    the row matrix is frozen (read-only) after construction.
    """

    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise InvalidDimsError(f"basis rows must be a 2-D matrix, got shape {rows.shape}")
        j, d = rows.shape
        if j >= d:
            raise InvalidDimsError(f"subspace dimension {j} must be < ambient dimension {d}")
        gram = rows @ rows.T
        if not np.allclose(gram, np.eye(j), atol=1e-6):
            raise RankDeficientError("basis rows are not pairwise orthonormal within 1e-6")
        rows = rows.copy()
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def subspace_dim(self) -> int:
        return self.rows.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.rows.shape[1]


def _basis_rows(basis) -> np.ndarray:
    """Accept a SubspaceBasis or a plain (J, D) row matrix."""
    if isinstance(basis, SubspaceBasis):
        return basis.rows
    rows = np.asarray(basis, dtype=np.float64)
    if rows.ndim != 2:
        raise DimensionMismatchError(f"basis rows must be 2-D, got shape {rows.shape}")
    return rows


def sphere_project(x) -> np.ndarray:
    """Project x onto the unit sphere: x / ||x||.

    Raises ZeroVectorError when ||x|| <= EPS_NORM.
    """
    x = _as_vector(x)
    norm = float(np.linalg.norm(x))
    if norm <= EPS_NORM:
        raise ZeroVectorError("cannot sphere-project a (near-)zero vector")
    return x / norm


def span_project(x, basis) -> np.ndarray:
    """Project x onto the row span of the basis: sum_j <x, c_j> c_j.

    For orthonormal rows this is the exact orthogonal projection; the same
    linear formula is also used for the raw (merely unit-norm) center
    variant, where it is only approximately a projection.
    """
    rows = _basis_rows(basis)
    x = _as_vector(x)
    if x.shape[0] != rows.shape[1]:
        raise DimensionMismatchError(
            f"vector dimension {x.shape[0]} != basis ambient dimension {rows.shape[1]}"
        )
    return rows.T @ (rows @ x)


def subspace_cosine(x, basis) -> float:
    """Cosine between the sphere projections of x and of its span projection.

    Computed as <x_hat, p> / ||p|| with p = span_project(x_hat), which for an
    orthonormal basis reduces to ||p||.  Returns 0.0 by convention when the
    span projection is numerically zero (the distance term then attains its
    maximum of 2), and is clamped to [0, 1].
    """
    xhat = sphere_project(x)
    p = span_project(xhat, basis)
    pnorm = float(np.linalg.norm(p))
    if pnorm <= EPS_NORM:
        return 0.0
    cos = float(np.dot(xhat, p)) / pnorm
    return min(max(cos, 0.0), 1.0)


def orthonormalize(raw_rows) -> SubspaceBasis:
    """Build an orthonormal basis with the same row span as ``raw_rows``.

    QR-based; the sign of each basis row is fixed so that an already
    orthonormal input is returned unchanged.  Raises RankDeficientError if
    the rows are linearly dependent and InvalidDimsError if J >= D.
    """
    rows = np.asarray(raw_rows, dtype=np.float64)
    if rows.ndim != 2:
        raise InvalidDimsError(f"expected a 2-D matrix, got shape {rows.shape}")
    j, d = rows.shape
    if j >= d:
        raise InvalidDimsError(f"need J < D, got J={j}, D={d}")
    q, r = np.linalg.qr(rows.T)
    diag = np.diag(r)
    if np.any(np.abs(diag) <= max(j, d) * np.finfo(np.float64).eps * max(np.abs(diag).max(), 1.0)):
        raise RankDeficientError(f"numerical rank < {j}")
    q = q * np.sign(diag)
    return SubspaceBasis(q.T)


def glorot_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform draw for a (fan_out, fan_in) matrix."""
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def random_basis(subspace_dim: int, ambient_dim: int, seed: int) -> SubspaceBasis:
    """Deterministic random orthonormal basis: Glorot draw, then orthonormalize."""
    if subspace_dim >= ambient_dim:
        raise InvalidDimsError(f"need J < D, got J={subspace_dim}, D={ambient_dim}")
    if subspace_dim < 1:
        raise InvalidDimsError("subspace dimension must be >= 1")
    rng = np.random.default_rng(seed)
    raw = glorot_uniform((subspace_dim, ambient_dim), rng)
    return orthonormalize(raw)
