"""Input validation helpers shared by the public API."""

from fractions import Fraction
from numbers import Real

import numpy as np

TOL = 1e-12


def check_distance_matrix(dist, tol=TOL):
    """Return `dist` as a read-only float array after checking metric axioms.

    Raises
    ------
    ValueError
        If the matrix is not square, not symmetric, has a nonzero diagonal,
        a nonpositive off-diagonal entry, or violates the triangle inequality
        by more than `tol`.
    """
    d = np.array(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("distance matrix has non-finite entries")
    if np.any(np.diag(d) != 0.0):
        raise ValueError("distance matrix must have a zero diagonal")
    if not np.array_equal(d, d.T):
        raise ValueError("distance matrix must be symmetric")
    n = d.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0.0):
        raise ValueError("distinct points must be at positive distance")
    # d[i,k] <= d[i,j] + d[j,k] for all triples, one pivot j at a time
    for j in range(n):
        excess = d - (d[:, j][:, None] + d[j, :][None, :])
        if excess.max() > tol:
            i, k = np.unravel_index(int(excess.argmax()), excess.shape)
            raise ValueError(
                f"triangle inequality violated at ({i}, {j}, {k}) by {excess[i, k]:.3g}"
            )
    d.setflags(write=False)
    return d


def check_permutation(assignment, n=None):
    a = tuple(int(v) for v in assignment)
    if n is not None and len(a) != n:
        raise ValueError(f"assignment has length {len(a)}, expected {n}")
    if sorted(a) != list(range(len(a))):
        raise ValueError("assignment is not a bijection")
    return a


def is_exact(weights):
    return all(isinstance(w, (Fraction, int)) and not isinstance(w, bool) for w in weights)


def check_weights(weights, tol=TOL):
    """Validate probability weights.

    Rational input (``Fraction``/``int``) is kept exact and must sum to one
    exactly; anything else is converted to float and checked within `tol`.
    """
    w = list(weights)
    if not w:
        raise ValueError("a measure needs at least one atom")
    if is_exact(w):
        w = [Fraction(v) for v in w]
        if any(v <= 0 for v in w):
            raise ValueError("atom weights must be positive")
        if sum(w) != 1:
            raise ValueError(f"weights sum to {sum(w)}, not 1")
        return np.array(w, dtype=object)
    arr = np.array([float(v) for v in w])
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("atom weights must be positive and finite")
    if abs(arr.sum() - 1.0) > tol:
        raise ValueError(f"weights sum to {arr.sum()!r}, not 1")
    return arr


def check_positive(name, value, strict=True):
    if not isinstance(value, Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be nonnegative, got {value!r}")
    return value
