"""Regularized least-squares decoders and sampling helpers."""

from __future__ import annotations

import numpy as np
import scipy.linalg


class DecoderSolveError(ArithmeticError):
    pass


def solve_decoders(activities, targets, reg: float = 0.1) -> np.ndarray:
    """Solve ``(A^T A + m sigma^2 I) D = A^T Y`` with ``sigma = reg * max|A|``.

    ``activities`` is (m_points, n_neurons), ``targets`` (m_points, d); the
    result is (n_neurons, d).
    """
    A = np.asarray(activities, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if A.ndim != 2 or Y.shape[0] != A.shape[0] or A.shape[0] < 1:
        raise ValueError(f"activities {A.shape} and targets {Y.shape} do not align")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Y))):
        raise ValueError("activities and targets must be finite")
    m, n = A.shape
    sigma = reg * np.abs(A).max() if A.size else 0.0
    G = A.T @ A + m * sigma**2 * np.eye(n)
    rhs = A.T @ Y
    try:
        return scipy.linalg.solve(G, rhs, assume_a="sym" if reg == 0 else "pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise DecoderSolveError(f"decoder system is singular: {e}") from e
    except scipy.linalg.LinAlgWarning as e:  # pragma: no cover - only under warnings-as-errors
        raise DecoderSolveError(str(e)) from e


def sample_hypersphere_surface(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sample_ball(rng: np.random.Generator, n: int, d: int, radius: float = 1.0) -> np.ndarray:
    directions = sample_hypersphere_surface(rng, n, d)
    r = rng.uniform(0, 1, size=(n, 1)) ** (1.0 / d)
    return radius * r * directions
