"""Ridge-regularized symmetric solves shared by all fitting steps."""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


class NumericalError(RuntimeError):
    """A regression system stayed singular even after regularization."""


def solve_regularized(mat: np.ndarray, rhs: np.ndarray, reg: float, context: str = "") -> np.ndarray:
    """Solve (mat + reg*I) z = rhs by Cholesky factorization.

    ``mat`` is expected symmetric positive semi-definite (a Gram matrix), so
    the ridge term makes it positive definite; failure to factor means the
    system is numerically unusable and raises :class:`NumericalError` with a
    condition-number diagnostic.
    """
    a = mat + reg * np.eye(mat.shape[0])
    try:
        return cho_solve(cho_factor(a), rhs)
    except (LinAlgError, ValueError) as exc:
        cond = float(np.linalg.cond(a))
        where = f" in {context}" if context else ""
        raise NumericalError(
            f"singular regression system{where}: condition number {cond:.3e} "
            f"after ridge regularization {reg:g}"
        ) from exc


def ridge_fit(design: np.ndarray, targets: np.ndarray, reg: float, context: str = "") -> np.ndarray:
    """Coefficients of the ridge regression design @ beta ~= targets."""
    gram = design.T @ design
    moment = design.T @ targets
    return solve_regularized(gram, moment, reg, context)
