"""Cubic B-spline basis over the observed state range.

One basis is built per run, spanning the smallest to largest state seen in
the dataset, with a clamped uniform knot vector.  Inside the domain the
functions are nonnegative and sum to one; queries outside the domain are
clamped to the nearest endpoint instead of extrapolating, which keeps the
downstream regressions from oscillating on stray states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class BasisSet:
    """Clamped B-spline basis: ``m`` functions of degree ``degree``.

    ``knots`` has length m + degree + 1 with the first and last knot each
    repeated degree + 1 times; ``domain`` is (x_min, x_max).
    """

    m: int
    degree: int
    knots: np.ndarray
    domain: tuple[float, float]

    def __post_init__(self):
        self.knots.setflags(write=False)


def build_basis(x_min: float, x_max: float, m: int, degree: int = 3) -> BasisSet:
    """Build ``m`` B-spline basis functions of ``degree`` on [x_min, x_max].

    The knot vector is clamped (endpoints repeated degree + 1 times) with
    m - degree uniform interior spans.  Requires x_max > x_min and
    m >= degree + 1.
    """
    if not np.isfinite(x_min) or not np.isfinite(x_max) or x_max <= x_min:
        raise ValueError(f"degenerate state range [{x_min}, {x_max}]")
    if degree < 0:
        raise ValueError(f"degree must be nonnegative, got {degree}")
    if m < degree + 1:
        raise ValueError(f"need at least degree+1={degree + 1} basis functions, got {m}")
    breakpoints = np.linspace(x_min, x_max, m - degree + 1)
    knots = np.concatenate(
        [np.full(degree, x_min), breakpoints, np.full(degree, x_max)]
    )
    return BasisSet(m=m, degree=degree, knots=knots, domain=(float(x_min), float(x_max)))


def basis_for_states(x: np.ndarray, m: int, degree: int = 3) -> BasisSet:
    """Convenience: basis spanning the min and max of the observed states."""
    x = np.asarray(x, dtype=float)
    return build_basis(float(x.min()), float(x.max()), m, degree)


def evaluate_matrix(basis: BasisSet, x) -> np.ndarray:
    """Evaluate all basis functions at each query point.

    Points outside the domain are clamped to the nearest endpoint first.
    Returns a dense (len(x), m) array; rows are nonnegative and sum to 1.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("basis evaluation requires finite states")
    lo, hi = basis.domain
    xc = np.clip(x, lo, hi)
    dm = BSpline.design_matrix(xc, basis.knots, basis.degree)
    return dm.toarray()


def evaluate(basis: BasisSet, x: float) -> np.ndarray:
    """Basis values at a single state; vector of length m."""
    return evaluate_matrix(basis, x)[0]


def basis_to_json(basis: BasisSet) -> str:
    """Serialize degree, knots and domain for experiment reproducibility."""
    return json.dumps(
        {
            "m": basis.m,
            "degree": basis.degree,
            "knots": basis.knots.tolist(),
            "domain": list(basis.domain),
        }
    )


def basis_from_json(payload: str) -> BasisSet:
    d = json.loads(payload)
    return BasisSet(
        m=int(d["m"]),
        degree=int(d["degree"]),
        knots=np.asarray(d["knots"], dtype=float),
        domain=(float(d["domain"][0]), float(d["domain"][1])),
    )
