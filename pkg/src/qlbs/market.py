"""Geometric-Brownian-motion market simulation and state transforms.

Stock paths are stepped with the exact lognormal update

    S_{t+1} = S_t * exp((mu - sigma^2/2) dt + sigma sqrt(dt) Z),   Z ~ N(0,1),

so the zero-volatility and risk-neutral sanity limits hold exactly rather
than to Euler-scheme accuracy.  Prices are mirrored into time-homogeneous
states

    X_t = -(mu - sigma^2/2) t + log S_t,

which is the coordinate all downstream regressions work in.  Per-step stock
increments use the forward-price convention dS_t = S_{t+1} - S_t / gamma
with gamma = exp(-r dt); this is what makes per-step hedge gains telescope
into the discounted replicating-portfolio identity used by the solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class MarketParams:
    """Market and discretization parameters.

    Attributes
    ----------
    s0 : float
        Initial stock price (currency).
    mu : float
        Annualized drift.
    sigma : float
        Annualized volatility; must be positive.
    r : float
        Annualized risk-free rate.
    t_maturity : float
        Horizon in years.
    dt : float
        Step size in years; t_maturity must be an integer multiple.
    """

    s0: float
    mu: float
    sigma: float
    r: float
    t_maturity: float
    dt: float

    def __post_init__(self):
        if self.s0 <= 0:
            raise ValueError(f"s0 must be positive, got {self.s0}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_maturity <= 0:
            raise ValueError(f"t_maturity must be positive, got {self.t_maturity}")
        n = round(self.t_maturity / self.dt)
        if n < 1 or abs(n * self.dt - self.t_maturity) > 1e-12:
            raise ValueError(
                f"t_maturity={self.t_maturity} is not an integer number of steps of dt={self.dt}"
            )
        if not 0 < self.gamma <= 1:
            raise ValueError(f"discount per step must lie in (0, 1], got {self.gamma}")

    @property
    def n_steps(self) -> int:
        return round(self.t_maturity / self.dt)

    @property
    def gamma(self) -> float:
        """One-step discount factor exp(-r dt)."""
        return math.exp(-self.r * self.dt)


@dataclass(frozen=True)
class PathSet:
    """Simulated stock prices and their state-space mirror.

    ``s`` and ``x`` are (n_paths, n_steps + 1) arrays; column ``t`` holds the
    values at step ``t`` (column 0 is the constant initial price).  Immutable
    after construction and safe to share across threads.
    """

    s: np.ndarray
    x: np.ndarray
    seed: int | None
    params: MarketParams

    def __post_init__(self):
        self.s.setflags(write=False)
        self.x.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class StepIncrements:
    """Forward-price stock increments and their cross-path demeaned version.

    ``ds[k, t] = s[k, t+1] - s[k, t] / gamma``; ``ds_hat`` subtracts the
    cross-path mean of each column.
    """

    ds: np.ndarray
    ds_hat: np.ndarray


def to_state(s_value, t, params: MarketParams):
    """Map price(s) at step index ``t`` to the time-homogeneous state.

    X = -(mu - sigma^2/2) * (t * dt) + log S.  Accepts scalars or arrays.
    """
    s_value = np.asarray(s_value, dtype=float)
    if np.any(s_value <= 0):
        raise ValueError("prices must be positive to map to states")
    drift = params.mu - 0.5 * params.sigma**2
    out = -drift * (t * params.dt) + np.log(s_value)
    return float(out) if out.ndim == 0 else out


def from_state(x_value, t, params: MarketParams):
    """Inverse of :func:`to_state`: S = exp(X + (mu - sigma^2/2) * t * dt)."""
    x_value = np.asarray(x_value, dtype=float)
    drift = params.mu - 0.5 * params.sigma**2
    out = np.exp(x_value + drift * (t * params.dt))
    return float(out) if out.ndim == 0 else out


def simulate_paths(params: MarketParams, n_paths: int, seed: int) -> PathSet:
    """Simulate GBM paths with exact lognormal stepping.

    Parameters
    ----------
    params : MarketParams
    n_paths : int
        Number of Monte Carlo paths, at least 2.
    seed : int
        Seed for the counter-based Philox generator.  The normal draw for
        (path k, step t) is a pure function of (seed, k, t): the whole
        (n_paths, n_steps) block is generated in one fixed-layout call, so
        results do not depend on scheduling or thread count.

    Returns
    -------
    PathSet
        Prices ``s`` and states ``x``, both (n_paths, n_steps + 1).
    """
    if n_paths < 2:
        raise ValueError(f"n_paths must be at least 2, got {n_paths}")
    n_steps = params.n_steps
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal((n_paths, n_steps))

    log_drift = (params.mu - 0.5 * params.sigma**2) * params.dt
    log_diffusion = params.sigma * math.sqrt(params.dt)
    log_s = np.empty((n_paths, n_steps + 1))
    log_s[:, 0] = math.log(params.s0)
    np.cumsum(log_drift + log_diffusion * z, axis=1, out=log_s[:, 1:])
    log_s[:, 1:] += math.log(params.s0)

    s = np.exp(log_s)
    s[:, 0] = params.s0
    x = np.empty_like(s)
    for t in range(n_steps + 1):
        x[:, t] = to_state(s[:, t], t, params)
    return PathSet(s=s, x=x, seed=seed, params=params)


def demean(values: np.ndarray) -> np.ndarray:
    """Subtract the cross-path sample mean from a vector of per-path values."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("demean expects a 1-D vector of per-path values")
    if values.size < 2:
        raise ValueError("need at least 2 paths to demean")
    return values - values.mean()


def increments(paths: PathSet) -> StepIncrements:
    """Per-step forward-price increments dS and their demeaned columns.

    ``ds[:, t] = s[:, t+1] - s[:, t] / gamma`` and ``ds_hat`` removes the
    cross-path mean at each t, so every ``ds_hat`` column sums to ~0.
    """
    gamma = paths.params.gamma
    ds = paths.s[:, 1:] - paths.s[:, :-1] / gamma
    ds_hat = ds - ds.mean(axis=0, keepdims=True)
    return StepIncrements(ds=ds, ds_hat=ds_hat)


def increments_from_prices(s: np.ndarray, gamma: float) -> StepIncrements:
    """Same as :func:`increments` but for a bare price matrix."""
    ds = s[:, 1:] - s[:, :-1] / gamma
    ds_hat = ds - ds.mean(axis=0, keepdims=True)
    return StepIncrements(ds=ds, ds_hat=ds_hat)


def paths_to_csv(paths: PathSet, out_path) -> None:
    """Write a PathSet as CSV with header ``path,step,s,x``.

    Prices and states keep full double precision (17 significant digits).
    """
    n_paths, n_cols = paths.s.shape
    idx_path = np.repeat(np.arange(n_paths), n_cols)
    idx_step = np.tile(np.arange(n_cols), n_paths)
    df = pd.DataFrame(
        {
            "path": idx_path,
            "step": idx_step,
            "s": paths.s.ravel(),
            "x": paths.x.ravel(),
        }
    )
    df.to_csv(out_path, index=False, float_format="%.17g")


def paths_from_csv(in_path, params: MarketParams, seed: int | None = None) -> PathSet:
    """Read a ``path,step,s,x`` CSV back into a PathSet.

    The file does not carry market parameters, so they must be supplied;
    consistency of the stored states with the price/state transform is
    verified to 1e-9 relative.
    """
    df = pd.read_csv(in_path)
    required = {"path", "step", "s", "x"}
    if not required.issubset(df.columns):
        raise ValueError(f"path CSV must have columns {sorted(required)}")
    n_paths = int(df["path"].max()) + 1
    n_cols = int(df["step"].max()) + 1
    s = np.full((n_paths, n_cols), np.nan)
    x = np.full((n_paths, n_cols), np.nan)
    s[df["path"].to_numpy(), df["step"].to_numpy()] = df["s"].to_numpy()
    x[df["path"].to_numpy(), df["step"].to_numpy()] = df["x"].to_numpy()
    if np.isnan(s).any() or np.isnan(x).any():
        raise ValueError("path CSV has missing (path, step) entries")
    for t in range(n_cols):
        expect = to_state(s[:, t], t, params)
        if not np.allclose(x[:, t], expect, rtol=1e-9, atol=1e-9):
            raise ValueError(f"states in CSV are inconsistent with prices at step {t}")
    return PathSet(s=s, x=x, seed=seed, params=params)
