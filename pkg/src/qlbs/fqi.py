"""Batch, off-policy Fitted Q Iteration on (state, action, reward) tuples.

The Q-function is quadratic in the action, so it is parametrized per step
by a 3 x m matrix ``W_t`` acting between the action-power vector
(1, a, a^2/2) and the state basis values:

    Q_t(x, a) = (1, a, a^2/2) W_t Phi(x).

Flattening ``W_t`` column by column turns this into a linear model in the
3m-dimensional joint feature ``Psi(x, a)``, fitted backward in time by the
ridge-regularized normal equations ``S vec(W_t) = M`` with targets
``R_t + gamma Q_{t+1}(X_{t+1}, a*_{t+1})``.

The next-step action inside the target is never the argmax of the fitted
quadratic on the same data (that argmax is upward-biased by Jensen's
inequality); it comes from the analytic hedge formula instead, with the
portfolio reconstructed by rolling the observed actions back from the
terminal payoff.  The one place the fitted quadratic is maximized directly
is the time-0 price read-out, where ``W_0`` is fitted before the read-out
and the maximizer is confined to the action range seen in the data.

Hedge data carries a handful of pathological actions per step (the hedge
regression is noisy at sparsely visited states, and action noise multiplies
it).  Those rows enter the quadratic features as a^2, so a few of them can
carry essentially all of the curvature-direction leverage and poison the
fitted Q far away from them, which then feeds on itself through the
backward targets.  The fit therefore drops rows whose action magnitude
exceeds a large multiple of the per-step typical scale and keeps chain
actions inside the retained band; the normal equations are unchanged on
the retained sample, and sane datasets (including tiny test instances and
any on-policy action column without outliers) are not trimmed at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .basis import BasisSet, evaluate_matrix
from .dp import (
    DEFAULT_REG,
    DPSolution,
    RiskParams,
    _action_coeffs,
    replay_portfolio,
    replay_rewards,
    terminal_q,
)
from .linalg import NumericalError, solve_regularized
from .market import MarketParams, PathSet

CONCAVITY_WARN_FRACTION = 1e-3
# actions beyond this multiple of the per-step 99th-percentile magnitude are
# excluded from the regression sample (leverage guard, see module docstring)
ACTION_OUTLIER_MULT = 3.0


@dataclass(frozen=True)
class HedgeDataset:
    """Observed hedging trajectories.

    ``x`` is (n_paths, n_steps + 1) states, ``a`` (n_paths, n_steps)
    actions, ``r`` (n_paths, n_steps) rewards or None when rewards were not
    recorded, and ``terminal_payoff`` the per-path option payoff the
    portfolio must deliver at maturity.
    """

    x: np.ndarray
    a: np.ndarray
    r: np.ndarray | None
    terminal_payoff: np.ndarray

    def __post_init__(self):
        n_paths, n_cols = self.x.shape
        if self.a.shape != (n_paths, n_cols - 1):
            raise ValueError("actions must be (n_paths, n_steps)")
        if self.r is not None and self.r.shape != self.a.shape:
            raise ValueError("rewards must match the action shape")
        if self.terminal_payoff.shape != (n_paths,):
            raise ValueError("terminal payoff must have one value per path")

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def n_steps(self) -> int:
        return self.x.shape[1] - 1

    def without_rewards(self) -> "HedgeDataset":
        return HedgeDataset(x=self.x, a=self.a, r=None, terminal_payoff=self.terminal_payoff)


@dataclass(frozen=True)
class FQISolution:
    """Fitted Q iteration output.

    ``w`` is (n_steps, 3, m); ``a_star_fqi`` the analytic-formula action
    chain used in the regression targets; ``concavity_violations`` counts
    dataset states where the fitted action-quadratic curvature came out
    nonnegative, with ``concavity_warning`` set when that exceeds 0.1% of
    the evaluation points and ``readout_convex`` when it happened at the
    time-0 read-out itself (the price then comes from the better endpoint
    of the observed action range instead of the vertex).
    """

    w: np.ndarray
    price: float
    a_star_fqi: np.ndarray
    concavity_violations: int
    concavity_warning: bool
    readout_convex: bool


def psi_features(phi_x: np.ndarray, a: float) -> np.ndarray:
    """Joint state-action feature vector of length 3m.

    Concatenates the columns of the outer product of (1, a, a^2/2) with the
    basis values: entry 3*j + i holds (1, a, a^2/2)[i] * phi_x[j].  The
    inner product of vec(W) (same column order) with this vector equals
    (1, a, a^2/2) @ W @ phi_x.
    """
    phi_x = np.asarray(phi_x, dtype=float)
    powers = np.array([1.0, a, 0.5 * a**2])
    return np.outer(powers, phi_x).ravel(order="F")


def _psi_matrix(phi_mat: np.ndarray, a_t: np.ndarray) -> np.ndarray:
    # rows: psi_features for each path, same 3*j + i layout
    powers = np.stack([np.ones_like(a_t), a_t, 0.5 * a_t**2], axis=1)
    return (phi_mat[:, :, None] * powers[:, None, :]).reshape(phi_mat.shape[0], -1)


def _quadratic_parts(phi_mat: np.ndarray, w_t: np.ndarray) -> np.ndarray:
    # (n_paths, 3) rows hold (U0, U1, U2): Q(x, a) = U0 + a U1 + a^2/2 U2
    return phi_mat @ w_t.T


def quadratic_value(u: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Evaluate the action-quadratic Q given its (U0, U1, U2) parts."""
    return u[:, 0] + a * u[:, 1] + 0.5 * a**2 * u[:, 2]


def fit_step(
    t: int,
    dataset: HedgeDataset,
    basis: BasisSet,
    market: MarketParams,
    risk: RiskParams,
    w_next: np.ndarray | None,
    a_star_next: np.ndarray | None,
    reg: float = DEFAULT_REG,
    rows: np.ndarray | None = None,
) -> np.ndarray:
    """Fit W_t for one backward step by solving (S + reg I) vec(W) = M.

    ``w_next``/``a_star_next`` are the next step's fitted matrix and its
    analytic optimal action; pass both as None at the terminal step, where
    the target Q is the closed-out portfolio value penalized by its
    variance (no maximization is involved because the terminal action is
    zero).  ``a_star_next`` must come from the analytic hedge formula, not
    from maximizing ``w_next`` on the same data.  ``rows`` restricts the
    regression sample (used by :func:`solve_fqi` to drop outlier-action
    rows); the equations are unchanged on the retained rows.
    """
    if dataset.r is None:
        raise ValueError("fit_step needs rewards; reconstruct them first for reward-free data")
    gamma = market.gamma
    if rows is None:
        rows = slice(None)
    phi_t = evaluate_matrix(basis, dataset.x[rows, t])
    if w_next is None:
        if t != dataset.n_steps - 1:
            raise ValueError("w_next may be omitted only at the terminal step")
        q_next = terminal_q(dataset.terminal_payoff, risk.lam)[rows]
    else:
        if a_star_next is None:
            raise ValueError("a_star_next is required when w_next is given")
        phi_next = evaluate_matrix(basis, dataset.x[rows, t + 1])
        q_next = quadratic_value(_quadratic_parts(phi_next, w_next), a_star_next[rows])

    psi = _psi_matrix(phi_t, dataset.a[rows, t])
    s_mat = psi.T @ psi
    m_vec = psi.T @ (dataset.r[rows, t] + gamma * q_next)
    vec_w = solve_regularized(s_mat, m_vec, reg, context=f"Q-feature regression at step {t}")
    return vec_w.reshape(basis.m, 3).T


def _action_band(a_t: np.ndarray) -> float | None:
    """Half-width of the supported action band at one step, None for no limit."""
    scale = float(np.quantile(np.abs(a_t), 0.99))
    if scale <= 0.0 or not np.isfinite(scale):
        return None
    bound = ACTION_OUTLIER_MULT * scale
    return bound if np.any(np.abs(a_t) > bound) else None


def solve_fqi(
    dataset: HedgeDataset,
    basis: BasisSet,
    market: MarketParams,
    risk: RiskParams,
    reg: float = DEFAULT_REG,
) -> FQISolution:
    """Backward Fitted Q Iteration over the whole dataset.

    Requires rewards (reconstruct them first when absent).  The analytic
    action chain is computed once up front from the rolled-back portfolio,
    then each step fits W_t on the outlier-trimmed sample and the time-0
    price is read off the fitted quadratic:
    price = -mean_k max_a Q_0(X_0^k, a) over the observed action range.
    """
    if dataset.r is None:
        raise ValueError("dataset has no rewards; reconstruct them first (reward-free mode)")
    n_steps = dataset.n_steps
    gamma = market.gamma

    _, pi, inc = replay_portfolio(dataset.x, dataset.a, dataset.terminal_payoff, market)
    phi_mats = [evaluate_matrix(basis, dataset.x[:, t]) for t in range(n_steps)]

    a_star = np.empty_like(dataset.a)
    bands = []
    for t in range(n_steps):
        pi_hat_next = pi[:, t + 1] - pi[:, t + 1].mean()
        coeffs = _action_coeffs(
            phi_mats[t], inc.ds[:, t], inc.ds_hat[:, t], pi_hat_next, gamma, risk, reg,
            context=f"analytic hedge regression at step {t}",
        )
        a_star[:, t] = phi_mats[t] @ coeffs
        band = _action_band(dataset.a[:, t])
        bands.append(band)
        if band is not None:
            np.clip(a_star[:, t], -band, band, out=a_star[:, t])

    w = np.empty((n_steps, 3, basis.m))
    violations = 0
    points = 0
    w_next = None
    for t in range(n_steps - 1, -1, -1):
        rows = None
        if bands[t] is not None:
            rows = np.flatnonzero(np.abs(dataset.a[:, t]) <= bands[t])
        a_next = a_star[:, t + 1] if t + 1 < n_steps else None
        w[t] = fit_step(t, dataset, basis, market, risk, w_next, a_next, reg, rows)
        w_next = w[t]
        curvature = phi_mats[t] @ w[t, 2]
        violations += int(np.count_nonzero(curvature >= 0.0))
        points += curvature.size

    # time-0 read-out: analytic max of the fitted quadratic over the observed
    # action interval (the vertex when concave, the better endpoint otherwise)
    u0 = _quadratic_parts(phi_mats[0], w[0])
    a_lo, a_hi = dataset.a[:, 0].min(), dataset.a[:, 0].max()
    readout_convex = bool(np.any(u0[:, 2] >= 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = np.where(u0[:, 2] < 0.0, -u0[:, 1] / u0[:, 2], a_lo)
    q0 = np.maximum(quadratic_value(u0, np.clip(vertex, a_lo, a_hi)), quadratic_value(u0, a_lo))
    q0 = np.maximum(q0, quadratic_value(u0, a_hi))
    price = float(-q0.mean())
    if not np.isfinite(price):
        raise NumericalError("time-0 price read-out is not finite; fitted Q is unusable")

    return FQISolution(
        w=w,
        price=price,
        a_star_fqi=a_star,
        concavity_violations=violations,
        concavity_warning=violations > CONCAVITY_WARN_FRACTION * points,
        readout_convex=readout_convex,
    )


def dataset_from_dp(paths: PathSet, solution: DPSolution) -> HedgeDataset:
    """On-policy dataset: states, the solution's optimal actions, rewards.

    Rewards are recomputed from the states and actions through the same
    replay used for reward-free data, so a dataset with its rewards dropped
    and reconstructed at the same risk aversion is bit-identical to this.
    """
    payoff = solution.pi[:, -1].copy()
    rewards = replay_rewards(paths.x, solution.a_star, payoff, paths.params, solution.risk.lam)
    return HedgeDataset(x=paths.x, a=solution.a_star, r=rewards, terminal_payoff=payoff)


def dataset_to_csv(dataset: HedgeDataset, out_path, payoff_path) -> None:
    """Write ``path,step,x,a,r`` rows plus a ``path,payoff`` companion file.

    The ``r`` column is omitted for reward-free datasets.  Actions (and
    rewards) are undefined at the terminal step and left empty there.
    """
    n_paths, n_cols = dataset.x.shape
    n_steps = n_cols - 1
    a_full = np.full((n_paths, n_cols), np.nan)
    a_full[:, :n_steps] = dataset.a
    cols = {
        "path": np.repeat(np.arange(n_paths), n_cols),
        "step": np.tile(np.arange(n_cols), n_paths),
        "x": dataset.x.ravel(),
        "a": a_full.ravel(),
    }
    if dataset.r is not None:
        r_full = np.full((n_paths, n_cols), np.nan)
        r_full[:, :n_steps] = dataset.r
        cols["r"] = r_full.ravel()
    pd.DataFrame(cols).to_csv(out_path, index=False, float_format="%.17g")
    pd.DataFrame(
        {"path": np.arange(n_paths), "payoff": dataset.terminal_payoff}
    ).to_csv(payoff_path, index=False, float_format="%.17g")


def dataset_from_csv(in_path, payoff_path) -> HedgeDataset:
    """Read a dataset written by :func:`dataset_to_csv`."""
    df = pd.read_csv(in_path)
    required = {"path", "step", "x", "a"}
    if not required.issubset(df.columns):
        raise ValueError(f"dataset CSV must have columns {sorted(required)}")
    n_paths = int(df["path"].max()) + 1
    n_cols = int(df["step"].max()) + 1
    x = np.full((n_paths, n_cols), np.nan)
    a = np.full((n_paths, n_cols), np.nan)
    rows = (df["path"].to_numpy(), df["step"].to_numpy())
    x[rows] = df["x"].to_numpy()
    a[rows] = df["a"].to_numpy()
    if np.isnan(x).any():
        raise ValueError("dataset CSV has missing (path, step) states")
    r = None
    if "r" in df.columns:
        r_full = np.full((n_paths, n_cols), np.nan)
        r_full[rows] = df["r"].to_numpy()
        r = r_full[:, : n_cols - 1]
        if np.isnan(r).any():
            raise ValueError("dataset CSV has missing rewards")
    payoff_df = pd.read_csv(payoff_path)
    if not {"path", "payoff"}.issubset(payoff_df.columns):
        raise ValueError("payoff CSV must have columns ['path', 'payoff']")
    payoff = np.full(n_paths, np.nan)
    payoff[payoff_df["path"].to_numpy()] = payoff_df["payoff"].to_numpy()
    if np.isnan(payoff).any():
        raise ValueError("payoff CSV is missing paths")
    return HedgeDataset(x=x, a=a[:, : n_cols - 1], r=r, terminal_payoff=payoff)


def fqi_solution_to_json(solution: FQISolution) -> str:
    """JSON export: price, W tensor, and concavity diagnostics."""
    return json.dumps(
        {
            "price": solution.price,
            "w": solution.w.tolist(),
            "concavity_violations": solution.concavity_violations,
            "concavity_warning": solution.concavity_warning,
        }
    )
