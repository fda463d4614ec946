"""Model-based backward recursion for the risk-adjusted hedging problem.

Working backward from the option payoff, each step fits two cross-path
regressions on the state basis:

* the optimal hedge ``a*_t``, from the normal equations
  ``A phi_t = B`` with ``A_nm = sum_k Phi_n Phi_m (dS_hat)^2`` and
  ``B_n = sum_k Phi_n [Pi_hat_{t+1} dS_hat + dS / (2 gamma lam)]`` (the
  drift term is dropped in pure risk-hedge mode);
* the optimal Q-function coefficients ``omega_t``, from
  ``C omega_t = D`` with ``C = Phi^T Phi`` and targets
  ``R_t + gamma Q_{t+1}`` evaluated at the next step's optimal action.

The replicating portfolio rolls back as ``Pi_t = gamma (Pi_{t+1} - a_t dS_t)``
(the self-financing recursion for the forward-price increment convention),
per-path rewards use the expanded risk-penalty quadratic with cross-path
demeaned quantities, and the time-0 option ask price is minus the average
fitted Q.  Both Gram systems get a ridge term before factorization; the
time loop is sequential by construction while all per-step work is plain
vectorized array math, pure in its inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .basis import BasisSet, evaluate_matrix
from .bsm import EuropeanPut
from .linalg import solve_regularized
from .market import (
    MarketParams,
    PathSet,
    StepIncrements,
    from_state,
    increments,
    increments_from_prices,
)

DEFAULT_REG = 1e-3


@dataclass(frozen=True)
class RiskParams:
    """Risk aversion weight and hedge-formula variant.

    ``lam`` is the Markowitz-style weight on the cumulative discounted
    variance of the replicating portfolio.  With ``risk_only_hedge`` the
    optimal action keeps only the variance-minimizing term, dropping the
    drift term ``dS / (2 gamma lam)``; this is the variant used for all
    benchmark comparisons against Black-Scholes.
    """

    lam: float
    risk_only_hedge: bool = True

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"risk aversion must be positive, got {self.lam}")


@dataclass(frozen=True)
class DPSolution:
    """Backward-recursion output.

    ``phi`` and ``omega`` are (n_steps, m) coefficient stacks for the hedge
    and Q expansions; ``a_star`` (n_paths, n_steps) per-path hedges;
    ``pi`` and ``q_star`` (n_paths, n_steps + 1) portfolio and Q paths,
    including the terminal column; ``rewards`` (n_paths, n_steps); ``price``
    is minus the cross-path mean of the fitted time-0 Q.
    """

    phi: np.ndarray
    omega: np.ndarray
    a_star: np.ndarray
    pi: np.ndarray
    q_star: np.ndarray
    rewards: np.ndarray
    price: float
    risk: RiskParams
    reg: float


def terminal_portfolio(paths: PathSet, put: EuropeanPut) -> np.ndarray:
    """Terminal replicating-portfolio values: the put payoff max(K - S_T, 0)."""
    return put.payoff(paths.s[:, -1])


def terminal_q(payoff: np.ndarray, lam: float) -> np.ndarray:
    """Terminal Q values: -payoff - lam * Var[payoff] (cross-path variance)."""
    return -payoff - lam * np.var(payoff)


def portfolio_rollback(pi_next: np.ndarray, a_t: np.ndarray, ds_t: np.ndarray, gamma: float) -> np.ndarray:
    """One step of the self-financing rollback: gamma * (Pi_{t+1} - a_t dS_t)."""
    return gamma * (pi_next - a_t * ds_t)


def reward(a_t, ds_t, ds_hat_t, pi_hat_next, gamma: float, lam: float) -> np.ndarray:
    """Per-path one-step reward.

    gamma a dS minus lam gamma^2 times the expanded risk quadratic
    (Pi_hat^2 - 2 a dS_hat Pi_hat + a^2 dS_hat^2), with Pi_hat and dS_hat
    demeaned across paths.  With lam = 0 this reduces to the pure hedge
    gain gamma a dS.
    """
    penalty = pi_hat_next**2 - 2.0 * a_t * ds_hat_t * pi_hat_next + a_t**2 * ds_hat_t**2
    return gamma * a_t * ds_t - lam * gamma**2 * penalty


def _action_coeffs(
    phi_mat: np.ndarray,
    ds_t: np.ndarray,
    ds_hat_t: np.ndarray,
    pi_hat_next: np.ndarray,
    gamma: float,
    risk: RiskParams,
    reg: float,
    context: str,
) -> np.ndarray:
    a_mat = (phi_mat * (ds_hat_t**2)[:, None]).T @ phi_mat
    rhs = pi_hat_next * ds_hat_t
    if not risk.risk_only_hedge:
        rhs = rhs + ds_t / (2.0 * gamma * risk.lam)
    b_vec = phi_mat.T @ rhs
    return solve_regularized(a_mat, b_vec, reg, context)


def optimal_action_coeffs(
    t: int,
    paths: PathSet,
    basis: BasisSet,
    pi_next: np.ndarray,
    risk: RiskParams,
    reg: float = DEFAULT_REG,
) -> np.ndarray:
    """Hedge-expansion coefficients phi_t at step t.

    ``pi_next`` is the raw next-step portfolio vector; it is demeaned here.
    """
    inc = increments(paths)
    phi_mat = evaluate_matrix(basis, paths.x[:, t])
    pi_hat = pi_next - np.mean(pi_next)
    return _action_coeffs(
        phi_mat,
        inc.ds[:, t],
        inc.ds_hat[:, t],
        pi_hat,
        paths.params.gamma,
        risk,
        reg,
        context=f"hedge regression at step {t}",
    )


def optimal_action(t: int, paths: PathSet, basis: BasisSet, phi_t: np.ndarray) -> np.ndarray:
    """Per-path hedge a*_t = sum_n phi_nt Phi_n(X_t)."""
    return evaluate_matrix(basis, paths.x[:, t]) @ phi_t


def q_coeffs(
    t: int,
    paths: PathSet,
    basis: BasisSet,
    rewards_t: np.ndarray,
    q_next_at_astar: np.ndarray,
    reg: float = DEFAULT_REG,
) -> np.ndarray:
    """Q-expansion coefficients omega_t from targets R_t + gamma Q_{t+1}."""
    phi_mat = evaluate_matrix(basis, paths.x[:, t])
    targets = rewards_t + paths.params.gamma * q_next_at_astar
    c_mat = phi_mat.T @ phi_mat
    d_vec = phi_mat.T @ targets
    return solve_regularized(c_mat, d_vec, reg, context=f"Q regression at step {t}")


def solve_dp_from_payoff(
    paths: PathSet,
    basis: BasisSet,
    terminal_payoff: np.ndarray,
    risk: RiskParams,
    reg: float = DEFAULT_REG,
) -> DPSolution:
    """Full backward pass against an arbitrary terminal payoff vector."""
    market = paths.params
    gamma = market.gamma
    lam = risk.lam
    n_steps = market.n_steps
    n_paths = paths.n_paths
    if terminal_payoff.shape != (n_paths,):
        raise ValueError("terminal payoff must have one value per path")

    inc = increments(paths)
    phi_mats = [evaluate_matrix(basis, paths.x[:, t]) for t in range(n_steps)]

    pi = np.empty((n_paths, n_steps + 1))
    q = np.empty((n_paths, n_steps + 1))
    a = np.empty((n_paths, n_steps))
    rew = np.empty((n_paths, n_steps))
    phi = np.empty((n_steps, basis.m))
    omega = np.empty((n_steps, basis.m))

    pi[:, n_steps] = terminal_payoff
    q[:, n_steps] = terminal_q(terminal_payoff, lam)

    for t in range(n_steps - 1, -1, -1):
        ds_t = inc.ds[:, t]
        ds_hat_t = inc.ds_hat[:, t]
        pi_hat_next = pi[:, t + 1] - pi[:, t + 1].mean()

        phi[t] = _action_coeffs(
            phi_mats[t], ds_t, ds_hat_t, pi_hat_next, gamma, risk, reg,
            context=f"hedge regression at step {t}",
        )
        a[:, t] = phi_mats[t] @ phi[t]
        pi[:, t] = portfolio_rollback(pi[:, t + 1], a[:, t], ds_t, gamma)
        rew[:, t] = reward(a[:, t], ds_t, ds_hat_t, pi_hat_next, gamma, lam)

        targets = rew[:, t] + gamma * q[:, t + 1]
        c_mat = phi_mats[t].T @ phi_mats[t]
        d_vec = phi_mats[t].T @ targets
        omega[t] = solve_regularized(c_mat, d_vec, reg, context=f"Q regression at step {t}")
        q[:, t] = phi_mats[t] @ omega[t]

    price = float(-q[:, 0].mean())
    return DPSolution(
        phi=phi, omega=omega, a_star=a, pi=pi, q_star=q, rewards=rew,
        price=price, risk=risk, reg=reg,
    )


def solve_dp(
    paths: PathSet,
    basis: BasisSet,
    put: EuropeanPut,
    risk: RiskParams,
    reg: float = DEFAULT_REG,
) -> DPSolution:
    """Backward recursion for a single European put; see module docstring."""
    return solve_dp_from_payoff(paths, basis, terminal_portfolio(paths, put), risk, reg)


def replay_portfolio(
    x: np.ndarray,
    actions: np.ndarray,
    terminal_payoff: np.ndarray,
    market: MarketParams,
) -> tuple[np.ndarray, np.ndarray, StepIncrements]:
    """Reconstruct prices, portfolio path and increments from states and actions.

    Prices come from the inverse state transform; the portfolio rolls back
    from the terminal payoff through the observed (not necessarily optimal)
    actions.  This is how reward and hedge information is recovered when
    only (state, action, terminal payoff) data is available.
    """
    n_paths, n_cols = x.shape
    n_steps = n_cols - 1
    if n_steps != market.n_steps:
        raise ValueError(
            f"dataset has {n_steps} steps but market params specify {market.n_steps}"
        )
    if actions.shape != (n_paths, n_steps):
        raise ValueError("actions must be (n_paths, n_steps)")
    if terminal_payoff.shape != (n_paths,):
        raise ValueError("terminal payoff must have one value per path")

    s = np.empty_like(x)
    for t in range(n_cols):
        s[:, t] = from_state(x[:, t], t, market)
    inc = increments_from_prices(s, market.gamma)

    pi = np.empty((n_paths, n_cols))
    pi[:, n_steps] = terminal_payoff
    for t in range(n_steps - 1, -1, -1):
        pi[:, t] = portfolio_rollback(pi[:, t + 1], actions[:, t], inc.ds[:, t], market.gamma)
    return s, pi, inc


def replay_rewards(
    x: np.ndarray,
    actions: np.ndarray,
    terminal_payoff: np.ndarray,
    market: MarketParams,
    lam: float,
) -> np.ndarray:
    """Per-path rewards implied by observed actions at risk aversion ``lam``."""
    _, pi, inc = replay_portfolio(x, actions, terminal_payoff, market)
    n_steps = market.n_steps
    rew = np.empty_like(actions)
    for t in range(n_steps):
        pi_hat_next = pi[:, t + 1] - pi[:, t + 1].mean()
        rew[:, t] = reward(
            actions[:, t], inc.ds[:, t], inc.ds_hat[:, t], pi_hat_next, market.gamma, lam
        )
    return rew


def dp_solution_to_json(solution: DPSolution) -> str:
    """JSON summary: price plus per-step hedge and Q coefficient vectors."""
    return json.dumps(
        {
            "price": solution.price,
            "lam": solution.risk.lam,
            "risk_only_hedge": solution.risk.risk_only_hedge,
            "reg": solution.reg,
            "phi": solution.phi.tolist(),
            "omega": solution.omega.tolist(),
        }
    )


def dp_solution_to_csv(solution: DPSolution, out_path) -> None:
    """Per-path CSV ``path,step,a,pi,q,reward``; a and reward are empty at T."""
    n_paths, n_cols = solution.pi.shape
    n_steps = n_cols - 1
    a_full = np.full((n_paths, n_cols), np.nan)
    a_full[:, :n_steps] = solution.a_star
    r_full = np.full((n_paths, n_cols), np.nan)
    r_full[:, :n_steps] = solution.rewards
    df = pd.DataFrame(
        {
            "path": np.repeat(np.arange(n_paths), n_cols),
            "step": np.tile(np.arange(n_cols), n_paths),
            "a": a_full.ravel(),
            "pi": solution.pi.ravel(),
            "q": solution.q_star.ravel(),
            "reward": r_full.ravel(),
        }
    )
    df.to_csv(out_path, index=False, float_format="%.17g")
