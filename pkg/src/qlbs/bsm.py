"""Closed-form Black-Scholes put/call prices and put delta.

Used as the benchmark for the zero-risk-aversion, risk-neutral-drift limit
of the hedging solvers.  The normal CDF goes through erfc so tail values
stay accurate to better than 1e-12, well beyond any tolerance used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc


@dataclass(frozen=True)
class EuropeanPut:
    """Vanilla European put: strike (>= 0) and maturity in years (> 0)."""

    strike: float
    maturity: float

    def __post_init__(self):
        if self.strike < 0:
            raise ValueError(f"strike must be nonnegative, got {self.strike}")
        if self.maturity <= 0:
            raise ValueError(f"maturity must be positive, got {self.maturity}")

    def payoff(self, s_terminal):
        return np.maximum(self.strike - np.asarray(s_terminal, dtype=float), 0.0)


def norm_cdf(x):
    """Standard normal CDF via erfc: 0.5 * erfc(-x / sqrt(2))."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def _d1_d2(s0, strike, r, sigma, t_maturity):
    if s0 <= 0:
        raise ValueError(f"s0 must be positive, got {s0}")
    if strike <= 0:
        raise ValueError(f"strike must be positive, got {strike}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if t_maturity <= 0:
        raise ValueError(f"t_maturity must be positive, got {t_maturity}")
    v = sigma * math.sqrt(t_maturity)
    d1 = (math.log(s0 / strike) + (r + 0.5 * sigma**2) * t_maturity) / v
    return d1, d1 - v


def bs_put_price(s0, strike, r, sigma, t_maturity) -> float:
    """European put price K e^{-rT} N(-d2) - S0 N(-d1)."""
    if strike == 0:
        return 0.0
    d1, d2 = _d1_d2(s0, strike, r, sigma, t_maturity)
    disc = math.exp(-r * t_maturity)
    return float(strike * disc * norm_cdf(-d2) - s0 * norm_cdf(-d1))


def bs_call_price(s0, strike, r, sigma, t_maturity) -> float:
    """European call price S0 N(d1) - K e^{-rT} N(d2)."""
    if strike == 0:
        return float(s0)
    d1, d2 = _d1_d2(s0, strike, r, sigma, t_maturity)
    disc = math.exp(-r * t_maturity)
    return float(s0 * norm_cdf(d1) - strike * disc * norm_cdf(d2))


def bs_put_delta(s0, strike, r, sigma, t_maturity) -> float:
    """Put delta N(d1) - 1, in (-1, 0)."""
    d1, _ = _d1_d2(s0, strike, r, sigma, t_maturity)
    return float(norm_cdf(d1) - 1.0)
