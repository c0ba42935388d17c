"""Fixed and adaptive damping of the message-passing state.

A damping factor beta in (0, 1] slows the evolution of the variance and
residual fields and of the factor means: each damped quantity is the convex
combination beta * raw + (1 - beta) * previous.  beta = 1 reproduces the
undamped iteration exactly; beta -> 0 freezes the state.

Adaptive mode monitors a surrogate cost J(t) — a KL penalty between the
factor posteriors and the prior, minus the expected log-likelihood of the
observations under a moment-matched Gaussian — and shrinks beta (retrying
the step from the saved pre-step state) whenever J(t) exceeds the maximum
over a trailing window of accepted costs.  Accepted steps grow beta back
toward 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import PriorModel


@dataclass(frozen=True)
class DampingConfig:
    """Damping schedule. mode is 'off', 'fixed', or 'adaptive'.

    Schedule constants: shrink/grow are the multiplicative beta updates on
    rejected/accepted steps; window is the number of extra past costs (beyond
    the immediately preceding one) a candidate cost is compared against;
    max_attempts bounds the retries within one iteration.
    """

    mode: str = "adaptive"
    beta: float = 1.0          # fixed-mode damping factor
    beta_init: float = 1.0
    beta_min: float = 0.01
    shrink: float = 0.5
    grow: float = 1.1
    window: int = 3
    max_attempts: int = 12

    def __post_init__(self):
        if self.mode not in ("off", "fixed", "adaptive"):
            raise ValueError(f"unknown damping mode: {self.mode!r}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not 0.0 < self.beta_min <= self.beta_init <= 1.0:
            raise ValueError(
                f"need 0 < beta_min <= beta_init <= 1, got "
                f"({self.beta_min}, {self.beta_init})"
            )
        if not 0.0 < self.shrink < 1.0 <= self.grow:
            raise ValueError(
                f"need shrink < 1 <= grow, got ({self.shrink}, {self.grow})"
            )
        if self.window < 0:
            raise ValueError(f"window must be >= 0, got {self.window}")

    def initial_beta(self) -> float:
        if self.mode == "off":
            return 1.0
        if self.mode == "fixed":
            return self.beta
        return self.beta_init


def mix(raw, prev, beta: float):
    """Convex combination beta * raw + (1 - beta) * prev, elementwise."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must be in (0, 1], got {beta}")
    if beta == 1.0:
        return raw
    return beta * np.asarray(raw) + (1.0 - beta) * np.asarray(prev)


@dataclass(frozen=True)
class StepFields:
    """The five damped quantities of one iteration, bundled."""

    nu_p_bar: np.ndarray
    nu_p: np.ndarray
    s_hat: np.ndarray
    nu_s: np.ndarray
    z_mean: tuple[np.ndarray, ...]


def apply_damping(prev: StepFields, raw: StepFields, beta: float) -> StepFields:
    """Damp a raw step against the previous state, field by field."""
    return StepFields(
        nu_p_bar=mix(raw.nu_p_bar, prev.nu_p_bar, beta),
        nu_p=mix(raw.nu_p, prev.nu_p, beta),
        s_hat=mix(raw.s_hat, prev.s_hat, beta),
        nu_s=mix(raw.nu_s, prev.nu_s, beta),
        z_mean=tuple(
            mix(r, p, beta) for r, p in zip(raw.z_mean, prev.z_mean)
        ),
    )


def gaussian_kl(mean, var, prior: PriorModel) -> float:
    """Sum of KL(N(mean, var) || prior) over all entries."""
    m = np.asarray(mean, dtype=np.float64)
    v = np.asarray(var, dtype=np.float64)
    s0, m0 = prior.var, prior.mean
    kl = 0.5 * (np.log(s0 / v) + (v + (m - m0) ** 2) / s0 - 1.0)
    return float(kl.sum())


def surrogate_cost(
    factor_means,
    factor_vars,
    plugin_mean: np.ndarray,
    plugin_var: np.ndarray,
    v_arr: np.ndarray,
    observed: np.ndarray,
    nu_w: float,
    prior: PriorModel,
) -> float:
    """Surrogate cost J: prior-deviation penalty minus expected log-likelihood.

    ``factor_means``/``factor_vars`` are sequences of congruent arrays (one
    per core or factor matrix); ``plugin_mean``/``plugin_var`` are the
    moment-matched mean and variance of each reconstructed entry.  Observed
    AWGN entries contribute ((v - mean)^2 + var) / (2 nu_w) + log(2 pi nu_w)/2;
    missing entries contribute nothing.  With nu_w = 0 the likelihood term
    degenerates, and the squared-residual term alone is used.
    """
    kl = sum(
        gaussian_kl(m, v, prior) for m, v in zip(factor_means, factor_vars)
    )
    resid = (v_arr - plugin_mean) ** 2 + plugin_var
    resid = np.where(observed, resid, 0.0)
    n_obs = int(observed.sum())
    if nu_w > 0:
        like = resid.sum() / (2.0 * nu_w) + 0.5 * n_obs * np.log(2.0 * np.pi * nu_w)
    else:
        like = resid.sum()
    return float(kl + like)


def adapt(beta: float, cost_history, cfg: DampingConfig):
    """Acceptance decision for the newest cost in ``cost_history``.

    The last entry is the candidate cost J(t); it is compared (non-strictly)
    against the maximum of the preceding window + 1 costs.  Returns
    (accepted, new_beta): shrunk beta with a retry expected on rejection,
    grown beta on acceptance.
    """
    costs = list(cost_history)
    if len(costs) < 2:
        return True, min(1.0, cfg.grow * beta)
    candidate = costs[-1]
    window = costs[max(0, len(costs) - 2 - cfg.window) : -1]
    accepted = bool(candidate <= max(window)) and np.isfinite(candidate)
    if accepted:
        return True, min(1.0, cfg.grow * beta)
    return False, max(cfg.beta_min, cfg.shrink * beta)
