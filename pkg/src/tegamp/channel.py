"""Output-channel moments and input-prior denoisers.

The observation model is an incomplete AWGN channel: at observed indices
the measurement is the tensor entry plus N(0, nu_w) noise; at missing
indices the measurement carries no information.  The posterior moments of
an entry u given a Gaussian pseudo-prior N(p_hat, nu_p) and this channel
have closed forms; the quadrature versions of those integrals live in the
test suite only.

Variances that appear as divisors are floored at ``VAR_FLOOR`` so that
degenerate zero-variance iterates survive the residual divisions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import DenseTensor, Shape

VAR_FLOOR = 1e-12
VAR_CEIL = 1e12


def clamp_var(v):
    """Clamp computed variances into [VAR_FLOOR, VAR_CEIL]."""
    return np.clip(v, VAR_FLOOR, VAR_CEIL)


@dataclass(frozen=True)
class ObservationMask:
    """Boolean tensor marking observed entries."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool).copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def full(cls, shape: Shape) -> "ObservationMask":
        return cls(np.ones(shape.dims, dtype=bool))

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def shape(self) -> Shape:
        return Shape(self.mask.shape)


@dataclass(frozen=True)
class ChannelModel:
    """Incomplete-AWGN likelihood: mask of observed entries + noise variance."""

    noise_var: float
    mask: ObservationMask
    kind: str = "incomplete-awgn"

    def __post_init__(self):
        if self.kind != "incomplete-awgn":
            raise ValueError(f"unsupported channel kind: {self.kind!r}")
        if self.noise_var < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.noise_var}")


@dataclass(frozen=True)
class PriorModel:
    """Elementwise prior on factor entries.  Only 'gaussian' ships; the kind
    tag leaves room for sparsity-inducing priors later."""

    mean: float = 0.0
    var: float = 1.0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"unsupported prior kind: {self.kind!r}")
        if self.var <= 0:
            raise ValueError(f"prior variance must be > 0, got {self.var}")


def estimate_noise_variance(v: DenseTensor, mask: ObservationMask, snr: float = 100.0) -> float:
    """Initial noise-variance estimate from the observed energy.

    Returns ||P_Omega(V)||_F^2 / ((snr + 1) * |Omega|) for a rough SNR guess
    (default 100).
    """
    if mask.count == 0:
        raise ValueError("cannot estimate noise variance from an empty mask")
    if snr <= -1:
        raise ValueError(f"snr must be > -1, got {snr}")
    energy = float((v.array[mask.mask] ** 2).sum())
    return energy / ((snr + 1.0) * mask.count)


def output_moments(v, p_hat: float, nu_p: float, ch: ChannelModel):
    """Posterior mean/variance of an entry under the AWGN channel.

    ``v`` is the observed value or None for a missing entry.  Missing
    entries return the pseudo-prior moments unchanged; observed entries use
    the conjugate-Gaussian closed form.
    """
    if nu_p <= 0:
        raise ValueError(f"nu_p must be > 0, got {nu_p}")
    if v is None:
        return p_hat, nu_p
    nu_w = ch.noise_var
    # Precision-weighted average; exact clamp to v when nu_w == 0.
    u_hat = (nu_w * p_hat + nu_p * v) / (nu_p + nu_w)
    nu_u = nu_p * nu_w / (nu_p + nu_w)
    return u_hat, nu_u


def residual_step(v, p_hat: float, nu_p: float, ch: ChannelModel):
    """Scaled residual (s_hat, nu_s) of an entry.

    General form: s_hat = (u_hat - p_hat)/nu_p, nu_s = (1 - nu_u/nu_p)/nu_p.
    For the incomplete AWGN channel this reduces to
    s_hat = (v - p_hat)/(nu_p + nu_w), nu_s = 1/(nu_p + nu_w) at observed
    entries and exactly (0, 0) at missing ones.
    """
    if nu_p <= 0:
        raise ValueError(f"nu_p must be > 0, got {nu_p}")
    if v is None:
        return 0.0, 0.0
    nu_w = ch.noise_var
    return (v - p_hat) / (nu_p + nu_w), 1.0 / (nu_p + nu_w)


def omega(s_hat, nu_s):
    """Bias coefficient s_hat^2 - nu_s multiplying the mixed-moment terms."""
    return s_hat**2 - nu_s


def input_posterior(r_hat, nu_r, prior: PriorModel):
    """Mean and variance of prior x N(r_hat, nu_r), normalized.

    For the Gaussian prior this is the conjugate closed form; works
    elementwise on arrays.  Returns (g, nu_r * g') where g' is the
    derivative of the posterior mean in its first argument.
    """
    nu_r = np.asarray(nu_r, dtype=np.float64)
    if np.any(nu_r <= 0):
        raise ValueError("nu_r must be > 0")
    s0, m0 = prior.var, prior.mean
    mean = (s0 * np.asarray(r_hat) + nu_r * m0) / (s0 + nu_r)
    var = s0 * nu_r / (s0 + nu_r)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def field_output_and_residual(v_arr, observed, p_hat, nu_p, nu_w):
    """Vectorized channel step over a whole tensor.

    Returns (u_hat, nu_u, s_hat, nu_s) arrays; missing entries get
    (p_hat, nu_p, 0, 0).  ``nu_p`` must already be floored positive.
    """
    denom = nu_p + nu_w
    v_safe = np.where(observed, v_arr, 0.0)
    u_hat = np.where(observed, (nu_w * p_hat + nu_p * v_safe) / denom, p_hat)
    nu_u = np.where(observed, nu_p * nu_w / denom, nu_p)
    s_hat = np.where(observed, (v_safe - p_hat) / denom, 0.0)
    nu_s = np.where(observed, 1.0 / denom, 0.0)
    return u_hat, nu_u, s_hat, nu_s
