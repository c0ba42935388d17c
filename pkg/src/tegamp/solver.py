"""Message-passing engine over tensor-ring factors.

Each iteration propagates Gaussian moments around the factor graph of the
ring model:

  1. plug-in reconstruction:  p_bar[x]   = trace chain of mean core slices;
     Onsager variance:        nu_p_bar[x] (subset sum with residual memory);
     corrected pseudo-prior:  p_hat = p_bar - s_prev * nu_p_bar,
                              nu_p  = sum-of-variance-products + nu_p_bar.
  2. output channel:          posterior entry moments (u_hat, nu_u), then the
                              scaled residual fields (s_hat, nu_s).
  3. per-fiber pull-back:     for every core i, bond pair (l_i, l_{i+1}) and
                              coordinate x_i, a pseudo-observation
                              (r_hat, nu_r) of that core entry, built from
                              leave-one-core-out contractions over the fiber
                              {x : x_i fixed}.
  4. input denoiser:          prior x N(r_hat, nu_r) posterior moments give
                              the next factor means and variances.

Damping (see :mod:`tegamp.damping`) slows fields 1-2 and the factor means.
All heavy quantities are computed as einsum chains over the core slices;
the exponential subset sums are organized per subset so each term is itself
a chain (cost O(2^d) chains, fine for d <= 12).  The explicit rank-tuple
enumerations live in the test suite as oracles.

Entirely deterministic: fixed summation orders, RNG from the package
generator, no data-dependent branching beyond the documented fallbacks.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .channel import (
    ObservationMask,
    PriorModel,
    clamp_var,
    estimate_noise_variance,
    field_output_and_residual,
    input_posterior,
)
from .damping import DampingConfig, adapt, mix, surrogate_cost
from .tensors import DenseTensor, RankVector, Shape, TRFactors

CONVERGED = "converged"
DIVERGED = "diverged"
MAX_ITER = "max-iter"

_LETTERS = string.ascii_lowercase + string.ascii_uppercase
MAX_MODES = 12  # subset enumeration guard


@dataclass(frozen=True)
class FactorMoments:
    """Per-entry mean and variance of the ring cores."""

    mean: TRFactors
    var: tuple[np.ndarray, ...]

    def __post_init__(self):
        var = tuple(np.asarray(v, dtype=np.float64) for v in self.var)
        object.__setattr__(self, "var", var)
        if len(var) != self.mean.ndim:
            raise ValueError("variance core count mismatch")
        for c, v in zip(self.mean.cores, var):
            if c.shape != v.shape:
                raise ValueError(f"variance shape {v.shape} != core {c.shape}")
            if np.any(v < 0):
                raise ValueError("variances must be >= 0")


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budget, stopping rule, damping, prior, and seeding."""

    t_max: int = 500
    tau_threshold: float = 1e-3
    damping: DampingConfig = field(default_factory=DampingConfig)
    seed: int = 0
    prior: PriorModel = field(default_factory=PriorModel)
    noise_var: float | None = None  # None: estimate from observed energy
    snr_estimate: float = 100.0
    divergence_ratio: float = 1e6
    # CP engine only: keep the (s^2 - nu_s)-weighted self-correction instead
    # of the default -nu_s approximation.
    restore_bias_term: bool = False

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")
        if self.tau_threshold <= 0:
            raise ValueError(f"tau_threshold must be > 0, got {self.tau_threshold}")
        if self.noise_var is not None and self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")


@dataclass(frozen=True)
class DampingRecord:
    """One damping attempt: iteration, beta used, cost, and acceptance."""

    t: int
    beta: float
    cost: float
    accepted: bool


@dataclass(frozen=True)
class RunResult:
    estimate: DenseTensor
    factors: object  # FactorMoments (ring) or CPFactorMoments (CP engine)
    iterations: int
    status: str
    final_residual_change: float
    damping_log: tuple[DampingRecord, ...] = ()
    # Smallest self-correction ratio seen per iteration (can be negative;
    # passed through unclamped, recorded for diagnosis).
    correction_ratio_min: tuple[float, ...] = ()


# ---------------------------------------------------------------------------
# einsum chain machinery


def _subs(d: int):
    bonds = _LETTERS[:d]
    modes = _LETTERS[d : 2 * d]
    core_subs = [bonds[i] + modes[i] + bonds[(i + 1) % d] for i in range(d)]
    return bonds, modes, core_subs


def _trace_chain(arrays) -> np.ndarray:
    """Grid field of trace(prod_i A_i[:, x_i, :]) over all multi-indices."""
    d = len(arrays)
    bonds, modes, core_subs = _subs(d)
    return np.einsum(",".join(core_subs) + "->" + modes, *arrays, optimize=True)


def _loo_chain(arrays, i: int) -> np.ndarray:
    """Leave-one-core-out chain field.

    Output axes: modes j != i in ascending order, then (l_i, l_{i+1}).
    Entry [.., a, b] sums products of the other cores over all rank tuples
    whose bond pair at core i is (a, b).
    """
    d = len(arrays)
    bonds, modes, core_subs = _subs(d)
    ins = [core_subs[j] for j in range(d) if j != i]
    others = "".join(modes[j] for j in range(d) if j != i)
    out = others + bonds[i] + bonds[(i + 1) % d]
    args = [arrays[j] for j in range(d) if j != i]
    return np.einsum(",".join(ins) + "->" + out, *args, optimize=True)


def _fiber_reduce(field_arr: np.ndarray, weight: np.ndarray, i: int, d: int) -> np.ndarray:
    """sum over {x : x_i fixed} of field[other modes, a, b] * weight[x].

    Returns an (N_i, r_i, r_{i+1}) array.
    """
    bonds, modes, _ = _subs(d)
    others = "".join(modes[j] for j in range(d) if j != i)
    in1 = others + bonds[i] + bonds[(i + 1) % d]
    out = modes[i] + bonds[i] + bonds[(i + 1) % d]
    return np.einsum(f"{in1},{modes}->{out}", field_arr, weight, optimize=True)


def _subsets(d: int):
    """Nonempty proper subsets of range(d), as (members, non-members)."""
    for bits in range(1, 2**d - 1):
        inside = [i for i in range(d) if bits >> i & 1]
        outside = [i for i in range(d) if not bits >> i & 1]
        yield inside, outside


def _onsager_field(means, vars_, s_prev: np.ndarray) -> np.ndarray:
    """Onsager variance field: per-subset trace chains with the residual
    memory factor (-s_prev * full mean product)^(d - |A| - 1), 0^0 = 1."""
    d = len(means)
    out = np.zeros(s_prev.shape, dtype=np.float64)
    for inside, outside in _subsets(d):
        e = d - len(inside) - 1
        mats = [None] * d
        for i in inside:
            mats[i] = means[i] ** (e + 2)
        for i in outside:
            mats[i] = vars_[i] * means[i] ** e
        out += (-s_prev) ** e * _trace_chain(mats)
    return out


def _zeta_field(means, vars_, i: int) -> np.ndarray:
    """Mixed leave-one-out moment field for core i.

    Per rank tuple (bond pair of core i fixed), the nonempty-subset sum of
    variance/squared-mean products over the other cores collapses to
    prod(m^2 + v) - prod(m^2); both factors are chain fields.
    """
    sq = [m**2 for m in means]
    lifted = [s + v for s, v in zip(sq, vars_)]
    return _loo_chain(lifted, i) - _loo_chain(sq, i)


def _posterior_var_field(means, vars_) -> np.ndarray:
    """Moment-matched entry variance: full nonempty-subset sum, collapsed to
    trace chains of (m^2 + v) minus chains of m^2."""
    sq = [m**2 for m in means]
    lifted = [s + v for s, v in zip(sq, vars_)]
    return _trace_chain(lifted) - _trace_chain(sq)


# ---------------------------------------------------------------------------
# per-entry operations (contract surface; the engine uses the field forms)


def plugin_estimate(z: FactorMoments, x) -> float:
    """Plug-in reconstruction at one index: ring contraction of the means."""
    from .tensors import tr_contract

    return tr_contract(z.mean, x)


def _slices_at(z: FactorMoments, x):
    x = z.mean.shape.check_index(x)
    means = [c[:, xi, :] for c, xi in zip(z.mean.cores, x)]
    vars_ = [v[:, xi, :] for v, xi in zip(z.var, x)]
    return means, vars_


def _chain_scalar(mats) -> float:
    m = mats[0]
    for a in mats[1:]:
        m = m @ a
    return float(np.trace(m))


def onsager_variance(z: FactorMoments, s_prev_x: float, x) -> float:
    """Onsager variance at one index (subset-organized trace chains)."""
    means, vars_ = _slices_at(z, x)
    d = len(means)
    if d > MAX_MODES:
        raise ValueError(f"subset enumeration limited to d <= {MAX_MODES}")
    total = 0.0
    for inside, outside in _subsets(d):
        e = d - len(inside) - 1
        mats = [None] * d
        for i in inside:
            mats[i] = means[i] ** (e + 2)
        for i in outside:
            mats[i] = vars_[i] * means[i] ** e
        total += (-s_prev_x) ** e * _chain_scalar(mats)
    return total


def corrected_p(z: FactorMoments, s_prev_x: float, x):
    """Onsager-corrected pseudo-prior (p_hat, nu_p) at one index."""
    means, vars_ = _slices_at(z, x)
    p_bar = _chain_scalar(means)
    nu_bar = onsager_variance(z, s_prev_x, x)
    nu_p = _chain_scalar(vars_) + nu_bar
    return p_bar - s_prev_x * nu_bar, nu_p


def zeta(z: FactorMoments, i: int, bond, x) -> float:
    """Leave-one-core-out mixed moment at one index for core i, bond pair
    (l_i, l_{i+1})."""
    means, vars_ = _slices_at(z, x)
    sq = [m**2 for m in means]
    lifted = [s + v for s, v in zip(sq, vars_)]
    a, b = bond
    d = len(means)
    order = [(i + 1 + k) % d for k in range(d - 1)]  # cyclic, excluding i
    big = lifted[order[0]]
    small = sq[order[0]]
    for j in order[1:]:
        big = big @ lifted[j]
        small = small @ sq[j]
    # chains run from core i+1 to core i-1, so rows are indexed by l_{i+1}.
    return float(big[b, a] - small[b, a])


def loo_sum(z: FactorMoments, i: int, bond, x) -> float:
    """Leave-one-core-out contraction of the means at one index."""
    means, _ = _slices_at(z, x)
    d = len(means)
    a, b = bond
    order = [(i + 1 + k) % d for k in range(d - 1)]
    m = means[order[0]]
    for j in order[1:]:
        m = m @ means[j]
    return float(m[b, a])


def r_step(z: FactorMoments, s_hat: np.ndarray, nu_s: np.ndarray, i: int, bond, x_i: int):
    """Pseudo-observation (r_hat, nu_r) for core i entry (l_i, x_i, l_{i+1}).

    Sums leave-one-out statistics over the fiber {x : x_i fixed}.  Returns
    None when the fiber carries no residual information (zero denominator);
    the engine then falls back to the prior moments for that entry.
    """
    dims = z.mean.shape.dims
    d = len(dims)
    den = 0.0
    num_s = 0.0
    num_z = 0.0
    for rest in np.ndindex(*(dims[:i] + dims[i + 1 :])):
        x = rest[:i] + (x_i,) + rest[i:]
        el = loo_sum(z, i, bond, x)
        den += el**2 * nu_s[x]
        num_s += el * s_hat[x]
        num_z += nu_s[x] * zeta(z, i, bond, x)
    if den <= 0.0:
        return None
    nu_r = 1.0 / den
    a, b = bond
    self_term = z.mean.cores[i][a, x_i, b]
    r_hat = nu_r * num_s + self_term * (1.0 - num_z / den)
    return r_hat, nu_r


# ---------------------------------------------------------------------------
# iteration


@dataclass(frozen=True)
class SolverState:
    """Complete iteration state; new instances are produced per step."""

    t: int
    means: tuple[np.ndarray, ...]   # factor means entering the next step
    vars_: tuple[np.ndarray, ...]
    z_bar: tuple[np.ndarray, ...]   # damped means used in the pull-back
    p_bar: np.ndarray
    nu_p_bar: np.ndarray
    nu_p: np.ndarray
    s_hat: np.ndarray
    nu_s: np.ndarray
    correction_ratio_min: float = 1.0


def initial_state(shape: Shape, ranks: RankVector, cfg: SolverConfig) -> SolverState:
    """Means drawn i.i.d. from the prior, variances at the prior variance,
    residual fields at zero."""
    d = shape.ndim
    if d > MAX_MODES:
        raise ValueError(f"engine limited to d <= {MAX_MODES} modes")
    if len(ranks) != d:
        raise ValueError(f"{len(ranks)} ranks for {d} modes")
    seed = rng.child_seed(cfg.seed, rng.TAG_SOLVER)
    sizes = [ranks.pair(i)[0] * n * ranks.pair(i)[1] for i, n in enumerate(shape.dims)]
    draws = rng.normals(seed, int(sum(sizes)))
    means, pos = [], 0
    for i, n in enumerate(shape.dims):
        ri, rj = ranks.pair(i)
        block = draws[pos : pos + ri * n * rj].reshape(ri, n, rj)
        means.append(cfg.prior.mean + np.sqrt(cfg.prior.var) * block)
        pos += ri * n * rj
    vars_ = [np.full(m.shape, cfg.prior.var) for m in means]
    zeros = np.zeros(shape.dims)
    return SolverState(
        t=0,
        means=tuple(means),
        vars_=tuple(vars_),
        z_bar=tuple(means),
        p_bar=zeros,
        nu_p_bar=zeros.copy(),
        nu_p=zeros.copy(),
        s_hat=zeros.copy(),
        nu_s=zeros.copy(),
    )


def truth_state(factors: TRFactors, shape: Shape) -> SolverState:
    """State pinned at given factors with zero variances (fixed-point probes)."""
    means = tuple(np.array(c) for c in factors.cores)
    zeros = np.zeros(shape.dims)
    return SolverState(
        t=0,
        means=means,
        vars_=tuple(np.zeros(c.shape) for c in means),
        z_bar=means,
        p_bar=zeros,
        nu_p_bar=zeros.copy(),
        nu_p=zeros.copy(),
        s_hat=zeros.copy(),
        nu_s=zeros.copy(),
    )


def iterate(
    state: SolverState,
    v_arr: np.ndarray,
    observed: np.ndarray,
    nu_w: float,
    cfg: SolverConfig,
    beta: float = 1.0,
) -> SolverState:
    """One full damped iteration; returns the successor state."""
    d = len(state.means)
    means, vars_ = state.means, state.vars_
    prior = cfg.prior

    p_bar = _trace_chain(means)
    nu_p_bar_raw = _onsager_field(means, vars_, state.s_hat)
    nu_p_bar = clamp_var(mix(nu_p_bar_raw, state.nu_p_bar, beta))
    p_hat = p_bar - state.s_hat * nu_p_bar
    nu_p_raw = nu_p_bar + _trace_chain(vars_)
    nu_p = clamp_var(mix(nu_p_raw, state.nu_p, beta))

    u_hat, nu_u, s_raw, nu_s_raw = field_output_and_residual(
        v_arr, observed, p_hat, nu_p, nu_w
    )
    s_hat = mix(s_raw, state.s_hat, beta)
    nu_s = mix(nu_s_raw, state.nu_s, beta)

    z_bar = tuple(
        mix(m, zb, beta) for m, zb in zip(means, state.z_bar)
    )

    new_means = []
    new_vars = []
    ratio_min = 1.0
    for i in range(d):
        loo = _loo_chain(z_bar, i)  # other modes..., l_i, l_{i+1}
        zeta_f = _zeta_field_zbar(z_bar, vars_, i)
        den = _fiber_reduce(loo**2, nu_s, i, d)       # N_i, r_i, r_{i+1}
        num_s = _fiber_reduce(loo, s_hat, i, d)
        num_z = _fiber_reduce(zeta_f, nu_s, i, d)
        ok = den > 0.0
        safe_den = np.where(ok, den, 1.0)
        nu_r = clamp_var(1.0 / safe_den)
        self_term = z_bar[i].transpose(1, 0, 2)        # N_i, r_i, r_{i+1}
        ratio = 1.0 - num_z / safe_den
        if np.any(ok):
            ratio_min = min(ratio_min, float(ratio[ok].min()))
        r_hat = nu_r * num_s + self_term * ratio
        post_mean, post_var = input_posterior(r_hat, nu_r, prior)
        post_mean = np.where(ok, post_mean, prior.mean)
        post_var = np.where(ok, post_var, prior.var)
        new_means.append(np.ascontiguousarray(post_mean.transpose(1, 0, 2)))
        new_vars.append(np.ascontiguousarray(clamp_var(post_var).transpose(1, 0, 2)))

    return SolverState(
        t=state.t + 1,
        means=tuple(new_means),
        vars_=tuple(new_vars),
        z_bar=z_bar,
        p_bar=p_bar,
        nu_p_bar=nu_p_bar,
        nu_p=nu_p,
        s_hat=s_hat,
        nu_s=nu_s,
        correction_ratio_min=ratio_min,
    )


def _zeta_field_zbar(z_bar, vars_, i):
    sq = [m**2 for m in z_bar]
    lifted = [s + v for s, v in zip(sq, vars_)]
    return _loo_chain(lifted, i) - _loo_chain(sq, i)


# ---------------------------------------------------------------------------
# outer loop


def solve(
    v: DenseTensor,
    mask: ObservationMask,
    shape: Shape,
    ranks: RankVector,
    cfg: SolverConfig,
) -> RunResult:
    """Run the engine to convergence, divergence, or the iteration cap."""
    if mask.shape.dims != shape.dims or v.shape.dims != shape.dims:
        raise ValueError("tensor, mask, and shape must agree")
    v_arr = v.array
    observed = mask.mask
    if cfg.noise_var is not None:
        nu_w = cfg.noise_var
    else:
        nu_w = estimate_noise_variance(v, mask, cfg.snr_estimate)

    state = initial_state(shape, ranks, cfg)
    runner = _Runner(v_arr, observed, nu_w, cfg, _tr_cost, iterate)
    return runner.run(state, _tr_estimate, _tr_moments)


def _tr_cost(state: SolverState, v_arr, observed, nu_w, cfg) -> float:
    plugin = _trace_chain(state.means)
    plug_var = _posterior_var_field(state.means, state.vars_)
    return surrogate_cost(
        state.means, state.vars_, plugin, plug_var, v_arr, observed, nu_w, cfg.prior
    )


def _tr_estimate(state: SolverState) -> DenseTensor:
    return DenseTensor.from_array(_trace_chain(state.means))


def _tr_moments(state: SolverState) -> FactorMoments:
    return FactorMoments(TRFactors(state.means), state.vars_)


class _Runner:
    """Shared outer loop: damping control, termination, divergence."""

    def __init__(self, v_arr, observed, nu_w, cfg, cost_fn, step_fn):
        self.v_arr = v_arr
        self.observed = observed
        self.nu_w = nu_w
        self.cfg = cfg
        self.cost_fn = cost_fn
        self.step_fn = step_fn

    def run(self, state, estimate_fn, moments_fn) -> RunResult:
        cfg = self.cfg
        dcfg = cfg.damping
        adaptive = dcfg.mode == "adaptive"
        beta = dcfg.initial_beta()
        costs: list[float] = []
        log: list[DampingRecord] = []
        ratios: list[float] = []
        status = MAX_ITER
        first_norm = None
        rel_change = np.inf
        prev_p_bar = None

        if not np.all(np.isfinite(self.v_arr[self.observed])):
            return RunResult(
                estimate_fn(state), moments_fn(state), 0, DIVERGED, np.inf
            )

        for t in range(1, cfg.t_max + 1):
            cand = None
            for attempt in range(dcfg.max_attempts):
                cand = self.step_fn(
                    state, self.v_arr, self.observed, self.nu_w, cfg, beta
                )
                cost = self.cost_fn(cand, self.v_arr, self.observed, self.nu_w, cfg)
                if not adaptive:
                    accepted = True
                    log.append(DampingRecord(t, beta, cost, True))
                    break
                accepted, next_beta = adapt(beta, costs + [cost], dcfg)
                log.append(DampingRecord(t, beta, cost, accepted))
                if accepted:
                    beta = next_beta
                    break
                if next_beta >= beta or attempt == dcfg.max_attempts - 1:
                    # cannot shrink further: advance anyway (logged as
                    # rejected; the acceptance rule defines "accepted").
                    beta = next_beta
                    break
                beta = next_beta
            state = cand
            costs.append(cost)
            ratios.append(state.correction_ratio_min)

            p_bar = state.p_bar
            if not np.all(np.isfinite(p_bar)):
                status = DIVERGED
                break
            norm = float(np.sum(p_bar**2))
            if first_norm is None:
                first_norm = norm
            elif first_norm > 0 and np.sqrt(norm / first_norm) > cfg.divergence_ratio:
                status = DIVERGED
                break
            if prev_p_bar is not None:
                change = float(np.sum((p_bar - prev_p_bar) ** 2))
                rel_change = change / norm if norm > 0 else np.inf
                if change <= cfg.tau_threshold * norm:
                    status = CONVERGED
                    break
            prev_p_bar = p_bar

        return RunResult(
            estimate=estimate_fn(state),
            factors=moments_fn(state),
            iterations=state.t,
            status=status,
            final_residual_change=rel_change,
            damping_log=tuple(log),
            correction_ratio_min=tuple(ratios),
        )
