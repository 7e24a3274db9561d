"""The estimation loop: sequential initialization, then support, model
parameters and frequency posteriors in turn until the reconstruction settles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .circular import VmParam, log_scaled_bessel_i, mean_resultant_length, wrap_angle
from .freq_model import (
    DEFAULT_D,
    FreqFactorSet,
    FreqPosterior,
    MeasurementSet,
    heuristic1,
    heuristic2,
    interference_cancelled_eta,
    noncoherent_factors,
    point_maximize,
)
from .hyperparams import Hyperparams, init_hyperparams, noise_variance_estimate, update_all
from .support import GramData, SupportState, build_gram, maximize_support, refresh_gram, weights_posterior

log = logging.getLogger(__name__)

HEURISTICS = ("h1", "h2")
MODES = ("full", "point")
POINT_GRID_FACTOR = 8
POINT_NEWTON_STEPS = 20
ENTROPY_GRID = 4096


@dataclass
class EngineConfig:
    """Settings of one estimation run.

    ``prior`` is one von Mises prior shared by all components or a list with
    one per component. With ``learn_beta`` off, ``beta`` (or the data-driven
    initial values) stays fixed throughout.
    """

    heuristic: str = "h2"
    D: int = DEFAULT_D
    mode: str = "full"
    max_iters: int = 5000
    rel_tol: float = 1e-6
    prior: Union[VmParam, Sequence[VmParam]] = field(default_factory=VmParam)
    learn_beta: bool = True
    beta: Optional[Hyperparams] = None

    def __post_init__(self):
        self.heuristic = self.heuristic.lower()
        self.mode = self.mode.lower()
        if self.heuristic not in HEURISTICS:
            raise ValueError(f"heuristic must be one of {HEURISTICS}, got {self.heuristic!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.D) < 1:
            raise ValueError("D must be a positive integer")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        self.D = int(self.D)
        self.max_iters = int(self.max_iters)

    def prior_for(self, i: int) -> VmParam:
        if isinstance(self.prior, VmParam):
            return self.prior
        return VmParam(self.prior[i]) if not isinstance(self.prior[i], VmParam) else self.prior[i]


@dataclass
class EngineState:
    """Everything one iteration reads and writes.

    ``moments`` is the M x N matrix whose column i is the expected steering
    vector of component i; ``gram`` is kept consistent with it.
    """

    mset: MeasurementSet
    N: int
    posteriors: list
    moments: np.ndarray
    support: SupportState
    gram: GramData
    beta: Hyperparams
    x_hat: np.ndarray
    iteration: int = 0
    flip_history: list = field(default_factory=list)


@dataclass
class EstimationResult:
    K_hat: int
    freqs: np.ndarray
    amps: np.ndarray
    components: np.ndarray
    posteriors: list
    x_hat: np.ndarray
    beta: Hyperparams
    iters: int
    converged: bool
    flip_history: list = field(default_factory=list)


def reconstruct(state: EngineState, N: Optional[int] = None) -> np.ndarray:
    """Posterior mean of the full length-N signal."""
    N = state.N if N is None else N
    n = np.arange(N)
    x = np.zeros(N, complex)
    for i, w in zip(state.support.active, state.support.w):
        x += w * state.posteriors[i].moments(n)
    return x


def _check_config_priors(config: EngineConfig, N: int) -> None:
    if not isinstance(config.prior, VmParam) and len(config.prior) != N:
        raise ValueError(f"expected {N} component priors, got {len(config.prior)}")


def initialize(mset: MeasurementSet, N: int, config: EngineConfig) -> EngineState:
    """Sequential start: each component takes the dominant periodogram lobe of
    the residual left by the components before it.

    In point mode the lobe is replaced by the periodogram maximizer, so every
    moment vector of that mode is a plain steering vector.
    """
    if mset.N != N:
        raise ValueError(f"measurement set is for length {mset.N}, not {N}")
    _check_config_priors(config, N)
    beta = config.beta if config.beta is not None else init_hyperparams(mset, N)
    M = mset.M
    moments = np.zeros((M, N), complex)
    posteriors = [FreqPosterior.uniform() for _ in range(N)]
    gram = build_gram(moments, mset.y)
    s = np.zeros(N, bool)
    residual = mset.y
    support = SupportState.empty(N)
    for i in range(N):
        fset = noncoherent_factors(mset, beta.nu, residual)
        fset.prior = config.prior_for(i)
        post = _point_posterior(fset, N) if config.mode == "point" else heuristic2(fset)
        posteriors[i] = post
        moments[:, i] = post.moments(mset.indices)
        refresh_gram(gram, moments, mset.y, i)
        s[i] = True
        support = weights_posterior(s, gram, beta)
        residual = mset.y - moments[:, support.active] @ support.w
    state = EngineState(mset, N, posteriors, moments, support, gram, beta, np.zeros(N, complex))
    state.x_hat = reconstruct(state)
    return state


def point_frequency_update(eta_vec, prior: VmParam, indices, N: int) -> tuple[float, bool]:
    """Maximizer of Re(conj(eta_a) e^{j theta}) + Re(eta^H a(theta)) on an 8N grid, Newton-polished."""
    fset = FreqFactorSet.from_vector(indices, eta_vec, prior)
    return point_maximize(fset, POINT_GRID_FACTOR * N, POINT_NEWTON_STEPS)


def _point_posterior(fset: FreqFactorSet, N: int) -> FreqPosterior:
    theta, degenerate = point_maximize(fset, POINT_GRID_FACTOR * N, POINT_NEWTON_STEPS)
    return FreqPosterior.dirac(theta, degenerate)


def _update_component(state: EngineState, i: int, config: EngineConfig) -> None:
    sup = state.support
    mset = state.mset
    eta = interference_cancelled_eta(mset.y, state.moments, sup.active, sup.w, sup.C, i, state.beta.nu)
    prior = config.prior_for(i)
    fset = FreqFactorSet.from_vector(mset.indices, eta, prior)
    if config.mode == "point":
        post = _point_posterior(fset, state.N)
    else:
        post = heuristic1(fset, config.D) if config.heuristic == "h1" else heuristic2(fset)
    state.posteriors[i] = post
    state.moments[:, i] = post.moments(mset.indices)
    refresh_gram(state.gram, state.moments, mset.y, i)


def iterate(state: EngineState, config: EngineConfig) -> EngineState:
    """One sweep: support search, model parameters, then the active frequency posteriors."""
    support = maximize_support(state.support.s, state.gram, state.beta)
    state.flip_history.append(support.flips)
    state.support = support.sorted()
    if config.learn_beta:
        state.beta = update_all(state)
    for i in state.support.active:
        _update_component(state, int(i), config)
    state.x_hat = reconstruct(state)
    state.iteration += 1
    return state


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """||new - old|| / ||old||, with 0/0 read as no change."""
    num = float(np.linalg.norm(new - old))
    den = float(np.linalg.norm(old))
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return num / den


def result_from_state(state: EngineState, converged: bool) -> EstimationResult:
    sup = state.support.sorted()
    freqs = np.array([state.posteriors[i].point_estimate for i in sup.active], dtype=float)
    return EstimationResult(
        K_hat=int(sup.size),
        freqs=wrap_angle(freqs) if freqs.size else freqs,
        amps=sup.w.copy(),
        components=sup.active.copy(),
        posteriors=[state.posteriors[i] for i in sup.active],
        x_hat=state.x_hat.copy(),
        beta=state.beta,
        iters=state.iteration,
        converged=converged,
        flip_history=list(state.flip_history),
    )


def run(mset: MeasurementSet, N: int, config: Optional[EngineConfig] = None) -> EstimationResult:
    """Estimate the number of sinusoids, their frequencies and amplitudes."""
    config = EngineConfig() if config is None else config
    state = initialize(mset, N, config)
    converged = False
    for _ in range(config.max_iters):
        previous = state.x_hat.copy()
        iterate(state, config)
        change = relative_change(state.x_hat, previous)
        log.debug("iteration %d: K=%d change=%.3e", state.iteration, state.support.size, change)
        if change < config.rel_tol:
            converged = True
            break
    return result_from_state(state, converged)


def _vm_neg_kl(post_eta: complex, prior: VmParam) -> float:
    """E_q[ln p] + H(q) for a von Mises q and von Mises prior p."""
    k = abs(post_eta)
    log_i0 = float(log_scaled_bessel_i(0, k)) + k
    entropy = math.log(2 * math.pi) + log_i0 - k * float(mean_resultant_length(k))
    ka = prior.kappa
    first = (
        float(mean_resultant_length(k)) * np.exp(1j * np.angle(post_eta)) if k > 0 else 0j
    )
    cross = float(np.real(np.conj(prior.eta) * first)) - math.log(2 * math.pi) - (
        float(log_scaled_bessel_i(0, ka)) + ka
    )
    return cross + entropy


def _mixture_neg_kl(post: FreqPosterior, prior: VmParam) -> float:
    grid = -np.pi + 2 * np.pi * np.arange(ENTROPY_GRID) / ENTROPY_GRID
    mix = post.mixture
    kap = np.abs(mix.etas)
    log_norm = np.asarray(log_scaled_bessel_i(0, kap)) + kap + math.log(2 * math.pi)
    log_comp = np.real(np.conj(mix.etas)[:, None] * np.exp(1j * grid)[None, :]) - log_norm[:, None]
    log_q = logsumexp(log_comp, axis=0, b=mix.weights[:, None])
    q = np.exp(log_q)
    dx = 2 * np.pi / ENTROPY_GRID
    entropy = -float(np.sum(q * log_q) * dx)
    ka = prior.kappa
    first = post.moment(1)
    cross = float(np.real(np.conj(prior.eta) * first)) - math.log(2 * math.pi) - (
        float(log_scaled_bessel_i(0, ka)) + ka
    )
    return cross + entropy


def elbo_diagnostic(state: EngineState, config: Optional[EngineConfig] = None) -> float:
    """Variational lower bound under the current approximate posterior.

    Frequency terms of point-mass posteriors are left out (their entropy
    is unbounded below); inactive components contribute nothing because
    their factor equals the prior.
    """
    config = EngineConfig() if config is None else config
    mset, beta, sup = state.mset, state.beta, state.support
    M, N, K = mset.M, state.N, sup.size
    expected_sq = M * noise_variance_estimate(mset.y, state.moments, sup, state.gram)
    total = -M * math.log(math.pi * beta.nu) - expected_sq / beta.nu
    total += K * math.log(beta.rho) + (N - K) * math.log(1 - beta.rho)
    if K:
        second = np.abs(sup.w) ** 2 + np.real(np.diag(sup.C))
        total += float(np.sum(-math.log(math.pi * beta.tau) - second / beta.tau))
        sign, logdet = np.linalg.slogdet(sup.C)
        total += K * math.log(math.pi * math.e) + float(logdet)
    for i in sup.active:
        post = state.posteriors[i]
        if post.is_point:
            continue
        prior = config.prior_for(int(i))
        if len(post.mixture) == 1:
            total += _vm_neg_kl(complex(post.mixture.etas[0]), prior)
        else:
            total += _mixture_neg_kl(post, prior)
    return float(total)
