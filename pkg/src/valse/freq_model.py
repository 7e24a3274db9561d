"""Frequency posteriors.

The posterior of one frequency is proportional to

    p(theta) * prod_m exp(Re(conj(eta_m) * exp(1j * m * theta)))

with one factor per measured index ``m``. This module builds those factors
(coherent or from the periodogram) and reduces the product to either a
mixture of at most ``D`` von Mises pdfs (Heuristic 1) or a single von Mises
pdf (Heuristic 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .circular import (
    TWO_PI,
    VmMixture,
    VmParam,
    bessel_ratio,
    inv_mrl_from_complement,
    log_scaled_bessel_i,
    solve_concentration,
    wrap_angle,
)

DEFAULT_D = 50


@dataclass(frozen=True)
class MeasurementSet:
    """Observed samples ``y`` at the sorted, distinct indices of a length-N signal."""

    indices: np.ndarray
    N: int
    y: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("measurement index set must be a non-empty 1-d sequence")
        if not np.issubdtype(idx.dtype, np.integer):
            if not np.all(np.equal(np.mod(idx, 1), 0)):
                raise ValueError("measurement indices must be integers")
        idx = idx.astype(np.int64)
        y = np.asarray(self.y, dtype=complex).ravel()
        N = int(self.N)
        if np.any(np.diff(idx) <= 0):
            raise ValueError("measurement indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= N:
            raise ValueError(f"measurement indices must lie in [0, {N - 1}]")
        if y.shape != idx.shape:
            raise ValueError(f"expected {idx.size} samples, got {y.size}")
        if not np.all(np.isfinite(y)):
            raise ValueError("samples must be finite")
        idx.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "N", N)

    @classmethod
    def complete(cls, y) -> "MeasurementSet":
        y = np.asarray(y, dtype=complex).ravel()
        return cls(np.arange(y.size), y.size, y)

    @property
    def M(self) -> int:
        return self.indices.size

    def with_samples(self, y) -> "MeasurementSet":
        return MeasurementSet(self.indices, self.N, y)


def _indices(where) -> np.ndarray:
    if isinstance(where, MeasurementSet):
        return where.indices
    return np.asarray(where)


def steering(mset, theta):
    """Steering vector exp(1j * theta * m) over the measured indices.

    ``mset`` may also be a plain index array. An array of angles gives one
    row per angle.
    """
    return np.exp(1j * np.multiply.outer(np.asarray(theta, dtype=float), _indices(mset)))


@dataclass
class FreqFactorSet:
    """Prior parameter plus one exponent term ``eta_m`` per harmonic ``m >= 1``."""

    prior: VmParam = field(default_factory=VmParam)
    harmonics: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    etas: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))

    def __post_init__(self):
        if not isinstance(self.prior, VmParam):
            self.prior = VmParam(self.prior)
        m = np.atleast_1d(np.asarray(self.harmonics)).astype(np.int64)
        etas = np.atleast_1d(np.asarray(self.etas, dtype=complex))
        if m.shape != etas.shape:
            raise ValueError("harmonics and etas must have equal length")
        if np.any(m < 1):
            raise ValueError("harmonic indices must be >= 1")
        if np.unique(m).size != m.size:
            raise ValueError("harmonic indices must be distinct")
        if not np.all(np.isfinite(etas)):
            raise ValueError("factor parameters must be finite")
        self.harmonics = m
        self.etas = etas

    @classmethod
    def from_vector(cls, indices, eta_vec, prior: Optional[VmParam] = None) -> "FreqFactorSet":
        """Factors from a vector over the measured indices; the constant m = 0 term is dropped."""
        idx = np.asarray(indices)
        eta_vec = np.asarray(eta_vec, dtype=complex)
        keep = idx != 0
        return cls(prior if prior is not None else VmParam(), idx[keep], eta_vec[keep])

    def __len__(self) -> int:
        return self.harmonics.size

    def nonzero(self) -> tuple[np.ndarray, np.ndarray]:
        """Harmonics and etas with ``eta != 0``; zero factors are constant."""
        keep = self.etas != 0
        return self.harmonics[keep], self.etas[keep]

    def exponent(self, theta):
        return exponent_derivatives(self, theta)[0]


def exponent_derivatives(fset: FreqFactorSet, theta):
    """f, f' and f'' of f(theta) = Re(conj(eta_a) e^{j theta} + sum_m conj(eta_m) e^{j m theta})."""
    theta = np.asarray(theta, dtype=float)
    m = np.concatenate([[1], fset.harmonics]).astype(float)
    etas = np.concatenate([[fset.prior.eta], fset.etas])
    terms = np.conj(etas) * np.exp(1j * np.multiply.outer(theta, m))
    f0 = terms.real.sum(axis=-1)
    f1 = -(terms.imag * m).sum(axis=-1)
    f2 = -(terms.real * m * m).sum(axis=-1)
    return f0, f1, f2


def interference_cancelled_eta(y, moments, active, w, C, i, nu):
    """Factor vector of component ``i`` with the other active components removed.

    ``moments`` is the M x N matrix whose columns are the moment vectors,
    ``active`` lists the active components in the order of ``w`` and ``C``.
    Inactive components get the zero vector.
    """
    if nu <= 0:
        raise ValueError("noise variance must be positive")
    active = np.asarray(active, dtype=np.int64)
    pos = np.flatnonzero(active == i)
    if pos.size == 0:
        return np.zeros(moments.shape[0], complex)
    k = int(pos[0])
    others = np.delete(np.arange(active.size), k)
    A_o = moments[:, active[others]]
    residual = y - A_o @ w[others]
    return (2.0 / nu) * (residual * np.conj(w[k]) - A_o @ C[others, k])


def eta_for_component(i, state):
    """Factor vector for component ``i`` of an engine state."""
    sup = state.support
    return interference_cancelled_eta(
        state.mset.y, state.moments, sup.active, sup.w, sup.C, i, state.beta.nu
    )


def sample_autocovariance(mset: MeasurementSet, y=None) -> tuple[np.ndarray, np.ndarray]:
    """Lags t > 0 present in the index set and gamma_t = (1/M) sum y_k conj(y_l) over m_k - m_l = t."""
    y = mset.y if y is None else np.asarray(y, dtype=complex)
    M = mset.M
    if M < 2:
        return np.zeros(0, np.int64), np.zeros(0, complex)
    l, k = np.triu_indices(M, 1)
    lags = mset.indices[k] - mset.indices[l]
    prods = y[k] * np.conj(y[l])
    length = int(lags.max()) + 1
    gamma = np.bincount(lags, prods.real, length) + 1j * np.bincount(lags, prods.imag, length)
    present = np.zeros(length, bool)
    present[lags] = True
    t = np.flatnonzero(present)
    return t, gamma[t] / M


def noncoherent_factors(mset: MeasurementSet, nu: float, y=None) -> FreqFactorSet:
    """Factors of exp(|y^H a(theta)|^2 / (nu M)), written over the index lags.

    ``y`` defaults to the measured samples; the initialization passes
    residuals here instead.
    """
    if nu <= 0:
        raise ValueError("noise variance must be positive")
    t, gamma = sample_autocovariance(mset, y)
    return FreqFactorSet(VmParam(), t, (2.0 / nu) * gamma)


@dataclass
class FreqPosterior:
    """Approximate posterior of one frequency.

    A von Mises mixture, or a point mass at ``point`` when ``is_point``.
    """

    mixture: VmMixture = field(default_factory=lambda: VmMixture.single(0))
    point: Optional[float] = None
    degenerate: bool = False

    @classmethod
    def uniform(cls) -> "FreqPosterior":
        return cls(VmMixture.single(0))

    @classmethod
    def dirac(cls, theta: float, degenerate: bool = False) -> "FreqPosterior":
        theta = wrap_angle(theta)
        return cls(VmMixture.single(VmParam.from_polar(1.0, theta)), theta, degenerate)

    @property
    def is_point(self) -> bool:
        return self.point is not None

    def moment(self, n):
        """E[exp(j n Theta)] for integer ``n`` (scalar or array)."""
        if self.is_point:
            out = np.exp(1j * np.asarray(n) * self.point)
            return complex(out) if out.ndim == 0 else out
        return self.mixture.moment(n)

    def moments(self, indices) -> np.ndarray:
        return np.atleast_1d(self.moment(np.asarray(indices)))

    @property
    def point_estimate(self) -> float:
        if self.is_point:
            return self.point
        return wrap_angle(np.angle(self.moment(1)))

    @property
    def kappa(self) -> float:
        """Concentration of a single von Mises posterior (inf for a point mass)."""
        if self.is_point:
            return np.inf
        if len(self.mixture) != 1:
            raise ValueError("posterior is a mixture")
        return float(abs(self.mixture.etas[0]))


def posterior_moment(post: FreqPosterior, n):
    return post.moment(n)


def _wrapped_components(harmonics, etas):
    kt = np.atleast_1d(solve_concentration(harmonics, np.abs(etas)))
    return kt, np.angle(etas)


def heuristic1_candidates(fset: FreqFactorSet, D: int = DEFAULT_D) -> np.ndarray:
    """Greedy search for the D mixture parameters of largest magnitude.

    Harmonics are swept in increasing order; after every step only the D
    largest candidates survive, ties going to the lower candidate index.
    """
    if D < 1:
        raise ValueError("D must be a positive integer")
    harmonics, etas = fset.nonzero()
    order = np.argsort(harmonics, kind="stable")
    harmonics, etas = harmonics[order], etas[order]
    xi = np.array([fset.prior.eta])
    if harmonics.size == 0:
        return xi
    kt, mus = _wrapped_components(harmonics, etas)
    for m, k, mu in zip(harmonics, kt, mus):
        shifts = k * np.exp(1j * (mu + TWO_PI * np.arange(m)) / m)
        cand = (xi[:, None] + shifts[None, :]).ravel()
        keep = np.argsort(-np.abs(cand), kind="stable")[:D]
        xi = cand[keep]
    return xi


def mixture_from_candidates(xi) -> VmMixture:
    """Mixture with weights proportional to I_0(|xi|)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    kap = np.abs(xi)
    log_w = np.asarray(log_scaled_bessel_i(0, kap)) + kap
    w = np.exp(log_w - log_w.max())
    keep = w > 0
    return VmMixture(w[keep], xi[keep])


def heuristic1(fset: FreqFactorSet, D: int = DEFAULT_D) -> FreqPosterior:
    """Posterior reduced to a mixture of at most D von Mises pdfs."""
    return FreqPosterior(mixture_from_candidates(heuristic1_candidates(fset, D)))


def heuristic2_search(fset: FreqFactorSet) -> np.ndarray:
    """Candidates of the phase-alignment search, one per mean of the top harmonic.

    Returns an empty array when every factor is zero.
    """
    harmonics, etas = fset.nonzero()
    if harmonics.size == 0:
        return np.zeros(0, complex)
    order = np.argsort(-harmonics, kind="stable")
    harmonics, etas = harmonics[order], etas[order]
    kt, mus = _wrapped_components(harmonics, etas)
    m1 = harmonics[0]
    xi = fset.prior.eta + kt[0] * np.exp(1j * (mus[0] + TWO_PI * np.arange(m1)) / m1)
    for m, k, mu in zip(harmonics[1:], kt[1:], mus[1:]):
        r = np.round((m * np.angle(xi) - mu) / TWO_PI)
        xi = xi + k * np.exp(1j * (mu + TWO_PI * r) / m)
    return xi


def heuristic2(fset: FreqFactorSet) -> FreqPosterior:
    """Posterior reduced to one von Mises pdf by a Taylor expansion at the dominant mode."""
    xi = heuristic2_search(fset)
    if xi.size == 0:
        return FreqPosterior(VmMixture.single(fset.prior))
    best = xi[int(np.argmax(np.abs(xi)))]
    theta_bar = float(np.angle(best))
    _, f1, f2 = exponent_derivatives(fset, theta_bar)
    f1, f2 = float(f1), float(f2)
    if not f2 < 0:
        return FreqPosterior(VmMixture.single(best))
    theta_hat = wrap_angle(theta_bar - f1 / f2)
    # A(kappa) = exp(0.5 / f2), solved through its complement for sharp peaks
    kappa_hat = float(inv_mrl_from_complement(-np.expm1(0.5 / f2)))
    return FreqPosterior(VmMixture.single(VmParam.from_polar(kappa_hat, theta_hat)))


def point_maximize(fset: FreqFactorSet, n_grid: int, newton_steps: int = 20) -> tuple[float, bool]:
    """Maximizer of the exponent f by grid search plus safeguarded Newton.

    Returns ``(theta, degenerate)``; an identically zero exponent gives
    ``(0.0, True)``.
    """
    harmonics, etas = fset.nonzero()
    if harmonics.size == 0 and fset.prior.is_uniform():
        return 0.0, True
    grid = -np.pi + TWO_PI * np.arange(n_grid) / n_grid
    f0 = exponent_derivatives(fset, grid)[0]
    best = int(np.argmax(f0))
    theta, f_best = float(grid[best]), float(f0[best])
    cell = TWO_PI / n_grid
    lo, hi = theta - cell, theta + cell
    for _ in range(newton_steps):
        _, f1, f2 = exponent_derivatives(fset, theta)
        f1, f2 = float(f1), float(f2)
        if f2 < 0:
            cand = theta - f1 / f2
        else:
            cand = theta + np.sign(f1) * 0.5 * cell
        cand = min(max(cand, lo), hi)
        f_cand = float(exponent_derivatives(fset, cand)[0])
        if f_cand < f_best:
            break
        step = abs(cand - theta)
        theta, f_best = cand, f_cand
        if step <= 1e-15 * max(1.0, abs(theta)):
            break
    return wrap_angle(theta), False
