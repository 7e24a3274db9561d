"""Model parameters beta = (nu, rho, tau): initialization and updates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

TAU_MIN = 1e-12
_NU_FLOOR_REL = 1e-12
_EPS = 1e-30


@dataclass(frozen=True)
class Hyperparams:
    """Noise variance ``nu``, activation probability ``rho`` and weight prior variance ``tau``."""

    nu: float
    rho: float
    tau: float

    def __post_init__(self):
        for name in ("nu", "rho", "tau"):
            val = float(getattr(self, name))
            if not math.isfinite(val) or val <= 0:
                raise ValueError(f"{name} must be positive and finite, got {val}")
            object.__setattr__(self, name, val)
        if not self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")

    def replace(self, **changes) -> "Hyperparams":
        fields = {"nu": self.nu, "rho": self.rho, "tau": self.tau}
        fields.update(changes)
        return Hyperparams(**fields)


def nu_floor(y) -> float:
    y = np.asarray(y)
    return _NU_FLOOR_REL * (float(np.vdot(y, y).real) / y.size + _EPS)


def rho_bounds(N: int) -> tuple[float, float]:
    return 1.0 / (2 * N), 1.0 - 1.0 / (2 * N)


def noise_variance_estimate(y, moments, support, gram) -> float:
    """Unfloored nu-hat: fit error plus weight and frequency uncertainty, per measurement."""
    y = np.asarray(y, dtype=complex)
    M = y.size
    if support.size == 0:
        return float(np.vdot(y, y).real) / M
    A = moments[:, support.active]
    resid = y - A @ support.w
    J = gram.J[np.ix_(support.active, support.active)]
    fit = float(np.vdot(resid, resid).real) / M
    spread = float(np.real(np.sum(J * support.C.T))) / M
    norms = np.sum(np.abs(A) ** 2, axis=0)
    freq = float(np.sum(np.abs(support.w) ** 2 * (1.0 - norms / M)))
    return fit + spread + freq


def update_noise_var(state) -> float:
    """nu-hat for an engine state, floored at a tiny fraction of the data power."""
    y = state.mset.y
    nu = noise_variance_estimate(y, state.moments, state.support, state.gram)
    return max(nu, nu_floor(y))


def rho_tau_estimate(support, N: int, tau_old: float) -> tuple[float, float]:
    K = support.size
    lo, hi = rho_bounds(N)
    rho = min(max(K / N, lo), hi)
    if K == 0:
        return rho, tau_old
    second = float(np.vdot(support.w, support.w).real + np.real(np.trace(support.C)))
    return rho, max(second / K, TAU_MIN)


def update_rho_tau(state) -> tuple[float, float]:
    return rho_tau_estimate(state.support, state.N, state.beta.tau)


def update_all(state) -> Hyperparams:
    """nu, then rho and tau, from the same state."""
    nu = update_noise_var(state)
    rho, tau = update_rho_tau(state)
    return Hyperparams(nu, rho, tau)


def autocovariance_matrix(mset) -> np.ndarray:
    """M x M Hermitian Toeplitz estimate of E[y y^H] from the sample autocovariance.

    Lags missing from the index set are filled with zero.
    """
    from .freq_model import sample_autocovariance

    M = mset.M
    col = np.zeros(M, complex)
    col[0] = float(np.vdot(mset.y, mset.y).real) / M
    lags, gamma = sample_autocovariance(mset)
    keep = lags < M
    col[lags[keep]] = gamma[keep]
    return toeplitz(col)


def init_hyperparams(mset, N: int) -> Hyperparams:
    """Data-driven starting values of beta.

    nu is the mean of the smallest quarter of the eigenvalues of the
    autocovariance estimate, rho = 1/2, and tau shares the remaining power
    across the expected number of components.
    """
    M = mset.M
    if M < 2:
        raise ValueError("initialization needs at least two measurements")
    eig = np.linalg.eigvalsh(autocovariance_matrix(mset))
    quarter = int(math.ceil(M / 4))
    nu = float(np.mean(np.maximum(eig[:quarter], 0.0)))
    nu = max(nu, nu_floor(mset.y))
    rho = 0.5
    power = float(np.vdot(mset.y, mset.y).real) / M
    tau = (power - nu) / (rho * N)
    if tau <= 0:
        tau = nu / N
    return Hyperparams(nu, rho, max(tau, TAU_MIN))


def lower_bound_beta(beta: Hyperparams, y, support, gram, N: int) -> float:
    """The beta-dependent part of the variational lower bound, constant dropped."""
    y = np.asarray(y, dtype=complex)
    M = y.size
    K = support.size
    ll = -float(np.vdot(y, y).real)
    log_nu = -M * math.log(beta.nu)
    if K:
        idx = support.active
        J = gram.J[np.ix_(idx, idx)]
        w = support.w
        ll += 2 * float(np.real(np.vdot(w, gram.h[idx])))
        ll -= float(np.real(np.vdot(w, J @ w)))
        ll -= float(np.real(np.sum(J * support.C.T)))
        second = float(np.vdot(w, w).real + np.real(np.trace(support.C)))
    else:
        second = 0.0
    return (
        ll / beta.nu
        + log_nu
        - second / beta.tau
        - K * math.log(beta.tau)
        + K * math.log(beta.rho)
        + (N - K) * math.log(1 - beta.rho)
    )
