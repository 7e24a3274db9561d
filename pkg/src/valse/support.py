"""Support detection for the Bernoulli-Gaussian weights.

Greedy single-flip ascent on ln Z(s), with the weight posterior carried
along through rank-one updates of its mean and covariance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .hyperparams import Hyperparams

log = logging.getLogger(__name__)

IMPROVEMENT_TOL = 1e-12
REFRESH_EVERY = 64
FLIP_BUDGET_PER_COMPONENT = 4


class DegenerateStateError(ArithmeticError):
    """Rank-one bookkeeping hit a non-positive variance; refresh by direct solve."""


@dataclass
class GramData:
    """J_ij = a_i^H a_j with J_ii = M, and h_i = a_i^H y."""

    J: np.ndarray
    h: np.ndarray
    M: int

    @property
    def N(self) -> int:
        return self.h.size


def build_gram(moments, y) -> GramData:
    """Gram data of the moment vectors, given as an M x N matrix or a list of vectors."""
    y = np.asarray(y, dtype=complex)
    if isinstance(moments, (list, tuple)):
        if any(np.shape(a) != y.shape for a in moments):
            raise ValueError("every moment vector must have one entry per measurement")
        A = np.column_stack(moments) if moments else np.zeros((y.size, 0), complex)
    else:
        A = np.asarray(moments, dtype=complex)
    if A.ndim != 2 or A.shape[0] != y.size:
        raise ValueError(f"moment matrix must have {y.size} rows")
    M = y.size
    J = A.conj().T @ A
    J = 0.5 * (J + J.conj().T)
    np.fill_diagonal(J, M)
    return GramData(J, A.conj().T @ y, M)


def refresh_gram(gram: GramData, moments: np.ndarray, y, i: int) -> None:
    """Recompute row and column ``i`` after moment vector ``i`` changed."""
    a = moments[:, i]
    col = moments.conj().T @ a
    col[i] = gram.M
    gram.J[:, i] = col
    gram.J[i, :] = col.conj()
    gram.h[i] = np.vdot(a, y)


@dataclass
class SupportState:
    """Active set with the weight posterior mean ``w`` and covariance ``C``.

    ``active`` lists the active components in the order used by ``w`` and
    ``C``; ``s`` is the matching indicator vector.
    """

    s: np.ndarray
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    w: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    C: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), complex))
    flips: int = 0

    @classmethod
    def empty(cls, N: int) -> "SupportState":
        return cls(np.zeros(N, bool))

    @property
    def size(self) -> int:
        return self.active.size

    def copy(self) -> "SupportState":
        return SupportState(self.s.copy(), self.active.copy(), self.w.copy(), self.C.copy(), self.flips)

    def sorted(self) -> "SupportState":
        """Same state with the active list in increasing index order."""
        order = np.argsort(self.active, kind="stable")
        return SupportState(
            self.s.copy(), self.active[order], self.w[order], self.C[np.ix_(order, order)], self.flips
        )

    def full_weights(self) -> np.ndarray:
        out = np.zeros(self.s.size, complex)
        out[self.active] = self.w
        return out


def _as_indicator(s, N=None) -> np.ndarray:
    s = np.asarray(s).astype(bool).ravel()
    if N is not None and s.size != N:
        raise ValueError(f"support vector must have length {N}")
    return s


def _regularized(gram: GramData, idx, beta: Hyperparams) -> np.ndarray:
    return gram.J[np.ix_(idx, idx)] + (beta.nu / beta.tau) * np.eye(idx.size)


def ln_Z(s, gram: GramData, beta: Hyperparams) -> float:
    """ln Z(s) up to the additive constant shared by every support."""
    idx = np.flatnonzero(_as_indicator(s, gram.N))
    if idx.size == 0:
        return 0.0
    factor = cho_factor(_regularized(gram, idx, beta), lower=True)
    logdet = 2.0 * np.sum(np.log(np.real(np.diag(factor[0]))))
    hs = gram.h[idx]
    quad = np.real(np.vdot(hs, cho_solve(factor, hs)))
    return float(-logdet + quad / beta.nu + idx.size * np.log(beta.rho * beta.nu / ((1 - beta.rho) * beta.tau)))


def weights_posterior(s, gram: GramData, beta: Hyperparams) -> SupportState:
    """Direct solve of the weight posterior for support ``s``."""
    s = _as_indicator(s, gram.N)
    idx = np.flatnonzero(s)
    if idx.size == 0:
        return SupportState(s.copy())
    factor = cho_factor(_regularized(gram, idx, beta), lower=True)
    C = beta.nu * cho_solve(factor, np.eye(idx.size, dtype=complex))
    C = 0.5 * (C + C.conj().T)
    w = cho_solve(factor, gram.h[idx])
    return SupportState(s.copy(), idx.astype(np.int64), w, C)


def _log_odds(beta: Hyperparams) -> float:
    return float(np.log(beta.rho / (1 - beta.rho)))


def activation_terms(ks, state: SupportState, gram: GramData, beta: Hyperparams):
    """Vectorized (delta, u, v) for activating each inactive index in ``ks``."""
    ks = np.asarray(ks, dtype=np.int64)
    nu = beta.nu
    base = gram.M + nu / beta.tau
    if state.size:
        Jsk = gram.J[np.ix_(state.active, ks)]
        c = state.C @ Jsk / nu
        schur = base - np.real(np.sum(np.conj(Jsk) * c, axis=0))
        resid = gram.h[ks] - Jsk.conj().T @ state.w
    else:
        schur = np.full(ks.size, base)
        resid = gram.h[ks]
    with np.errstate(divide="ignore", invalid="ignore"):
        v = nu / schur
        u = v * resid / nu
        delta = np.log(v / beta.tau) + np.abs(u) ** 2 / v + _log_odds(beta)
    return delta, u, v


def deactivation_terms(state: SupportState, beta: Hyperparams) -> np.ndarray:
    """Delta for deactivating each entry of ``state.active``, in that order."""
    ckk = np.real(np.diag(state.C))
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.log(ckk / beta.tau) - np.abs(state.w) ** 2 / ckk - _log_odds(beta)


def delta_activate(k: int, state: SupportState, gram: GramData, beta: Hyperparams):
    """Change of ln Z from activating ``k``, with the update scalars u_k and v_k."""
    if state.s[k]:
        raise ValueError(f"component {k} is already active")
    delta, u, v = activation_terms([k], state, gram, beta)
    if not v[0] > 0:
        raise DegenerateStateError(f"non-positive variance {v[0]} when activating {k}")
    return float(delta[0]), complex(u[0]), float(v[0])


def delta_deactivate(k: int, state: SupportState, beta: Hyperparams) -> float:
    """Change of ln Z from deactivating ``k``."""
    pos = _position(state, k)
    ckk = float(np.real(state.C[pos, pos]))
    if ckk < 1e-300:
        raise DegenerateStateError(f"posterior variance {ckk} of component {k} is degenerate")
    return float(-np.log(ckk / beta.tau) - abs(state.w[pos]) ** 2 / ckk - _log_odds(beta))


def _position(state: SupportState, k: int) -> int:
    pos = np.flatnonzero(state.active == k)
    if pos.size == 0:
        raise ValueError(f"component {k} is not active")
    return int(pos[0])


def apply_activate(k: int, u: complex, v: float, state: SupportState, gram: GramData, beta: Hyperparams) -> SupportState:
    """Rank-one update of the posterior for activating ``k``.

    ``u`` and ``v`` must come from :func:`delta_activate` on the same state.
    """
    n = state.size
    c = state.C @ gram.J[state.active, k] / beta.nu if n else np.zeros(0, complex)
    w = np.append(state.w - c * u, u)
    vec = np.append(c, -1.0)
    C = np.zeros((n + 1, n + 1), complex)
    C[:n, :n] = state.C
    C += v * np.outer(vec, vec.conj())
    s = state.s.copy()
    s[k] = True
    return SupportState(s, np.append(state.active, k).astype(np.int64), w, C, state.flips)


def apply_deactivate(k: int, state: SupportState) -> SupportState:
    """Rank-one downdate of the posterior for deactivating ``k``."""
    pos = _position(state, k)
    ckk = float(np.real(state.C[pos, pos]))
    if ckk < 1e-300:
        raise DegenerateStateError(f"posterior variance {ckk} of component {k} is degenerate")
    col = state.C[:, pos]
    w = state.w - col * (state.w[pos] / ckk)
    C = state.C - np.outer(col, col.conj()) / ckk
    keep = np.arange(state.size) != pos
    s = state.s.copy()
    s[k] = False
    return SupportState(s, state.active[keep], w[keep], C[np.ix_(keep, keep)], state.flips)


def all_deltas(state: SupportState, gram: GramData, beta: Hyperparams):
    """Delta of every single-bit flip, plus the (u, v) of each activation.

    Returns ``(delta, u, v)`` as length-N arrays; ``u`` and ``v`` are nan at
    active indices.
    """
    N = gram.N
    delta = np.full(N, -np.inf)
    u = np.full(N, np.nan, complex)
    v = np.full(N, np.nan)
    inactive = np.flatnonzero(~state.s)
    if inactive.size:
        delta[inactive], u[inactive], v[inactive] = activation_terms(inactive, state, gram, beta)
    if state.size:
        delta[state.active] = deactivation_terms(state, beta)
    return delta, u, v


def _healthy(delta, v, state, beta) -> bool:
    inactive = ~state.s
    if np.any(~(v[inactive] > 0)) or np.any(np.isnan(delta)):
        return False
    if state.size and np.min(np.real(np.diag(state.C))) < 1e-12 * beta.tau:
        return False
    return True


def maximize_support(s_init, gram: GramData, beta: Hyperparams) -> SupportState:
    """Greedy ascent of ln Z from ``s_init``: flip the best single bit while it helps.

    The returned state has no single flip improving ln Z by more than
    1e-12; its ``flips`` attribute counts the accepted flips.
    """
    s_init = _as_indicator(s_init, gram.N)
    state = weights_posterior(s_init, gram, beta)
    budget = FLIP_BUDGET_PER_COMPONENT * gram.N
    flips = since_refresh = 0
    while True:
        delta, u, v = all_deltas(state, gram, beta)
        if not _healthy(delta, v, state, beta):
            state = weights_posterior(state.s, gram, beta)
            since_refresh = 0
            delta, u, v = all_deltas(state, gram, beta)
            delta = np.where(np.isnan(delta), -np.inf, delta)
        k = int(np.argmax(delta))
        if not delta[k] > IMPROVEMENT_TOL:
            break
        if flips >= budget:
            log.warning("support search stopped after %d flips without reaching a local maximum", flips)
            break
        if state.s[k]:
            state = apply_deactivate(k, state)
        else:
            state = apply_activate(k, u[k], float(v[k]), state, gram, beta)
        flips += 1
        since_refresh += 1
        if since_refresh >= REFRESH_EVERY:
            state = weights_posterior(state.s, gram, beta)
            since_refresh = 0
    state.flips = flips
    return state


def activation_threshold(tau: float, rho: float, C_tilde):
    """Right-hand side of the activation test |w~|^2 / C~ > threshold."""
    C_tilde = np.asarray(C_tilde, dtype=float)
    out = (1.0 + C_tilde / tau) * np.log((1.0 + tau / C_tilde) * (1.0 - rho) / rho)
    if out.ndim == 0:
        return float(out)
    return out
