"""Von Mises machinery: Bessel ratios, pdfs, circular moments and the
approximation of an m-fold wrapped von Mises pdf by an m-component mixture.

A von Mises law is carried around as the single complex number
``eta = kappa * exp(1j * mu)``; products of von Mises pdfs are then plain
additions of ``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np
from scipy.special import ive

TWO_PI = 2.0 * np.pi

# below this complement 1 - rho the rational seed for A^-1 loses all digits
_COMPLEMENT_ASYMPTOTIC = 1e-10


def wrap_angle(theta):
    """Map angles onto the canonical interval [-pi, pi)."""
    out = np.mod(np.asarray(theta, dtype=float) + np.pi, TWO_PI) - np.pi
    out = np.where(out >= np.pi, out - TWO_PI, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class VmParam:
    """Von Mises parameter ``eta = kappa * e^{j mu}``; ``eta == 0`` is uniform."""

    eta: complex = 0j

    def __post_init__(self):
        eta = complex(self.eta)
        if not np.isfinite(eta.real) or not np.isfinite(eta.imag):
            raise ValueError(f"von Mises parameter must be finite, got {eta!r}")
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_polar(cls, kappa: float, mu: float) -> "VmParam":
        if kappa < 0:
            raise ValueError("concentration must be non-negative")
        return cls(kappa * np.exp(1j * mu))

    @property
    def kappa(self) -> float:
        return abs(self.eta)

    @property
    def mu(self) -> float:
        return wrap_angle(np.angle(self.eta))

    def is_uniform(self) -> bool:
        return self.eta == 0


ParamLike = Union[VmParam, complex, float]


def _eta(param: ParamLike) -> complex:
    if isinstance(param, VmParam):
        return param.eta
    return VmParam(param).eta


@dataclass
class VmMixture:
    """Finite mixture of von Mises pdfs.

    Weights are normalized on construction. ``etas`` holds one complex
    parameter per component.
    """

    weights: np.ndarray
    etas: np.ndarray = field(default_factory=lambda: np.zeros(1, complex))

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        etas = np.atleast_1d(np.asarray(self.etas, dtype=complex))
        if w.size == 0 or w.shape != etas.shape:
            raise ValueError("mixture needs matching, non-empty weight and parameter lists")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("mixture weights must be positive and finite")
        if not np.all(np.isfinite(etas)):
            raise ValueError("mixture parameters must be finite")
        self.weights = w / w.sum()
        self.etas = etas

    @classmethod
    def single(cls, param: ParamLike) -> "VmMixture":
        return cls(np.ones(1), np.array([_eta(param)]))

    def __len__(self) -> int:
        return self.weights.size

    def __iter__(self) -> Iterator[tuple[float, VmParam]]:
        for w, eta in zip(self.weights, self.etas):
            yield float(w), VmParam(eta)

    @property
    def components(self) -> list[tuple[float, VmParam]]:
        return list(self)

    def pdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros_like(theta)
        for w, eta in zip(self.weights, self.etas):
            out = out + w * vm_pdf(theta, eta)
        return out

    def moment(self, p):
        """Circular moments E[exp(j p Theta)] for integer ``p`` (scalar or array)."""
        p = np.asarray(p)
        kappas = np.abs(self.etas)
        mus = np.angle(self.etas)
        ratios = bessel_ratio(np.abs(p)[..., None], kappas)
        terms = self.weights * ratios * np.exp(1j * p[..., None] * mus)
        out = terms.sum(axis=-1)
        if out.ndim == 0:
            return complex(out)
        return out


# above this argument the scaled Bessel functions come from asymptotic series
_ASYMPTOTIC_KAPPA = 1e8


def _debye_series(nu, t):
    """1 + sum_k u_k(t) / nu^k, k = 1..4, for the uniform expansion of I_nu."""
    t2 = t * t
    u1 = t * (3.0 - 5.0 * t2) / 24.0
    u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2**2) / 1152.0
    u3 = t * t2 * (30375.0 - 369603.0 * t2 + 765765.0 * t2**2 - 425425.0 * t2**3) / 414720.0
    u4 = t2 * t2 * (
        4465125.0 - 94121676.0 * t2 + 349922430.0 * t2**2 - 446185740.0 * t2**3 + 185910725.0 * t2**4
    ) / 39813120.0
    inv = 1.0 / nu
    return 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * u4)))


def _log_ive_asymptotic(nu, x):
    """ln(I_nu(x) e^-x) for large x, any order nu >= 0."""
    nu = np.asarray(nu, dtype=float)
    x = np.asarray(x, dtype=float)
    nu, x = np.broadcast_arrays(nu, x)
    out = np.empty(x.shape)
    zero = nu == 0
    if np.any(zero):
        # Hankel: I_0(x) e^-x sqrt(2 pi x) = sum_k ((2k-1)!!)^2 / (k! (8x)^k)
        xz = x[zero]
        term = np.ones_like(xz)
        total = np.ones_like(xz)
        for k in range(1, 8):
            term = term * (2 * k - 1) ** 2 / (8.0 * k * xz)
            total = total + term
        out[zero] = np.log(total) - 0.5 * np.log(2 * np.pi * xz)
    pos = ~zero
    if np.any(pos):
        n = nu[pos]
        xp = x[pos]
        root = np.hypot(n, xp)
        t = n / root
        # nu * eta - x written without cancellation
        exponent = n * n / (root + xp) - n * np.arcsinh(n / xp)
        out[pos] = exponent - 0.5 * np.log(2 * np.pi * root) + np.log(_debye_series(n, t))
    return out


def log_scaled_bessel_i(p, kappa):
    """ln(I_p(kappa) e^{-kappa}), finite for any kappa > 0."""
    p_arr, k_arr = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(kappa, dtype=float))
    out = np.empty(k_arr.shape)
    big = k_arr > _ASYMPTOTIC_KAPPA
    if np.any(big):
        out[big] = _log_ive_asymptotic(p_arr[big], k_arr[big])
    small = ~big
    if np.any(small):
        with np.errstate(divide="ignore"):
            out[small] = np.log(ive(p_arr[small], k_arr[small]))
    return out


def bessel_ratio(p, kappa):
    """Ratio I_p(kappa) / I_0(kappa) of modified Bessel functions.

    Evaluated from exponentially scaled Bessel functions, with asymptotic
    series for large ``kappa``, so the ratio stays finite where I_p itself
    overflows. Broadcasts over ``p`` and ``kappa``.

    Raises:
        ValueError: if any order or concentration is negative or non-finite.
    """
    p_arr = np.asarray(p)
    k_arr = np.asarray(kappa, dtype=float)
    if np.any(p_arr < 0):
        raise ValueError("Bessel ratio order must be non-negative")
    if np.any(k_arr < 0) or not np.all(np.isfinite(k_arr)):
        raise ValueError("concentration must be finite and non-negative")
    if np.all(k_arr <= _ASYMPTOTIC_KAPPA):
        out = ive(p_arr, k_arr) / ive(0, k_arr)
    else:
        p_b, k_b = np.broadcast_arrays(p_arr, k_arr)
        out = np.empty(k_b.shape)
        big = k_b > _ASYMPTOTIC_KAPPA
        out[~big] = ive(p_b[~big], k_b[~big]) / ive(0, k_b[~big])
        out[big] = np.exp(_log_ive_asymptotic(p_b[big], k_b[big]) - _log_ive_asymptotic(0, k_b[big]))
    if np.ndim(out) == 0:
        return float(out)
    return out


def mean_resultant_length(kappa):
    """A(kappa) = I_1(kappa) / I_0(kappa)."""
    return bessel_ratio(1, kappa)


def _mrl_derivative(kappa, a):
    # A'(k) = 1 - A/k - A^2, A'(0) = 1/2; asymptotic series where that cancels
    safe = np.where(kappa > 1e-100, kappa, 1.0)
    exact = 1.0 - a / safe - a * a
    big = np.maximum(safe, 1e3)
    asym = 0.5 / big**2 + 0.25 / big**3 + 0.375 / big**4
    return np.where(kappa > 1e-100, np.where(kappa > 1e3, asym, exact), 0.5)


def _inv_mrl_seed(rho):
    # three-piece rational approximation (Mardia & Jupp, pp. 85-86)
    rho = np.asarray(rho, dtype=float)
    low = 2 * rho + rho**3 + 5 * rho**5 / 6
    mid = -0.4 + 1.39 * rho + 0.43 / (1 - rho)
    with np.errstate(divide="ignore"):
        high = 1.0 / (rho**3 - 4 * rho**2 + 3 * rho)
    return np.where(rho < 0.53, low, np.where(rho < 0.85, mid, high))


def inv_mean_resultant_length(rho):
    """Inverse of A: the concentration kappa with A(kappa) = rho.

    A rational seed is polished by Newton steps on A itself.

    Raises:
        ValueError: if ``rho`` is outside [0, 1).
    """
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr < 0) or np.any(rho_arr >= 1) or not np.all(np.isfinite(rho_arr)):
        raise ValueError("mean resultant length must lie in [0, 1)")
    kappa = np.where(rho_arr > 0, _inv_mrl_seed(rho_arr), 0.0)
    for _ in range(8):
        a = mean_resultant_length(kappa)
        step = (a - rho_arr) / _mrl_derivative(kappa, a)
        kappa = np.maximum(kappa - step, 0.5 * kappa)
        if np.all(np.abs(step) <= 1e-14 * np.maximum(kappa, 1e-300)):
            break
    kappa = np.where(rho_arr > 0, kappa, 0.0)
    if kappa.ndim == 0:
        return float(kappa)
    return kappa


def inv_mrl_from_complement(one_minus_rho):
    """A^-1(1 - c) for a complement ``c`` that may be far below machine epsilon."""
    c = np.asarray(one_minus_rho, dtype=float)
    tiny = c < _COMPLEMENT_ASYMPTOTIC
    # A(k) = 1 - 1/(2k) - 1/(8k^2) + ...
    safe_c = np.where(tiny, c, 0.5)
    asym = (1.0 + np.sqrt(1.0 + 2.0 * safe_c)) / (4.0 * np.where(tiny, c, 1.0))
    exact = inv_mean_resultant_length(np.where(tiny, 0.5, 1.0 - c))
    out = np.where(tiny, asym, exact)
    if out.ndim == 0:
        return float(out)
    return out


def vm_pdf(theta, param: ParamLike):
    """Von Mises density at ``theta``."""
    eta = _eta(param)
    kappa = abs(eta)
    theta = np.asarray(theta, dtype=float)
    mu = np.angle(eta)
    # scaled form: exp(k cos(t - mu) - k) / (2 pi ive(0, k))
    log_norm = float(log_scaled_bessel_i(0, kappa)) + np.log(TWO_PI)
    out = np.exp(kappa * (np.cos(theta - mu) - 1.0) - log_norm)
    if out.ndim == 0:
        return float(out)
    return out


def wrapped_vm_pdf(theta, m: int, param: ParamLike):
    """Density of the m-fold wrapped law, f_VM(m * theta; eta)."""
    return vm_pdf(m * np.asarray(theta, dtype=float), param)


def vm_product(a: ParamLike, b: ParamLike) -> VmParam:
    """Parameter of the (renormalized) product of two von Mises pdfs."""
    return VmParam(_eta(a) + _eta(b))


def vm_char(param: ParamLike, p):
    """Circular moment E[exp(j p Theta)] of a von Mises law."""
    eta = _eta(param)
    p = np.asarray(p)
    if eta == 0:
        out = np.where(p == 0, 1.0 + 0j, 0j)
    else:
        out = np.exp(1j * p * np.angle(eta)) * bessel_ratio(np.abs(p), abs(eta))
    if np.ndim(out) == 0:
        return complex(out)
    return out


def _log_ive(p, x):
    """ln(I_p(x) e^-x) for validated, broadcast-compatible arrays."""
    x = np.asarray(x, dtype=float)
    if np.all(x <= _ASYMPTOTIC_KAPPA):
        with np.errstate(divide="ignore"):
            return np.log(ive(p, x))
    return log_scaled_bessel_i(p, x)


def _log_ratio(m, x):
    return _log_ive(m, x) - _log_ive(0, x)


def _seed_wrapped(m, kappa):
    # A^-1(A(kappa)^(1/m^2)) with the unpolished rational inverse; the
    # complement form keeps sharp laws from rounding to A = 1
    log_a = _log_ratio(1.0, kappa)
    c = -np.expm1(log_a / (m * m))
    rho = 1.0 - c
    tiny = c < _COMPLEMENT_ASYMPTOTIC
    safe_c = np.where(tiny, c, 1.0)
    asym = (1.0 + np.sqrt(1.0 + 2.0 * safe_c)) / (4.0 * safe_c)
    seed = np.where(tiny, asym, _inv_mrl_seed(np.where(tiny, 0.5, rho)))
    return np.maximum(seed, 1e-300), log_a


# above this argument d/dt ln R_m(e^t) is taken from its leading asymptotic term
_SLOPE_ASYMPTOTIC = 1e6


def _solve_wrapped(m, kappa):
    # Newton on g(t) = ln R_m(e^t) - ln A(kappa), t = ln(kt), inside a
    # bracket that every evaluation tightens; g is increasing in t
    seed, log_target = _seed_wrapped(m, kappa)
    t = np.log(seed)
    lo = np.full_like(t, -np.inf)
    hi = np.full_like(t, np.inf)
    done = np.zeros(t.shape, bool)
    for _ in range(100):
        x = np.exp(t)
        l0 = _log_ive(0.0, x)
        lm = _log_ive(m, x)
        g = lm - l0 - log_target
        lo = np.where(g < 0, t, lo)
        hi = np.where(g > 0, t, hi)
        # g'(t) = m + x (I_{m+1}/I_m - I_1/I_0), which cancels for large x
        ratio_diff = np.exp(_log_ive(m + 1.0, x) - lm) - np.exp(_log_ive(1.0, x) - l0)
        slope = np.where(x > _SLOPE_ASYMPTOTIC, 0.5 * m * m / x, m + x * ratio_diff)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(slope > 0, -g / slope, np.sign(-g) * 1.0)
        step = np.clip(np.nan_to_num(step), -2.0, 2.0)
        cand = t + step
        outside = (cand <= lo) | (cand >= hi)
        both = np.isfinite(lo) & np.isfinite(hi)
        with np.errstate(invalid="ignore"):
            mid = 0.5 * (lo + hi)
        cand = np.where(outside & both, mid, cand)
        converged = (np.abs(step) <= 1e-13) | (g == 0) | (both & (hi - lo <= 1e-15 * np.maximum(np.abs(t), 1.0)))
        t = np.where(done | converged, t, cand)
        done |= converged
        if done.all():
            break
    return np.exp(t)


def solve_concentration(m, kappa):
    """Concentration of the components of the mixture replacing an m-fold
    wrapped von Mises law of concentration ``kappa``.

    Solves I_m(kt)/I_0(kt) = I_1(kappa)/I_0(kappa) for kt. Broadcasts over
    both arguments.
    """
    m_arr = np.asarray(m)
    k_arr = np.asarray(kappa, dtype=float)
    if np.any(m_arr < 1):
        raise ValueError("wrapping order must be a positive integer")
    if np.any(k_arr < 0) or not np.all(np.isfinite(k_arr)):
        raise ValueError("concentration must be finite and non-negative")
    m_b, k_b = np.broadcast_arrays(m_arr, k_arr)
    out = np.array(k_b, dtype=float, copy=True)
    todo = (m_b > 1) & (k_b > 0)
    if np.any(todo):
        out[todo] = _solve_wrapped(m_b[todo].astype(float), k_b[todo])
    if out.ndim == 0:
        return float(out)
    return out


def unwrap_vm(m: int, param: ParamLike) -> VmMixture:
    """Replace f_VM(m * theta; eta) by m equally weighted von Mises pdfs.

    The component means are (mu + 2 pi r) / m, r = 0..m-1, and all
    components share the concentration from :func:`solve_concentration`.
    """
    if int(m) != m or m < 1:
        raise ValueError("wrapping order must be a positive integer")
    m = int(m)
    eta = _eta(param)
    kappa_t = solve_concentration(m, abs(eta))
    means = wrap_angle((np.angle(eta) + TWO_PI * np.arange(m)) / m)
    return VmMixture(np.full(m, 1.0 / m), kappa_t * np.exp(1j * np.atleast_1d(means)))
