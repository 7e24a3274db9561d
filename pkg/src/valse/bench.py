"""Synthetic line spectra, error metrics, Cramer-Rao bounds and Monte-Carlo trials."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .circular import TWO_PI, wrap_angle
from .engine import EngineConfig, run
from .freq_model import MeasurementSet

MAX_REJECTIONS = 10_000
MAGNITUDE_MEAN = 1.0
MAGNITUDE_VAR = 0.1


class GenerationError(RuntimeError):
    """The separation constraint could not be met."""


@dataclass(frozen=True)
class GroundTruth:
    K: int
    omegas: np.ndarray
    alphas: np.ndarray
    N: int
    mset_indices: np.ndarray
    nu: float
    snr_db: float

    def signal(self, n=None) -> np.ndarray:
        """Noiseless samples at ``n`` (all N by default)."""
        n = np.arange(self.N) if n is None else np.asarray(n)
        if self.K == 0:
            return np.zeros(n.shape, complex)
        return np.exp(1j * np.outer(n, self.omegas)) @ self.alphas


def wrap_distance(a, b):
    """Circular distance min_k |a - b + 2 pi k|, in [0, pi]."""
    return np.abs(wrap_angle(np.asarray(a, float) - np.asarray(b, float)))


def _draw_frequencies(rng, K, delta_omega, exact_separation):
    if K == 0:
        return np.zeros(0)
    if exact_separation:
        first = rng.uniform(-np.pi, np.pi)
        return wrap_angle(first + delta_omega * np.arange(K))
    if K * delta_omega >= TWO_PI:
        raise GenerationError(f"{K} frequencies cannot be {delta_omega} apart on the circle")
    omegas = []
    rejections = 0
    while len(omegas) < K:
        cand = rng.uniform(-np.pi, np.pi)
        if all(wrap_distance(cand, w) >= delta_omega for w in omegas):
            omegas.append(cand)
            continue
        rejections += 1
        if rejections >= MAX_REJECTIONS:
            raise GenerationError(f"gave up after {rejections} rejected frequency draws")
    return np.array(omegas)


def _draw_magnitudes(rng, K):
    out = np.empty(K)
    for k in range(K):
        mag = -1.0
        while mag <= 0:
            mag = rng.normal(MAGNITUDE_MEAN, math.sqrt(MAGNITUDE_VAR))
        out[k] = mag
    return out


def gen_instance(
    N: int,
    M: int,
    K: int,
    delta_omega: float,
    snr_db: float,
    seed: int,
    exact_separation: bool = False,
    nu: Optional[float] = None,
) -> tuple[GroundTruth, MeasurementSet]:
    """Draw a noisy instance whose per-measurement SNR equals ``snr_db``.

    With K = 0 there is no signal to calibrate against; the noise variance is
    then ``nu`` if given, else 10^(-snr_db/10) (unit reference power). A given
    ``nu`` always overrides the SNR calibration.
    """
    if K < 0 or N < 1 or not 1 <= M <= N:
        raise ValueError(f"need K >= 0 and 1 <= M <= N, got N={N}, M={M}, K={K}")
    rng = np.random.default_rng(seed)
    omegas = _draw_frequencies(rng, K, float(delta_omega), exact_separation)
    alphas = _draw_magnitudes(rng, K) * np.exp(1j * rng.uniform(-np.pi, np.pi, K))
    if M < N:
        indices = np.sort(rng.choice(N, size=M, replace=False))
    else:
        indices = np.arange(N)
    x_m = np.exp(1j * np.outer(indices, omegas)) @ alphas if K else np.zeros(M, complex)
    if nu is None:
        power = float(np.vdot(x_m, x_m).real) / M if K else 1.0
        nu = power * 10.0 ** (-snr_db / 10.0)
    noise = math.sqrt(nu / 2) * (rng.standard_normal(M) + 1j * rng.standard_normal(M))
    gt = GroundTruth(K, omegas, alphas, N, indices, float(nu), float(snr_db))
    return gt, MeasurementSet(indices, N, x_m + noise)


def nmse(x_hat, x) -> float:
    x_hat = np.asarray(x_hat, complex)
    x = np.asarray(x, complex)
    if x_hat.shape != x.shape:
        raise ValueError("signals must have equal length")
    ref = float(np.vdot(x, x).real)
    if ref == 0:
        raise ValueError("reference signal is zero")
    diff = x_hat - x
    return float(np.vdot(diff, diff).real) / ref


def match_components(est_freqs, true_freqs) -> tuple[np.ndarray, np.ndarray]:
    """Minimum total squared wrap-around error pairing.

    Returns ``(assignment, sq_errors)`` where ``est_freqs[assignment[k]]`` is
    matched to ``true_freqs[k]`` with squared error ``sq_errors[k]``.
    """
    est = np.asarray(est_freqs, float).ravel()
    true = np.asarray(true_freqs, float).ravel()
    if est.size != true.size:
        raise ValueError(f"cannot match {est.size} estimates to {true.size} true frequencies")
    cost = wrap_distance(true[:, None], est[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(true.size, np.int64)
    assignment[rows] = cols
    return assignment, cost[rows, cols]


def _jacobian(omegas, alphas, n) -> np.ndarray:
    """d x_n / d(omega_k, Re alpha_k, Im alpha_k), columns grouped by parameter kind."""
    E = np.exp(1j * np.outer(n, omegas))
    return np.hstack([1j * n[:, None] * E * alphas[None, :], E, 1j * E])


def crlb(gt: GroundTruth) -> tuple[np.ndarray, float]:
    """Bounds on the frequency variances and on the signal NMSE, for known K."""
    if gt.K < 1:
        raise ValueError("the bound needs at least one component")
    D = _jacobian(gt.omegas, gt.alphas, gt.mset_indices.astype(float))
    F = (2.0 / gt.nu) * np.real(D.conj().T @ D)
    if np.linalg.cond(F) > 1e14:
        raise np.linalg.LinAlgError("Fisher information is singular; frequencies coincide?")
    F_inv = np.linalg.inv(F)
    freq = np.diag(F_inv)[: gt.K].copy()
    G = _jacobian(gt.omegas, gt.alphas, np.arange(gt.N, dtype=float))
    x = gt.signal()
    signal = float(np.real(np.trace(G @ F_inv @ G.conj().T))) / float(np.vdot(x, x).real)
    return freq, signal


@dataclass
class TrialRecord:
    seed: int
    K: int
    K_hat: int
    success: bool
    nmse: float
    freq_sq_errors: list = field(default_factory=list)
    crlb_freq: list = field(default_factory=list)
    crlb_nmse: float = math.nan
    runtime: float = math.nan
    iters: int = 0
    converged: bool = False
    flip_history: list = field(default_factory=list)
    error: str = ""


@dataclass
class ExperimentConfig:
    """One simulation point; ``delta_omega`` is in radians."""

    N: int = 21
    M: int = 21
    K: int = 5
    delta_omega: float = TWO_PI / 21
    snr_db: float = 15.0
    exact_separation: bool = False
    nu: Optional[float] = None
    n_trials: int = 100
    base_seed: int = 0
    engine: EngineConfig = field(default_factory=EngineConfig)
    timing: bool = True


@dataclass
class Aggregate:
    n_trials: int
    success_rate: float
    nmse_db: float
    freq_rmse: float
    crlb_freq_rmse: float
    crlb_nmse_db: float
    mean_runtime_ms: float


def run_trial(config: ExperimentConfig, seed: int) -> TrialRecord:
    """Generate, estimate and score one instance; errors are recorded, not raised."""
    try:
        gt, mset = gen_instance(
            config.N, config.M, config.K, config.delta_omega, config.snr_db, seed,
            config.exact_separation, config.nu,
        )
        start = time.perf_counter()
        result = run(mset, config.N, config.engine)
        runtime = time.perf_counter() - start if config.timing else math.nan
    except Exception as exc:  # noqa: BLE001 - failed trials are part of the record
        return TrialRecord(seed, config.K, -1, False, math.nan, error=f"{type(exc).__name__}: {exc}")
    record = TrialRecord(
        seed, config.K, result.K_hat, result.K_hat == config.K, math.nan,
        runtime=runtime, iters=result.iters, converged=result.converged,
        flip_history=list(result.flip_history),
    )
    if config.K == 0:
        return record
    record.nmse = nmse(result.x_hat, gt.signal())
    try:
        freq_bounds, signal_bound = crlb(gt)
        record.crlb_freq = freq_bounds.tolist()
        record.crlb_nmse = signal_bound
    except np.linalg.LinAlgError as exc:
        record.error = str(exc)
    if record.success:
        _, sq = match_components(result.freqs, gt.omegas)
        record.freq_sq_errors = sq.tolist()
    return record


def _run_seed(args):
    config, seed = args
    return run_trial(config, seed)


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def run_trials(config: ExperimentConfig, workers: int = 1) -> tuple[list[TrialRecord], Aggregate]:
    """Trials with seeds base_seed, base_seed + 1, ...; records come back in seed order."""
    seeds = [config.base_seed + t for t in range(config.n_trials)]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            records = list(pool.map(_run_seed, [(config, s) for s in seeds]))
    else:
        records = [run_trial(config, s) for s in seeds]
    return records, aggregate(records)


def _db(value: float) -> float:
    return 10.0 * math.log10(value) if value > 0 else (-math.inf if value == 0 else math.nan)


def aggregate(records: Sequence[TrialRecord]) -> Aggregate:
    """Means over trials, summed in record order.

    NMSE and its bound are averaged linearly and then converted to dB. The
    frequency RMSE pools every matched error of the successful trials; its
    bound pools the per-frequency bounds of all trials.
    """
    n = len(records)
    if n == 0:
        return Aggregate(0, math.nan, math.nan, math.nan, math.nan, math.nan, math.nan)
    success = sum(r.success for r in records) / n
    nmses = [r.nmse for r in records if not math.isnan(r.nmse)]
    sq = [e for r in records if r.success for e in r.freq_sq_errors]
    bounds = [b for r in records for b in r.crlb_freq]
    crlb_nmse = [r.crlb_nmse for r in records if not math.isnan(r.crlb_nmse)]
    runtimes = [r.runtime for r in records if not math.isnan(r.runtime)]
    mean = lambda xs: math.fsum(xs) / len(xs) if xs else math.nan  # noqa: E731
    return Aggregate(
        n_trials=n,
        success_rate=success,
        nmse_db=_db(mean(nmses)) if nmses else math.nan,
        freq_rmse=math.sqrt(mean(sq)) if sq else math.nan,
        crlb_freq_rmse=math.sqrt(mean(bounds)) if bounds else math.nan,
        crlb_nmse_db=_db(mean(crlb_nmse)) if crlb_nmse else math.nan,
        mean_runtime_ms=1e3 * mean(runtimes) if runtimes else math.nan,
    )


@dataclass
class SweepPoint:
    sweep_var: str
    value: float
    config: ExperimentConfig


FIG5_SNRS = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
FIG6_MS = (8, 10, 12, 14, 16, 18, 20)
FIG7_SEPARATIONS = (0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0)
SCALING_SIZES = ((25, 15, 2), (51, 30, 4), (75, 45, 6), (100, 60, 8), (200, 120, 16))
PRESETS = ("fig5", "fig6", "fig7", "scaling")


def preset(name: str, n_trials: int = 100, base_seed: int = 0, engine: Optional[EngineConfig] = None,
           timing: bool = True) -> list[SweepPoint]:
    """Sweep grids of the simulation study.

    fig7 values are separations in units of 2 pi / N; scaling values are N.
    """
    engine = EngineConfig() if engine is None else engine
    common = dict(n_trials=n_trials, base_seed=base_seed, engine=engine, timing=timing)
    if name == "fig5":
        return [
            SweepPoint("snr_db", snr, ExperimentConfig(21, 21, 5, TWO_PI / 21, snr, **common))
            for snr in FIG5_SNRS
        ]
    if name == "fig6":
        return [
            SweepPoint("M", float(M), ExperimentConfig(20, M, 3, TWO_PI / 20, 10.0, **common))
            for M in FIG6_MS
        ]
    if name == "fig7":
        return [
            SweepPoint("delta_omega", sep,
                       ExperimentConfig(51, 51, 2, sep * TWO_PI / 51, 10.0, exact_separation=True, **common))
            for sep in FIG7_SEPARATIONS
        ]
    if name == "scaling":
        return [
            SweepPoint("N", float(N), ExperimentConfig(N, M, K, TWO_PI / N, 20.0, **common))
            for N, M, K in SCALING_SIZES
        ]
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")


def with_engine(config: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of ``config`` whose engine settings are updated."""
    return replace(config, engine=replace(config.engine, **changes))
