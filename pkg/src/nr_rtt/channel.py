"""Synthetic SRS observations over a line-of-sight channel.

Delay lives entirely in the RTT domain: the UE advances by the full TA, so
the gNB sees a residual misalignment of ``true_rtt - ta_to_rtt(ta)`` plus
whatever DL timing error the UE clock has accumulated.
"""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerology import SystemConfig, TaCode, ta_to_rtt
from .srs import ChannelEstimateVec, SrsConfig, ls_estimate, make_pilots

log = logging.getLogger(__name__)

DEFAULT_DRIFT_PPM = 2.0
DEFAULT_CORRECTION_INTERVAL = 0.320


@dataclass(frozen=True)
class LosChannelParams:
    tau: float
    alpha: complex = 1.0
    delta_f: float = 30e3
    f_c: float = 3.69e9

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if abs(self.alpha) == 0:
            raise ValueError("alpha must be nonzero")


def los_response(params: LosChannelParams, K: int) -> np.ndarray:
    """h[k] = alpha * exp(-j 2 pi k df tau) for k in [0, K)."""
    if K <= 0:
        raise ValueError("K must be positive")
    return _ramp(params.tau, params.delta_f, K) * params.alpha


def _ramp(tau: float, delta_f: float, K: int) -> np.ndarray:
    # Signed taus are allowed here: residual delays may be slightly negative.
    return np.exp(-2j * np.pi * np.arange(K) * delta_f * tau)


def apply_awgn(signal: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex Gaussian noise to the nonzero bins of ``signal``.

    Per-bin noise variance is mean(|signal|^2 over nonzero bins) / 10^(snr/10).
    ``snr_db = inf`` returns an unmodified copy without touching ``rng``.
    """
    x = np.asarray(signal, dtype=complex)
    active = x != 0
    if not active.any():
        raise ValueError("SNR is undefined for an all-zero signal")
    out = x.copy()
    if math.isinf(snr_db) and snr_db > 0:
        return out
    p_sig = np.mean(np.abs(x[active]) ** 2)
    sigma2 = p_sig / 10 ** (snr_db / 10)
    n = int(active.sum())
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    out[active] += math.sqrt(sigma2 / 2) * noise
    return out


@dataclass(frozen=True)
class ClockDriftModel:
    """UE-vs-gNB clock drift seen as a DL timing error ramp.

    ``policy`` is ``"on_dci"`` (UE re-syncs DL timing whenever it is
    triggered) or ``"periodic"`` (re-sync every ``interval`` seconds; with a
    ``threshold`` the re-sync only happens once the accumulated error
    exceeds it).
    """

    drift_ppm: float = DEFAULT_DRIFT_PPM
    policy: str = "on_dci"
    interval: float = DEFAULT_CORRECTION_INTERVAL
    threshold: float | None = None
    initial_error: float = 0.0

    def __post_init__(self):
        if self.policy not in ("on_dci", "periodic"):
            raise ValueError(f"unknown correction policy {self.policy!r}")
        if self.policy == "periodic" and self.interval <= 0:
            raise ValueError("periodic correction needs interval > 0")

    @property
    def slope(self) -> float:
        return self.drift_ppm * 1e-6


def drift_error(t: float, model: ClockDriftModel, correction_times: Sequence[float]) -> float:
    """Accumulated DL timing error at time ``t``; zero right at a correction."""
    i = bisect.bisect_right(correction_times, t)
    if i == 0:
        return model.initial_error + model.slope * t
    return model.slope * (t - correction_times[i - 1])


def correction_schedule(
    model: ClockDriftModel, horizon: float, triggers: Sequence[float] = ()
) -> list[float]:
    """Times in [0, horizon] at which the UE re-syncs its DL timing."""
    if model.policy == "on_dci":
        return sorted(t for t in triggers if 0 <= t <= horizon)
    times: list[float] = []
    n = 1
    while True:
        t = n * model.interval
        if t > horizon + 1e-12:
            return times
        if model.threshold is None or abs(drift_error(t, model, times)) > model.threshold:
            times.append(t)
        n += 1


@dataclass(eq=False)
class Measurement:
    estimate: ChannelEstimateVec
    tau_r: float
    ta_code: TaCode
    slot_time: float
    true_rtt: float = math.nan
    cp_violation: bool = False
    residual: float = field(default=math.nan, repr=False)


def simulate_measurement(
    true_rtt: float,
    ta_code: TaCode | int,
    snr_db: float,
    system: SystemConfig,
    t: float = 0.0,
    drift: ClockDriftModel | None = None,
    rng: np.random.Generator | None = None,
    correction_times: Sequence[float] = (),
    srs: SrsConfig | None = None,
    phase: float | None = None,
    extra_delay: float = 0.0,
) -> Measurement:
    """One SRS occasion as seen by the gNB after LS estimation.

    ``phase=None`` draws a uniform carrier phase per call; pass a value for
    fixed-phase oracle checks. ``extra_delay`` adds a known constant delay
    such as an uncalibrated hardware offset.
    """
    if rng is None:
        rng = np.random.default_rng()
    if not isinstance(ta_code, TaCode):
        ta_code = TaCode(int(ta_code), system.ta_cap)
    srs = srs or SrsConfig.from_system(system)
    pilots = make_pilots(srs)
    tau_r = ta_to_rtt(ta_code, system.timing)
    e = drift_error(t, drift, correction_times) if drift is not None else 0.0
    residual = true_rtt + extra_delay - tau_r + e
    if phase is None:
        phase = rng.uniform(0.0, 2 * np.pi)
    h = _ramp(residual, system.subcarrier_spacing, srs.fft_size) * np.exp(1j * phase)
    y = apply_awgn(pilots.symbols * h, snr_db, rng)
    cp_violation = abs(residual) > system.cp_duration
    if cp_violation:
        log.warning("residual delay %.3g s outside the cyclic prefix", residual)
    return Measurement(
        estimate=ls_estimate(y, pilots, slot_time=t),
        tau_r=tau_r,
        ta_code=ta_code,
        slot_time=t,
        true_rtt=true_rtt,
        cp_violation=cp_violation,
        residual=residual,
    )
