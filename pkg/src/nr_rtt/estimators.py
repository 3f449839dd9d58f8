"""Refined RTT / range estimation from batches of SRS channel estimates.

Two estimators share the same inputs (a list of :class:`Measurement`):

* :func:`matched_filter_rtt` - every estimate is rotated by its own coarse
  RTT so all of them line up on a common delay axis, then the per-estimate
  coherent energy ``|v(tau)^H T(tau_r) h|^2`` is averaged and maximised
  over ``tau``.
* :func:`peak_detector_range` - the integer-bin IDFT peak of each estimate,
  averaged over the batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import Measurement
from .numerology import SPEED_OF_LIGHT, SystemConfig, rtt_to_range

DEFAULT_SYSTEM = SystemConfig()
# Noise below this fraction of signal power is treated as exactly zero.
_NOISELESS_RATIO = 1e-20


@dataclass(frozen=True)
class MfSearchGrid:
    tau_min: float
    tau_max: float
    coarse_step: float
    refine: str = "parabolic"
    fine_step: float | None = None

    def __post_init__(self):
        if not self.tau_min < self.tau_max:
            raise ValueError("tau_min must be < tau_max")
        if not 0 < self.coarse_step <= self.tau_max - self.tau_min:
            raise ValueError("coarse_step must be in (0, tau_max - tau_min]")
        if self.refine not in ("parabolic", "fine_grid", "none"):
            raise ValueError(f"unknown refine mode {self.refine!r}")
        if self.refine == "fine_grid" and not (self.fine_step and self.fine_step > 0):
            raise ValueError("fine_grid refinement needs a positive fine_step")

    @property
    def points(self) -> np.ndarray:
        n = int(math.floor((self.tau_max - self.tau_min) / self.coarse_step + 1e-9)) + 1
        return self.tau_min + self.coarse_step * np.arange(n)


@dataclass(frozen=True)
class RangeEstimate:
    rtt: float
    range_m: float
    method: str
    objective: float | None
    m_used: int
    at_boundary: bool = False


def _check_batch(batch: Sequence[Measurement]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sounded bin indices, (M, S) sounded values, and coarse RTTs."""
    if len(batch) == 0:
        raise ValueError("empty measurement batch")
    mask = batch[0].estimate.mask
    for m in batch[1:]:
        if m.estimate.mask.shape != mask.shape or not np.array_equal(m.estimate.mask, mask):
            raise ValueError("all channel estimates in a batch must share K and mask")
    k = np.flatnonzero(mask)
    h = np.stack([m.estimate.h_hat[k] for m in batch])
    tau_r = np.array([m.tau_r for m in batch], dtype=float)
    return k, h, tau_r


def steering(tau: float, k: np.ndarray, delta_f: float) -> np.ndarray:
    """v(tau) restricted to bins ``k``."""
    return np.exp(-2j * np.pi * np.asarray(k) * delta_f * tau)


def _aligned(batch, delta_f, compensate):
    k, h, tau_r = _check_batch(batch)
    if compensate:
        h = h * np.exp(-2j * np.pi * delta_f * np.outer(tau_r, k))
    return k, h


def _objective_direct(taus: np.ndarray, k: np.ndarray, h: np.ndarray, delta_f: float) -> np.ndarray:
    out = np.empty(taus.size)
    for start in range(0, taus.size, 512):
        t = taus[start:start + 512]
        a = np.exp(2j * np.pi * delta_f * np.outer(t, k))
        out[start:start + 512] = np.mean(np.abs(a @ h.T) ** 2, axis=1)
    return out


def _objective_uniform(tau0: float, step: float, n: int, k, h, delta_f, fft_len: int):
    """Objective on tau0 + step*g via one zero-padded IFFT per estimate.

    Valid when step = 1/(fft_len*delta_f) and n <= fft_len.
    """
    x = np.zeros((h.shape[0], fft_len), dtype=complex)
    x[:, k] = h * np.exp(2j * np.pi * delta_f * tau0 * k)
    y = np.fft.ifft(x, axis=1)[:, :n] * fft_len
    return np.mean(np.abs(y) ** 2, axis=0)


def mf_objective(
    tau,
    batch: Sequence[Measurement],
    system: SystemConfig = DEFAULT_SYSTEM,
    compensate: bool = True,
):
    """(1/M) sum_m |v(tau)^H T(tau_r_m) h_m|^2 over sounded bins.

    ``tau`` may be a scalar or an array. ``compensate=False`` replaces every
    T(tau_r_m) with the identity.
    """
    k, h = _aligned(batch, system.subcarrier_spacing, compensate)
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    out = _objective_direct(taus, k, h, system.subcarrier_spacing)
    return float(out[0]) if np.ndim(tau) == 0 else out


def default_search_grid(
    batch: Sequence[Measurement],
    system: SystemConfig = DEFAULT_SYSTEM,
    compensate: bool = True,
    oversample: int = 8,
    refine: str = "parabolic",
) -> MfSearchGrid:
    """Window [min tau_r - step/2, max tau_r + step/2 + CP], clipped at 0.

    The TA already pins the RTT to within one TA step and the CP bounds the
    residual. Coarse step is one eighth of a sample.
    """
    _, _, tau_r = _check_batch(batch)
    if not compensate:
        tau_r = np.zeros_like(tau_r)
    half = system.ta_step / 2
    lo = max(0.0, float(tau_r.min()) - half)
    hi = float(tau_r.max()) + half + system.cp_duration
    return MfSearchGrid(lo, hi, 1.0 / (oversample * system.sample_rate), refine=refine)


def matched_filter_rtt(
    batch: Sequence[Measurement],
    grid: MfSearchGrid | None = None,
    system: SystemConfig = DEFAULT_SYSTEM,
    compensate: bool = True,
) -> RangeEstimate:
    """Matched-filter RTT over a coarse grid plus local refinement.

    Ties go to the smaller delay. A peak on the first or last grid point is
    returned as-is with ``at_boundary=True``.
    """
    if grid is None:
        grid = default_search_grid(batch, system, compensate)
    df = system.subcarrier_spacing
    k, h = _aligned(batch, df, compensate)
    taus = grid.points
    fft_len = 1.0 / (grid.coarse_step * df)
    if abs(fft_len - round(fft_len)) < 1e-6 * fft_len and taus.size <= round(fft_len):
        obj = _objective_uniform(grid.tau_min, grid.coarse_step, taus.size, k, h, df, int(round(fft_len)))
    else:
        obj = _objective_direct(taus, k, h, df)
    i = int(np.argmax(obj))  # first maximum, i.e. smallest tau
    at_boundary = i == 0 or i == taus.size - 1
    tau_hat = float(taus[i])
    if not at_boundary:
        if grid.refine == "parabolic":
            a, b, c = obj[i - 1], obj[i], obj[i + 1]
            den = a - 2 * b + c
            if den < 0:
                tau_hat += 0.5 * (a - c) / den * grid.coarse_step
        elif grid.refine == "fine_grid":
            fine = np.arange(taus[i - 1], taus[i + 1] + grid.fine_step / 2, grid.fine_step)
            fobj = _objective_direct(fine, k, h, df)
            tau_hat = float(fine[int(np.argmax(fobj))])
    peak = float(_objective_direct(np.array([tau_hat]), k, h, df)[0])
    return RangeEstimate(
        rtt=tau_hat,
        range_m=tau_hat * SPEED_OF_LIGHT / 2,
        method="MF",
        objective=peak,
        m_used=len(batch),
        at_boundary=at_boundary,
    )


def peak_detector_range(
    batch: Sequence[Measurement],
    compensate_coarse: bool = True,
    system: SystemConfig = DEFAULT_SYSTEM,
) -> RangeEstimate:
    """Average of integer IDFT-peak positions, converted to range.

    The argmax of ``|IDFT(h_m)|`` is taken over the first K/Kc time bins
    (the combed response repeats with that period). Without compensation
    this is the raw residual-delay average and carries no TA information.
    With compensation each estimate is first rotated by
    ``T(tau_r_m - ref)``, where ``ref = max(0, min tau_r - TA_step/2)``, and
    ``ref`` is added back; for small coarse RTTs ``ref`` is 0 and the
    window starts at delay zero.
    """
    k, h, tau_r = _check_batch(batch)
    n_fft = batch[0].estimate.fft_size
    window = n_fft // system.comb_size
    df = system.subcarrier_spacing
    ref = 0.0
    if compensate_coarse:
        ref = max(0.0, float(tau_r.min()) - system.ta_step / 2)
        h = h * np.exp(-2j * np.pi * df * np.outer(tau_r - ref, k))
    x = np.zeros((len(batch), n_fft), dtype=complex)
    x[:, k] = h
    mag = np.abs(np.fft.ifft(x, axis=1))[:, :window]
    peaks = np.argmax(mag, axis=1)
    fs = n_fft * df
    rtt = ref + float(np.sum(peaks)) / (fs * len(batch))
    return RangeEstimate(
        rtt=rtt,
        range_m=rtt_to_range(rtt),
        method="PD",
        objective=None,
        m_used=len(batch),
        at_boundary=bool(np.any(peaks == window - 1)),
    )


def snr_estimate(
    batch: Sequence[Measurement],
    system: SystemConfig = DEFAULT_SYSTEM,
) -> float:
    """Per-bin SNR in dB of a batch, from de-ramped channel estimates.

    Each estimate is de-rotated by the batch MF delay (or, when it fits
    better, by its own LS phase-ramp fit); the complex mean gives the
    signal and the spread around it the noise. Returns ``inf`` when the
    residual is numerically zero.
    """
    est = matched_filter_rtt(batch, system=system)
    k, h = _aligned(batch, system.subcarrier_spacing, True)
    s = k.size
    if s < 3:
        raise ValueError("need at least 3 sounded bins to estimate SNR")
    sig, noise = [], []
    base = np.exp(2j * np.pi * system.subcarrier_spacing * est.rtt * k)
    kc = k - k.mean()
    for hm in h:
        best = None
        z_mf = hm * base
        cands = [z_mf]
        ph = np.unwrap(np.angle(z_mf))
        slope, icept = np.polyfit(kc, ph, 1)
        cands.append(z_mf * np.exp(-1j * slope * kc))
        for z in cands:
            a = z.mean()
            r = np.sum(np.abs(z - a) ** 2)
            if best is None or r < best[1]:
                best = (a, r)
        a, r = best
        sig.append(abs(a) ** 2)
        noise.append(r / (s - 1))
    n_hat = float(np.mean(noise))
    s_hat = float(np.mean(sig)) - n_hat / s
    if n_hat <= _NOISELESS_RATIO * max(s_hat, 0.0) or n_hat == 0.0:
        return math.inf
    if s_hat <= 0:
        return -math.inf
    return 10 * math.log10(s_hat / n_hat)
