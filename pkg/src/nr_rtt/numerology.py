"""NR timing constants and TA / RTT / range conversions.

All time quantities are in seconds, ranges in meters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

SPEED_OF_LIGHT = 299_792_458.0
PAPER_SPEED_OF_LIGHT = 3.0e8

DELTA_F_MAX = 480_000
K_MAX = 4096
# Exact rational basic time unit; float view below.
TC_EXACT = Fraction(1, DELTA_F_MAX * K_MAX)
TC = float(TC_EXACT)

# 12-bit RAR timing advance command, 0..3846.
DEFAULT_TA_CAP = 3846


class TaRangeError(ValueError):
    """TA code outside the configured cap."""


@dataclass(frozen=True)
class NrTiming:
    mu: int = 1

    def __post_init__(self):
        if not 0 <= self.mu <= 5:
            raise ValueError(f"numerology mu must be in 0..5, got {self.mu}")

    @property
    def delta_f(self) -> float:
        return 15_000.0 * 2**self.mu

    @property
    def tc(self) -> float:
        return TC

    @property
    def slot_duration(self) -> float:
        return 1e-3 / 2**self.mu

    @property
    def ta_step(self) -> float:
        """RTT covered by one TA code: 16*64*Tc/2^mu."""
        return float(Fraction(16 * 64, 2**self.mu) * TC_EXACT)


@dataclass(frozen=True)
class TaCode:
    value: int
    cap: int = DEFAULT_TA_CAP

    def __post_init__(self):
        if not isinstance(self.value, int) or isinstance(self.value, bool):
            raise TypeError("TA code must be an int")
        if self.value < 0 or self.value > self.cap:
            raise TaRangeError(f"TA code {self.value} outside [0, {self.cap}]")

    def __int__(self):
        return self.value


def ta_to_rtt(ta: TaCode | int, timing: NrTiming = NrTiming(), cap: int = DEFAULT_TA_CAP) -> float:
    """Coarse RTT in seconds for a TA code.

    The product TA*16*64/2^mu*Tc is formed as an exact rational and rounded
    once, so the result is the correctly rounded double.
    """
    if not isinstance(ta, TaCode):
        ta = TaCode(int(ta), cap)
    return float(ta.value * Fraction(16 * 64, 2**timing.mu) * TC_EXACT)


def rtt_to_range(rtt: float, paper_compat: bool = False) -> float:
    """One-way distance for a round-trip time.

    ``paper_compat`` uses c = 3e8, which is how the quoted 39.0625 m TA
    resolution comes out; the default uses the exact speed of light.
    """
    if rtt < 0:
        raise ValueError(f"rtt must be non-negative, got {rtt}")
    c = PAPER_SPEED_OF_LIGHT if paper_compat else SPEED_OF_LIGHT
    return rtt * c / 2


def range_to_rtt(distance: float, paper_compat: bool = False) -> float:
    if distance < 0:
        raise ValueError(f"distance must be non-negative, got {distance}")
    c = PAPER_SPEED_OF_LIGHT if paper_compat else SPEED_OF_LIGHT
    return 2 * distance / c


def quantize_rtt_to_ta(
    rtt: float,
    timing: NrTiming = NrTiming(),
    rounding: str = "half_up",
    cap: int = DEFAULT_TA_CAP,
) -> TaCode:
    """Nearest TA code for an RTT, as a gNB would report it in the RAR.

    ``rounding`` is ``"half_up"`` (default) or ``"floor"``.
    """
    if rtt < 0:
        raise ValueError(f"rtt must be non-negative, got {rtt}")
    x = rtt / timing.ta_step
    if rounding == "half_up":
        code = math.floor(x + 0.5)
    elif rounding == "floor":
        code = math.floor(x)
    else:
        raise ValueError(f"unknown rounding mode {rounding!r}")
    if code > cap:
        raise TaRangeError(f"RTT {rtt:.6g} s maps to TA {code} above cap {cap}")
    return TaCode(int(code), cap)


@dataclass(frozen=True)
class SystemConfig:
    """OFDM / RF parameters of the measurement setup.

    Defaults are the 30 kHz, 40 MHz-class configuration: 1536-point FFT at
    46.08 Msps, 132-sample CP, 37.44 MHz comb-2 SRS centred in the grid.
    """

    bandwidth: float = 38.16e6
    subcarrier_spacing: float = 30e3
    carrier_frequency: float = 3.69e9
    sample_rate: float = 46.08e6
    fft_size: int = 1536
    cp_samples: int = 132
    ssb_bandwidth: float = 7.2e6
    srs_bandwidth: float = 37.44e6
    comb_size: int = 2
    ta_cap: int = DEFAULT_TA_CAP
    timing: NrTiming = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = math.log2(self.subcarrier_spacing / 15e3)
        if abs(mu - round(mu)) > 1e-12:
            raise ValueError(f"subcarrier spacing {self.subcarrier_spacing} is not 15 kHz * 2^mu")
        object.__setattr__(self, "timing", NrTiming(int(round(mu))))
        if not math.isclose(self.sample_rate, self.fft_size * self.subcarrier_spacing, rel_tol=1e-12):
            raise ValueError("sample_rate must equal fft_size * subcarrier_spacing")
        if self.srs_bandwidth > self.bandwidth:
            raise ValueError("SRS bandwidth exceeds system bandwidth")
        if self.comb_size < 1:
            raise ValueError("comb_size must be >= 1")
        n = self.srs_bandwidth / self.subcarrier_spacing
        if abs(n - round(n)) > 1e-6 or round(n) % self.comb_size:
            raise ValueError("SRS bandwidth must span a whole number of comb periods")
        if round(n) > self.fft_size:
            raise ValueError("SRS span exceeds the FFT grid")

    @property
    def mu(self) -> int:
        return self.timing.mu

    @property
    def srs_span(self) -> int:
        """Subcarriers covered by the SRS band (sounded or not)."""
        return int(round(self.srs_bandwidth / self.subcarrier_spacing))

    @property
    def num_sounded(self) -> int:
        return self.srs_span // self.comb_size

    @property
    def first_subcarrier(self) -> int:
        return (self.fft_size - self.srs_span) // 2

    @property
    def cp_duration(self) -> float:
        return self.cp_samples / self.sample_rate

    @property
    def ta_step(self) -> float:
        return self.timing.ta_step

    def to_dict(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "subcarrier_spacing": self.subcarrier_spacing,
            "carrier_frequency": self.carrier_frequency,
            "sample_rate": self.sample_rate,
            "fft_size": self.fft_size,
            "cp_samples": self.cp_samples,
            "ssb_bandwidth": self.ssb_bandwidth,
            "srs_bandwidth": self.srs_bandwidth,
            "comb_size": self.comb_size,
            "ta_cap": self.ta_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        return cls(**d)
