"""SRS pilots, comb mapping and least-squares channel estimation.

Also holds the on-disk forms of a channel estimate: a packed little-endian
binary record and a ``k,re,im`` CSV.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .numerology import SystemConfig


class SrsParameterError(ValueError):
    pass


def largest_prime_at_most(n: int) -> int:
    for p in range(n, 1, -1):
        if all(p % d for d in range(2, math.isqrt(p) + 1)):
            return p
    raise SrsParameterError(f"no prime <= {n}")


@dataclass(frozen=True)
class SrsConfig:
    fft_size: int = 1536
    comb_size: int = 2
    comb_offset: int = 0
    first_subcarrier: int = 144
    num_sounded: int = 624
    zc_root: int = 25

    def __post_init__(self):
        if self.comb_size < 1:
            raise SrsParameterError("comb_size must be >= 1")
        if not 0 <= self.comb_offset < self.comb_size:
            raise SrsParameterError("comb_offset must lie in [0, comb_size)")
        if self.first_subcarrier < 0 or self.num_sounded < 1:
            raise SrsParameterError("first_subcarrier >= 0 and num_sounded >= 1 required")
        if self.num_sounded * self.comb_size > self.fft_size - self.first_subcarrier:
            raise SrsParameterError("SRS comb overflows the FFT grid")
        if math.gcd(self.zc_root, self.zc_length) != 1:
            raise SrsParameterError(
                f"zc_root {self.zc_root} not coprime with ZC length {self.zc_length}"
            )

    @property
    def zc_length(self) -> int:
        if self.num_sounded < 3:
            return 1
        return largest_prime_at_most(self.num_sounded)

    @property
    def indices(self) -> np.ndarray:
        start = self.first_subcarrier + self.comb_offset
        return start + self.comb_size * np.arange(self.num_sounded)

    @classmethod
    def from_system(cls, system: SystemConfig, **overrides) -> "SrsConfig":
        kw = dict(
            fft_size=system.fft_size,
            comb_size=system.comb_size,
            first_subcarrier=system.first_subcarrier,
            num_sounded=system.num_sounded,
        )
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class PilotGrid:
    symbols: np.ndarray
    mask: np.ndarray


@dataclass(eq=False)
class ChannelEstimateVec:
    h_hat: np.ndarray
    mask: np.ndarray
    slot_time: float = 0.0

    def __post_init__(self):
        self.h_hat = np.asarray(self.h_hat, dtype=complex)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.h_hat.shape != self.mask.shape or self.h_hat.ndim != 1:
            raise SrsParameterError("h_hat and mask must be 1-D and of equal length")
        if np.any(self.h_hat[~self.mask] != 0):
            raise SrsParameterError("channel estimate has energy on non-sounded bins")

    @property
    def fft_size(self) -> int:
        return self.h_hat.size

    @property
    def sounded(self) -> np.ndarray:
        return self.h_hat[self.mask]

    def __eq__(self, other):
        if not isinstance(other, ChannelEstimateVec):
            return NotImplemented
        return (
            np.array_equal(self.mask, other.mask)
            and np.array_equal(self.h_hat, other.h_hat)
            and self.slot_time == other.slot_time
        )


def generate_zc(root: int, length: int) -> np.ndarray:
    """Zadoff-Chu sequence exp(-j*pi*u*n*(n+1)/N) for odd N."""
    if length < 1 or length % 2 == 0:
        raise SrsParameterError(f"ZC length must be odd and positive, got {length}")
    if math.gcd(root, length) != 1:
        raise SrsParameterError(f"root {root} not coprime with length {length}")
    n = np.arange(length, dtype=np.int64)
    # Reduce the exponent modulo 2N in integers to keep the phase exact.
    e = (root * n * (n + 1)) % (2 * length)
    return np.exp(-1j * np.pi * e / length)


def srs_sequence(cfg: SrsConfig) -> np.ndarray:
    """Prime-length ZC base sequence cyclically extended to ``num_sounded``."""
    base = generate_zc(cfg.zc_root, cfg.zc_length)
    return base[np.arange(cfg.num_sounded) % base.size]


def map_to_comb(seq: np.ndarray, cfg: SrsConfig) -> PilotGrid:
    seq = np.asarray(seq, dtype=complex)
    if seq.shape != (cfg.num_sounded,):
        raise SrsParameterError(f"sequence length {seq.size} != num_sounded {cfg.num_sounded}")
    idx = cfg.indices
    if idx[-1] >= cfg.fft_size:
        raise SrsParameterError("comb placement overflows the FFT grid")
    symbols = np.zeros(cfg.fft_size, dtype=complex)
    mask = np.zeros(cfg.fft_size, dtype=bool)
    symbols[idx] = seq
    mask[idx] = True
    symbols.setflags(write=False)
    mask.setflags(write=False)
    return PilotGrid(symbols, mask)


@lru_cache(maxsize=32)
def make_pilots(cfg: SrsConfig) -> PilotGrid:
    return map_to_comb(srs_sequence(cfg), cfg)


def ls_estimate(y: np.ndarray, pilots: PilotGrid, slot_time: float = 0.0) -> ChannelEstimateVec:
    y = np.asarray(y, dtype=complex)
    if y.shape != pilots.symbols.shape:
        raise SrsParameterError(f"received vector length {y.size} != K {pilots.symbols.size}")
    h = np.zeros_like(y)
    m = pilots.mask
    h[m] = np.conj(pilots.symbols[m]) * y[m]
    return ChannelEstimateVec(h, m.copy(), slot_time)


# --- serialization -------------------------------------------------------
#
# Binary record, little-endian:
#   u32 K | u32 R | R x u32 run lengths | f64 slot_time | 2*S x f64 re,im
# Runs alternate starting with a non-sounded run (possibly zero length);
# values are stored for the S sounded bins only, in bin order.


def mask_runs(mask: np.ndarray) -> list[int]:
    runs, current, n = [], False, 0
    for bit in mask:
        if bool(bit) == current:
            n += 1
        else:
            runs.append(n)
            current, n = not current, 1
    runs.append(n)
    return runs


def runs_to_mask(runs: Iterable[int], k: int) -> np.ndarray:
    mask = np.zeros(k, dtype=bool)
    pos, value = 0, False
    for r in runs:
        mask[pos:pos + r] = value
        pos += r
        value = not value
    if pos != k:
        raise SrsParameterError(f"mask runs cover {pos} bins, expected {k}")
    return mask


def pack_estimate(est: ChannelEstimateVec) -> bytes:
    runs = mask_runs(est.mask)
    vals = np.empty(2 * int(est.mask.sum()), dtype="<f8")
    vals[0::2] = est.sounded.real
    vals[1::2] = est.sounded.imag
    head = struct.pack(f"<II{len(runs)}Id", est.fft_size, len(runs), *runs, est.slot_time)
    return head + vals.tobytes()


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise SrsParameterError("truncated channel estimate record")
    return b


def unpack_estimates(fh: BinaryIO) -> Iterator[ChannelEstimateVec]:
    while True:
        head = fh.read(8)
        if not head:
            return
        if len(head) != 8:
            raise SrsParameterError("truncated channel estimate record")
        k, r = struct.unpack("<II", head)
        runs = struct.unpack(f"<{r}I", _read_exact(fh, 4 * r))
        (slot_time,) = struct.unpack("<d", _read_exact(fh, 8))
        mask = runs_to_mask(runs, k)
        s = int(mask.sum())
        vals = np.frombuffer(_read_exact(fh, 16 * s), dtype="<f8")
        h = np.zeros(k, dtype=complex)
        h[mask] = vals[0::2] + 1j * vals[1::2]
        yield ChannelEstimateVec(h, mask, slot_time)


def write_estimates_bin(path: str | Path, estimates: Iterable[ChannelEstimateVec]) -> None:
    with open(path, "wb") as fh:
        for est in estimates:
            fh.write(pack_estimate(est))


def read_estimates_bin(path: str | Path) -> list[ChannelEstimateVec]:
    with open(path, "rb") as fh:
        return list(unpack_estimates(fh))


def estimate_to_csv(est: ChannelEstimateVec) -> str:
    """Sounded bins only, one ``k,re,im`` row each; ``repr`` floats round-trip."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "re", "im"])
    for k in np.flatnonzero(est.mask):
        v = est.h_hat[k]
        w.writerow([int(k), repr(float(v.real)), repr(float(v.imag))])
    return buf.getvalue()


def estimate_from_csv(text: str, fft_size: int, slot_time: float = 0.0) -> ChannelEstimateVec:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["k", "re", "im"]:
        raise SrsParameterError("CSV header must be k,re,im")
    h = np.zeros(fft_size, dtype=complex)
    mask = np.zeros(fft_size, dtype=bool)
    for row in rows[1:]:
        if not row:
            continue
        k = int(row[0])
        if not 0 <= k < fft_size:
            raise SrsParameterError(f"bin {k} outside [0, {fft_size})")
        h[k] = float(row[1]) + 1j * float(row[2])
        mask[k] = True
    return ChannelEstimateVec(h, mask, slot_time)
