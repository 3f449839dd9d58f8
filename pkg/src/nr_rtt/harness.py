"""Monte Carlo range-error experiments and their CSV/JSON outputs."""
from __future__ import annotations

import json
import logging
import math
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ClockDriftModel
from .estimators import matched_filter_rtt, peak_detector_range
from .numerology import SPEED_OF_LIGHT, SystemConfig, TaRangeError, quantize_rtt_to_ta, range_to_rtt
from .signaling import Scenario, SessionConfig, run_rtt_session

log = logging.getLogger(__name__)

DESK_TRIALS = 500
FULL_TRIALS = 5000
METHODS = ("MF", "PD")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    distances_m: tuple[float, ...] = (7.0, 8.0, 9.0, 10.0, 11.0)
    snr_points_db: tuple[float, ...] = (25.0, -25.0)
    m_values: tuple[int, ...] = (20, 60)
    trials_per_distance: int = DESK_TRIALS
    base_seed: int = 0
    mode: str = "phytest"
    drift_ppm: float = 2.0
    ta_jitter: float = 0.0
    hardware_delay: float = 0.0

    def __post_init__(self):
        for name in ("distances_m", "snr_points_db", "m_values"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.distances_m or not self.snr_points_db or not self.m_values:
            raise ConfigError("distances, SNR points and M values must be nonempty")
        if any(d < 0 for d in self.distances_m):
            raise ConfigError("distances must be non-negative")
        if any(m < 1 for m in self.m_values):
            raise ConfigError("M values must be >= 1")
        if self.trials_per_distance < max(self.m_values):
            raise ConfigError("trials_per_distance must cover at least one batch of the largest M")
        if self.mode not in ("proposed", "phytest"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        for d in self.distances_m:
            try:
                quantize_rtt_to_ta(range_to_rtt(d) + self.hardware_delay, self.system.timing,
                                   cap=self.system.ta_cap)
            except TaRangeError as exc:
                raise ConfigError(f"distance {d} m is beyond the TA range") from exc

    def session_config(self, rounds: int) -> SessionConfig:
        return SessionConfig(mode=self.mode, num_rounds=rounds)

    def calibration_offset(self) -> float:
        """Known constant delay (s) removed before computing errors.

        Hardware delay plus the DL timing drift accumulated between the
        UE re-sync (DCI or SSB) and the SRS, which is the same every round.
        """
        s = self.session_config(1)
        gap = s.round_span * self.system.timing.slot_duration
        return self.hardware_delay + self.drift_ppm * 1e-6 * gap

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "system":
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = [_enc_float(x) for x in v]
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "system" in kw:
            kw["system"] = SystemConfig.from_dict(kw["system"])
        if "snr_points_db" in kw:
            kw["snr_points_db"] = tuple(_dec_float(x) for x in kw["snr_points_db"])
        if "distances_m" in kw:
            kw["distances_m"] = tuple(float(x) for x in kw["distances_m"])
        if "m_values" in kw:
            kw["m_values"] = tuple(int(x) for x in kw["m_values"])
        return cls(**kw)


def _enc_float(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _dec_float(x) -> float:
    return float(x)


def load_config(path: str | Path) -> ExperimentConfig:
    import tomli

    with open(path, "rb") as fh:
        return ExperimentConfig.from_dict(tomli.load(fh))


@dataclass(frozen=True, eq=False)
class CdfTable:
    errors: np.ndarray
    cum_prob: np.ndarray

    def percentile(self, p: float) -> float:
        """Smallest error whose cumulative probability is >= p."""
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        i = int(np.searchsorted(self.cum_prob, p, side="left"))
        return float(self.errors[min(i, self.errors.size - 1)])

    def cdf_at(self, x: float) -> float:
        """Fraction of samples <= x."""
        return np.searchsorted(self.errors, x, side="right") / self.errors.size

    def __len__(self):
        return self.errors.size


def empirical_cdf(samples: Sequence[float]) -> CdfTable:
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ValueError("empirical_cdf needs at least one sample")
    n = x.size
    return CdfTable(x, np.arange(1, n + 1) / n)


def _run_cell(cfg: ExperimentConfig, i_snr: int, i_dist: int) -> dict[tuple[str, int], list[float]]:
    snr = cfg.snr_points_db[i_snr]
    dist = cfg.distances_m[i_dist]
    rng = np.random.default_rng([cfg.base_seed, i_snr, i_dist])
    scenario = Scenario(
        distance_m=dist,
        snr_db=snr,
        system=cfg.system,
        drift=ClockDriftModel(drift_ppm=cfg.drift_ppm, policy="on_dci"),
        ta_jitter=cfg.ta_jitter,
        hardware_delay=cfg.hardware_delay,
    )
    trace = run_rtt_session(cfg.session_config(cfg.trials_per_distance), scenario, rng)
    meas = trace.measurements
    offset_m = cfg.calibration_offset() * SPEED_OF_LIGHT / 2
    out: dict[tuple[str, int], list[float]] = {}
    for M in cfg.m_values:
        mf, pd = [], []
        for start in range(0, len(meas) - M + 1, M):
            batch = meas[start:start + M]
            mf.append(abs(matched_filter_rtt(batch, system=cfg.system).range_m - offset_m - dist))
            pd.append(abs(peak_detector_range(batch, system=cfg.system).range_m - offset_m - dist))
        out[("MF", M)] = mf
        out[("PD", M)] = pd
    return out


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> dict[tuple[str, float, int], CdfTable]:
    """Range-error CDFs keyed by (method, snr_db, M).

    Each (SNR, distance) cell is one session of ``trials_per_distance``
    measurements with its own generator, split into disjoint batches of M.
    """
    cells = [(i, j) for i in range(len(cfg.snr_points_db)) for j in range(len(cfg.distances_m))]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_cell, [cfg] * len(cells), *zip(*cells)))
    else:
        parts = [_run_cell(cfg, i, j) for i, j in cells]
    acc: dict[tuple[str, float, int], list[float]] = {}
    for (i, _), part in zip(cells, parts):
        snr = cfg.snr_points_db[i]
        for (method, M), errs in part.items():
            acc.setdefault((method, snr, M), []).extend(errs)
    return {k: empirical_cdf(v) for k, v in sorted(acc.items(), key=lambda kv: _key_sort(kv[0]))}


def _key_sort(key):
    method, snr, M = key
    return (method, -snr, M)


def result_filename(method: str, snr: float, M: int) -> str:
    s = "inf" if math.isinf(snr) else f"{snr:+g}dB"
    return f"{method.lower()}_snr{s}_m{M}.csv"


def version_string() -> str:
    from . import __version__

    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_results(
    results: dict[tuple[str, float, int], CdfTable],
    path: str | Path,
    cfg: ExperimentConfig | None = None,
) -> list[Path]:
    """One ``error_m,cum_prob`` CSV per key plus ``manifest.json``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (method, snr, M), table in results.items():
        p = out / result_filename(method, snr, M)
        lines = ["error_m,cum_prob"]
        lines += [f"{e!r},{c!r}" for e, c in zip(table.errors.tolist(), table.cum_prob.tolist())]
        p.write_text("\n".join(lines) + "\n")
        written.append(p)
    manifest = {
        "version": version_string(),
        "base_seed": cfg.base_seed if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "files": [p.name for p in written],
    }
    mp = out / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(mp)
    return written


def read_manifest_config(path: str | Path) -> ExperimentConfig:
    data = json.loads(Path(path).read_text())
    return ExperimentConfig.from_dict(data["config"])


def read_error_csv(path: str | Path) -> np.ndarray:
    """Errors from a results CSV, or from a bare one-number-per-line file."""
    vals = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("error_m"):
            continue
        vals.append(float(line.split(",")[0]))
    return np.asarray(vals)


def with_full_trials(cfg: ExperimentConfig) -> ExperimentConfig:
    return replace(cfg, trials_per_distance=FULL_TRIALS)
