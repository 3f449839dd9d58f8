"""Slot-driven gNB/UE exchanges that produce timed SRS measurement batches.

Two procedures are modelled:

``proposed``
    Per round the gNB sends a positioning DCI, the UE re-syncs its DL timing,
    sends a contention-free PRACH with the dedicated preamble, receives the
    TA in the RAR and transmits SRS ``slots_rar_to_srs`` slots later.
``phytest``
    A fixed TA for the whole session; every round the UE syncs on an SSB and
    sends SRS ``phytest_ssb_to_srs_offset`` slots later.

:func:`legacy_ue_trace` runs the phytest procedure with a UE that only
corrects its DL timing on a periodic schedule, which gives the
ramp-and-reset RTT pattern of commercial UEs.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .channel import (
    ClockDriftModel,
    Measurement,
    correction_schedule,
    drift_error,
    simulate_measurement,
)
from .numerology import (
    SystemConfig,
    TaCode,
    TaRangeError,
    quantize_rtt_to_ta,
    range_to_rtt,
)
from .srs import ChannelEstimateVec, SrsConfig, mask_runs, runs_to_mask


class SessionError(RuntimeError):
    pass


class UnsupportedStateError(ValueError):
    pass


class DciEncodingError(ValueError):
    pass


class RrcState(enum.Enum):
    NR_RRC_IDLE = "NR_RRC_IDLE"
    NR_RRC_INACTIVE = "NR_RRC_INACTIVE"
    NR_RRC_CONNECTED = "NR_RRC_CONNECTED"


class Scrambling(enum.Enum):
    P_RNTI = "P_RNTI"
    C_RNTI = "C_RNTI"


@dataclass(frozen=True)
class DciFormatXY:
    """Positioning DCI payload; field widths in ``widths``."""

    i_rnti: int
    preamble_index: int
    ul_sul: int
    ssb_index: int
    prach_mask: int
    srs_request: int
    scrambling: Scrambling
    short_i_rnti: bool = False
    srs_request_bits: int = 2

    def __post_init__(self):
        if self.srs_request_bits not in (2, 3):
            raise DciEncodingError("SRS request field is 2 or 3 bits")
        for name, width in self.widths.items():
            v = getattr(self, name)
            if not isinstance(v, int) or not 0 <= v < (1 << width):
                raise DciEncodingError(f"{name}={v!r} does not fit in {width} bits")
        if self.scrambling is Scrambling.C_RNTI and self.i_rnti != 0:
            raise DciEncodingError("I-RNTI field must be 0 under C-RNTI scrambling")

    @property
    def widths(self) -> dict[str, int]:
        return {
            "i_rnti": 24 if self.short_i_rnti else 40,
            "preamble_index": 6,
            "ul_sul": 1,
            "ssb_index": 6,
            "prach_mask": 4,
            "srs_request": self.srs_request_bits,
        }

    @property
    def size(self) -> int:
        return sum(self.widths.values())

    def to_bits(self) -> str:
        return "".join(format(getattr(self, n), f"0{w}b") for n, w in self.widths.items())

    @classmethod
    def from_bits(
        cls,
        bits: str,
        scrambling: Scrambling,
        short_i_rnti: bool = False,
        srs_request_bits: int = 2,
    ) -> "DciFormatXY":
        widths = [24 if short_i_rnti else 40, 6, 1, 6, 4, srs_request_bits]
        if len(bits) != sum(widths):
            raise DciEncodingError(f"expected {sum(widths)} bits, got {len(bits)}")
        vals, pos = [], 0
        for w in widths:
            vals.append(int(bits[pos:pos + w], 2))
            pos += w
        return cls(*vals, scrambling=scrambling, short_i_rnti=short_i_rnti,
                   srs_request_bits=srs_request_bits)


def build_dci(
    rrc: RrcState,
    preamble: int,
    srs_req: int,
    i_rnti: int = 0,
    ul_sul: int = 0,
    ssb_index: int = 0,
    prach_mask: int = 0,
    short_i_rnti: bool = False,
    srs_request_bits: int = 2,
) -> DciFormatXY:
    """Positioning DCI for a UE in INACTIVE (P-RNTI) or CONNECTED (C-RNTI)."""
    if rrc is RrcState.NR_RRC_INACTIVE:
        scrambling = Scrambling.P_RNTI
    elif rrc is RrcState.NR_RRC_CONNECTED:
        scrambling, i_rnti = Scrambling.C_RNTI, 0
    else:
        raise UnsupportedStateError(f"RTT sessions are not supported in {rrc.value}")
    return DciFormatXY(i_rnti, preamble, ul_sul, ssb_index, prach_mask, srs_req, scrambling,
                       short_i_rnti, srs_request_bits)


@dataclass(frozen=True)
class SessionConfig:
    mode: str = "proposed"
    num_rounds: int = 1
    slots_dci_to_prach: int = 6
    slots_prach_to_rar: int = 4
    slots_rar_to_srs: int = 6
    phytest_ssb_to_srs_offset: int = 20
    round_period: int = 40
    rrc_state: RrcState = RrcState.NR_RRC_CONNECTED
    preamble_index: int = 5
    i_rnti: int = 0x12345
    srs_request: int = 1

    def __post_init__(self):
        if self.mode not in ("proposed", "phytest"):
            raise ValueError(f"unknown session mode {self.mode!r}")
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be >= 1")
        if min(self.slots_dci_to_prach, self.slots_prach_to_rar, self.slots_rar_to_srs,
               self.phytest_ssb_to_srs_offset, self.round_period) < 0:
            raise ValueError("slot offsets must be >= 0")
        if self.slots_dci_to_prach < 1 or self.slots_prach_to_rar < 1:
            raise ValueError("PRACH must follow the DCI and the RAR must follow the PRACH")
        if self.round_period < 1 or self.round_period <= self.round_span:
            raise ValueError(f"round_period must exceed the {self.round_span}-slot round span")

    @property
    def round_span(self) -> int:
        if self.mode == "proposed":
            return self.slots_dci_to_prach + self.slots_prach_to_rar + self.slots_rar_to_srs
        return self.phytest_ssb_to_srs_offset


@dataclass
class Scenario:
    """Static UE at ``distance_m`` seen through an AWGN LoS channel.

    ``fixed_ta`` pins the phytest TA (default: quantised true RTT).
    ``ta_jitter`` is the std (seconds) of the gNB's PRACH delay estimate.
    ``hardware_delay`` is a constant extra delay that calibration removes.
    """

    distance_m: float = 10.0
    snr_db: float = math.inf
    system: SystemConfig = field(default_factory=SystemConfig)
    drift: ClockDriftModel = field(default_factory=lambda: ClockDriftModel(drift_ppm=0.0))
    ta_jitter: float = 0.0
    fixed_ta: int | None = None
    hardware_delay: float = 0.0
    fixed_phase: float | None = None
    srs: SrsConfig | None = None

    @property
    def true_rtt(self) -> float:
        return range_to_rtt(self.distance_m)


@dataclass(frozen=True)
class Event:
    slot: int
    actor: str
    kind: str
    digest: str
    payload: dict = field(default_factory=dict, compare=False)


@dataclass(eq=False)
class SessionTrace:
    events: list[Event]
    measurements: list[Measurement]
    correction_times: list[float] = field(default_factory=list)


_ACTOR_RANK = {"gNB": 0, "UE": 1}


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class _Recorder:
    def __init__(self):
        self._events: list[tuple[int, int, int, Event]] = []

    def emit(self, slot: int, actor: str, kind: str, **payload):
        ev = Event(slot, actor, kind, _digest(payload), payload)
        self._events.append((slot, _ACTOR_RANK[actor], len(self._events), ev))

    def ordered(self) -> list[Event]:
        return [e for *_, e in sorted(self._events, key=lambda x: x[:3])]


def _measure_ta(true_rtt: float, scenario: Scenario, rng: np.random.Generator, extra: float) -> TaCode:
    sysc = scenario.system
    rtt = true_rtt + scenario.hardware_delay + extra
    if scenario.ta_jitter > 0:
        rtt += rng.normal(0.0, scenario.ta_jitter)
    try:
        return quantize_rtt_to_ta(max(rtt, 0.0), sysc.timing, cap=sysc.ta_cap)
    except TaRangeError as exc:
        raise SessionError(f"scenario RTT exceeds the PRACH TA range: {exc}") from exc


def run_rtt_session(cfg: SessionConfig, scenario: Scenario, rng: np.random.Generator) -> SessionTrace:
    """Run ``cfg.num_rounds`` rounds and collect one measurement per round.

    In proposed mode an ``on_dci`` drift model re-syncs at each DCI; in
    phytest mode it re-syncs at each SSB. A ``periodic`` model ignores
    triggers and follows its own schedule.
    """
    sysc = scenario.system
    slot = sysc.timing.slot_duration
    true_rtt = scenario.true_rtt
    drift = scenario.drift
    rec = _Recorder()

    first = 0
    triggers = [(first + r * cfg.round_period) * slot for r in range(cfg.num_rounds)]
    horizon = (first + (cfg.num_rounds - 1) * cfg.round_period + cfg.round_span) * slot
    corrections = correction_schedule(drift, horizon, triggers)

    measurements: list[Measurement] = []
    fixed_ta = None
    if cfg.mode == "phytest":
        fixed_ta = (
            TaCode(scenario.fixed_ta, sysc.ta_cap)
            if scenario.fixed_ta is not None
            else _measure_ta(true_rtt, scenario, rng, 0.0)
        )

    for r in range(cfg.num_rounds):
        s0 = first + r * cfg.round_period
        if cfg.mode == "proposed":
            dci = build_dci(cfg.rrc_state, cfg.preamble_index, cfg.srs_request, i_rnti=cfg.i_rnti)
            rec.emit(s0, "gNB", "DCI_TX", round=r, bits=dci.to_bits(), scrambling=dci.scrambling.value)
            rec.emit(s0, "UE", "DL_SYNC", round=r, corrected=drift.policy == "on_dci")
            s_prach = s0 + cfg.slots_dci_to_prach
            e_prach = drift_error(s_prach * slot, drift, corrections)
            rec.emit(s_prach, "UE", "PRACH_TX", round=r, preamble=cfg.preamble_index)
            ta = _measure_ta(true_rtt, scenario, rng, e_prach)
            rec.emit(s_prach, "gNB", "TA_EST", round=r, ta=ta.value)
            s_rar = s_prach + cfg.slots_prach_to_rar
            rec.emit(s_rar, "gNB", "RAR_TX", round=r, ta=ta.value)
            s_srs = s_rar + cfg.slots_rar_to_srs
        else:
            ta = fixed_ta
            rec.emit(s0, "gNB", "SSB_TX", round=r)
            rec.emit(s0, "UE", "DL_SYNC", round=r, corrected=drift.policy == "on_dci")
            s_srs = s0 + cfg.phytest_ssb_to_srs_offset
        t = s_srs * slot
        rec.emit(s_srs, "UE", "SRS_TX", round=r, ta=ta.value)
        m = simulate_measurement(
            true_rtt,
            ta,
            scenario.snr_db,
            sysc,
            t=t,
            drift=drift,
            rng=rng,
            correction_times=corrections,
            srs=scenario.srs,
            phase=scenario.fixed_phase,
            extra_delay=scenario.hardware_delay,
        )
        measurements.append(m)
        rec.emit(s_srs, "gNB", "SRS_RX", round=r, ta=ta.value, tau_r=m.tau_r,
                 cp_violation=m.cp_violation)

    return SessionTrace(rec.ordered(), measurements, corrections)


def legacy_ue_trace(
    cfg: SessionConfig,
    scenario: Scenario,
    rng: np.random.Generator,
    interval: float | None = None,
    threshold: float | None = None,
) -> SessionTrace:
    """Phytest session with a UE that re-syncs only on its own schedule."""
    d = scenario.drift
    drift = ClockDriftModel(
        drift_ppm=d.drift_ppm,
        policy="periodic",
        interval=interval if interval is not None else d.interval,
        threshold=threshold if threshold is not None else d.threshold,
        initial_error=d.initial_error,
    )
    return run_rtt_session(replace(cfg, mode="phytest"), replace(scenario, drift=drift), rng)


# --- JSON lines ----------------------------------------------------------


def trace_to_jsonl(trace: SessionTrace) -> str:
    lines = []
    for ev in trace.events:
        lines.append(json.dumps({
            "type": "event", "slot": ev.slot, "actor": ev.actor, "kind": ev.kind,
            "digest": ev.digest, "payload": ev.payload,
        }, sort_keys=True))
    for m in trace.measurements:
        est = m.estimate
        lines.append(json.dumps({
            "type": "measurement",
            "ta_code": m.ta_code.value,
            "ta_cap": m.ta_code.cap,
            "tau_r": m.tau_r,
            "slot_time": m.slot_time,
            "true_rtt": None if math.isnan(m.true_rtt) else m.true_rtt,
            "cp_violation": m.cp_violation,
            "fft_size": est.fft_size,
            "mask_runs": mask_runs(est.mask),
            "re": est.sounded.real.tolist(),
            "im": est.sounded.imag.tolist(),
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def trace_from_jsonl(lines: Iterable[str]) -> SessionTrace:
    events, meas = [], []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        if rec["type"] == "event":
            events.append(Event(rec["slot"], rec["actor"], rec["kind"], rec["digest"], rec["payload"]))
        elif rec["type"] == "measurement":
            mask = runs_to_mask(rec["mask_runs"], rec["fft_size"])
            h = np.zeros(rec["fft_size"], dtype=complex)
            h[mask] = np.asarray(rec["re"]) + 1j * np.asarray(rec["im"])
            ta = TaCode(rec["ta_code"], rec.get("ta_cap", 3846))
            true_rtt = rec.get("true_rtt")
            meas.append(Measurement(
                estimate=ChannelEstimateVec(h, mask, rec["slot_time"]),
                tau_r=rec["tau_r"],
                ta_code=ta,
                slot_time=rec["slot_time"],
                true_rtt=math.nan if true_rtt is None else true_rtt,
                cp_violation=rec.get("cp_violation", False),
            ))
        else:
            raise ValueError(f"unknown record type {rec['type']!r}")
    return SessionTrace(events, meas)


def write_trace_jsonl(trace: SessionTrace, path: str | Path) -> None:
    Path(path).write_text(trace_to_jsonl(trace))


def read_trace_jsonl(path: str | Path) -> SessionTrace:
    with open(path) as fh:
        return trace_from_jsonl(fh)
