"""Multi-measurement RTT estimation for 5G NR: SRS simulation, matched-filter
and peak-detector ranging, DCI-triggered signalling, Monte Carlo harness."""

__version__ = "0.1.0"

from .numerology import (
    NrTiming,
    SystemConfig,
    TaCode,
    quantize_rtt_to_ta,
    range_to_rtt,
    rtt_to_range,
    ta_to_rtt,
)
from .srs import ChannelEstimateVec, PilotGrid, SrsConfig, generate_zc, ls_estimate, map_to_comb
from .channel import (
    ClockDriftModel,
    LosChannelParams,
    Measurement,
    apply_awgn,
    drift_error,
    los_response,
    simulate_measurement,
)
from .estimators import (
    MfSearchGrid,
    RangeEstimate,
    matched_filter_rtt,
    mf_objective,
    peak_detector_range,
    snr_estimate,
)
from .signaling import (
    DciFormatXY,
    RrcState,
    Scenario,
    SessionConfig,
    SessionTrace,
    build_dci,
    legacy_ue_trace,
    run_rtt_session,
)
from .harness import CdfTable, ExperimentConfig, empirical_cdf, run_experiment, write_results
