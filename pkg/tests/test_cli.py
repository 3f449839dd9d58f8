import json

import numpy as np

from nr_rtt.cli import main
from nr_rtt.signaling import read_trace_jsonl
from nr_rtt.srs import estimate_to_csv, write_estimates_bin


def test_simulate(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('distances_m = [10.0]\nsnr_points_db = [-5.0]\nm_values = [4]\ntrials_per_distance = 16\n')
    out = tmp_path / "res"
    assert main(["simulate", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == 0
    assert (out / "mf_snr-5dB_m4.csv").exists() and (out / "pd_snr-5dB_m4.csv").exists()
    assert json.loads((out / "manifest.json").read_text())["base_seed"] == 4
    assert "MF snr=-5dB M=4" in capsys.readouterr().out


def test_trace_and_estimate(tmp_path, capsys):
    p = tmp_path / "t.jsonl"
    assert main(["trace", "--mode", "proposed", "--rounds", "4", "--distance", "10",
                 "--drift-ppm", "0", "--out", str(p)]) == 0
    tr = read_trace_jsonl(p)
    assert len(tr.measurements) == 4
    capsys.readouterr()
    assert main(["estimate", "--input", str(p), "--method", "mf"]) == 0
    line = capsys.readouterr().out.strip()
    rng_m = float(line.split("range=")[1].split()[0])
    assert abs(rng_m - 10.0) < 0.05
    assert main(["estimate", "--input", str(p), "--method", "pd", "--m", "2"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2


def test_legacy_trace(tmp_path):
    p = tmp_path / "legacy.jsonl"
    assert main(["trace", "--mode", "legacy", "--rounds", "3", "--out", str(p)]) == 0
    kinds = {e.kind for e in read_trace_jsonl(p).events}
    assert "SSB_TX" in kinds and "DCI_TX" not in kinds


def test_estimate_from_bin_and_csv(tmp_path, capsys):
    p = tmp_path / "t.jsonl"
    main(["trace", "--rounds", "2", "--drift-ppm", "0", "--distance", "9", "--out", str(p)])
    ests = [m.estimate for m in read_trace_jsonl(p).measurements]
    b = tmp_path / "cap.bin"
    write_estimates_bin(b, ests)
    c = tmp_path / "cap.csv"
    c.write_text(estimate_to_csv(ests[0]))
    capsys.readouterr()
    assert main(["estimate", "--input", str(b), "--input", str(c), "--ta", "0"]) == 0
    out = capsys.readouterr().out
    assert "M=3" in out
    assert abs(float(out.split("range=")[1].split()[0]) - 9.0) < 0.05


def test_cdf(tmp_path, capsys):
    p = tmp_path / "e.csv"
    p.write_text("error_m,cum_prob\n" + "\n".join(f"{x},{(x)/10}" for x in range(1, 11)) + "\n")
    assert main(["cdf", "--input", str(p)]) == 0
    assert capsys.readouterr().out.strip() == "p0.9: 9"
    assert main(["cdf", "--input", str(p), "--percentile", "0.5", "--percentile", "1"]) == 0
    assert capsys.readouterr().out.split() == ["p0.5:", "5", "p1:", "10"]
