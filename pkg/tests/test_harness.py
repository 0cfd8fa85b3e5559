import csv
import filecmp

import numpy as np
import pytest

from batsv2x import SimConfig, harness
from batsv2x.errors import AllVehiclesLeft

SMALL = SimConfig(F=2000, k=4)


def test_seed_replay_identical():
    a = harness.run_trial(SMALL, 3)
    b = harness.run_trial(SMALL, 3)
    assert a == b


def test_substreams_are_independent():
    x = harness.stream(1, harness.SHARING).random(4)
    y = harness.stream(1, harness.RECEPTION).random(4)
    z = harness.stream(2, harness.SHARING).random(4)
    assert not np.allclose(x, y) and not np.allclose(x, z)
    assert np.array_equal(x, harness.stream(1, harness.SHARING).random(4))


def test_slow_group_needs_no_sharing():
    r = harness.run_trial(SimConfig(v_mean=40.0), 0)
    assert r.transmissions == 0 and all(s == 0 for s in r.decode_slot)


def test_default_group_needs_sharing():
    r = harness.run_trial(SimConfig(), 0)
    assert r.transmissions > 0 and r.bytes_ok
    assert r.transmissions >= r.lp_bound
    assert r.phase2_delay == pytest.approx(r.transmissions * SimConfig().timing().slot)


def test_dynamics_zero_fraction_is_plain_trial():
    assert harness.dynamics_experiment(SMALL, 0.0, 4) == harness.run_trial(SMALL, 4)


def test_dynamics_leaver_count():
    r = harness.dynamics_experiment(SimConfig(F=2000, k=8), 0.25, 1)
    assert r.k == 6 and len(r.vehicles) == 6
    with pytest.raises(AllVehiclesLeft):
        harness.dynamics_experiment(SimConfig(F=2000, k=1), 0.5, 0)
    with pytest.raises(ValueError):
        harness.dynamics_experiment(SMALL, 1.0, 0)


def test_lossless_channels_need_no_sharing():
    cfg = SimConfig(F=2000, k=4, Pt_dBm=200.0, Pt_prime_dBm=200.0)
    assert harness.run_trial(cfg, 0).transmissions == 0
    assert harness.baseline_block_rlnc(cfg, 0).transmissions == 0


def test_baseline_replay_and_requirements():
    cfg = SimConfig(F=2000, k=4)
    a = harness.baseline_block_rlnc(cfg, 2)
    assert a == harness.baseline_block_rlnc(cfg, 2)
    assert a.bytes_ok and a.scheme == "block_rlnc"
    with pytest.raises(ValueError):
        harness.baseline_block_rlnc(SimConfig(F=1000), 0)


def _check_schema(path, int_cols=(), float_cols=()):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    for r in rows:
        for c in int_cols:
            int(r[c])
        for c in float_cols:
            float(r[c])
    return rows


def test_experiment_csvs_schema_and_reproducible(tmp_path):
    cfg = SimConfig(F=2000, k=3, trials=2, sweep_k=(2, 3), sweep_speeds=(50.0, 60.0), gain_k=(1, 2))
    trial_ints = ("seed", "k", "N", "J", "transmissions", "exhausted", "incomplete", "bytes_ok")
    trial_floats = ("phase1_duration", "phase2_delay", "lp_bound", "lp_delay", "Kg_exp")
    for exp in harness.EXPERIMENTS:
        p1 = harness.run_experiment(cfg, exp, str(tmp_path / "a"))
        p2 = harness.run_experiment(cfg, exp, str(tmp_path / "b"))
        assert filecmp.cmp(p1, p2, shallow=False), exp
        if exp in ("speed", "groupsize"):
            rows = _check_schema(p1, ("seed", "k", "N", "J", "K_min_emp", "Kg_emp", "needs_v2v"),
                                 ("v_mean", "K_min_exp", "Kg_exp", "phase1_duration"))
            assert len(rows) == 4
        elif exp == "rankcdf":
            rows = _check_schema(p1, ("r",), ("f_e", "F_e"))
            assert len(rows) == cfg.M + 1
        elif exp == "rate":
            _check_schema(p1, ("seed", "vehicle", "bottleneck"), ("window_start", "rate_pps"))
        elif exp == "dynamics":
            rows = _check_schema(p1, trial_ints, trial_floats + ("leave_fraction",))
            assert len(rows) == 4
        else:
            rows = _check_schema(p1, trial_ints, trial_floats)
            assert len(rows) == (8 if exp == "delay" else 2)
