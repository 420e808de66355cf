import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from condwalk.analysis import AveragingKind, AveragingScheme, average_conditioned, similarity
from condwalk.tm_emulator import (
    ClickEvent,
    ClickStream,
    ConfigError,
    Detector,
    EmptySelection,
    EmulatorConfig,
    decode_time,
    effective_rate,
    encode_time,
    reconstruct_conditioned,
    reconstruct_loss_averaged,
    simulate_runs,
)
from condwalk.two_photon import ConditioningSpec, Convention, conditioned_distribution
from condwalk.walk_core import Coin, Mode

H, V = Coin.H, Coin.V
IDEAL = dict(detector_efficiency=1.0, setup_klyshko=1.0, pair_generation_prob=1.0)


def ideal(**kw):
    return EmulatorConfig(**{**IDEAL, **kw})


@pytest.fixture(scope="module")
def bunched_stream():
    return simulate_runs(ideal(outcoupling_prob=1.0, dead_time_ns=0.0, runs=20_000, rng_seed=11))


@pytest.fixture(scope="module")
def lossy_stream():
    return simulate_runs(ideal(outcoupling_prob=0.4, dead_time_ns=0.0, max_step=6, runs=300_000, rng_seed=5))


def within_sigma(counts, probs, k):
    total = sum(counts.values())
    for m, p in probs.items():
        sigma = math.sqrt(total * p * (1 - p))
        assert abs(counts.get(m, 0) - total * p) <= k * sigma + 1e-9, m
    assert set(counts) <= {m for m, p in probs.items() if p > 0}


class TestConfig:
    def test_defaults_valid(self):
        cfg = EmulatorConfig()
        assert cfg.period_ns == 1e5
        assert cfg.click_efficiency == pytest.approx(0.16)
        assert cfg.convention is Convention.ANNIHILATION

    @pytest.mark.parametrize(
        "kw",
        [
            {"outcoupling_prob": 0.0},
            {"outcoupling_prob": 1.5},
            {"detector_efficiency": -0.1},
            {"pair_generation_prob": 2.0},
            {"dead_time_ns": 200.0},
            {"max_step": 0},
            {"max_step": 40},
            {"repetition_rate_hz": 1e6},
            {"runs": -1},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            EmulatorConfig(**kw)

    def test_convention_parsed(self):
        assert EmulatorConfig(convention="projector").convention is Convention.PROJECTOR


class TestTimeEncoding:
    @given(st.integers(0, 10**6), st.integers(1, 10), st.data())
    def test_roundtrip(self, run, step, data):
        cfg = EmulatorConfig()
        x = data.draw(st.integers(-step, step).filter(lambda v: (v + step) % 2 == 0))
        assert decode_time(encode_time(run, step, x, cfg), cfg) == (run, step, x)

    def test_array_matches_scalar(self):
        cfg = EmulatorConfig()
        runs = np.array([0, 5, 123456])
        steps = np.array([1, 4, 10])
        xs = np.array([-1, 2, -10])
        arr = encode_time(runs, steps, xs, cfg)
        for r, s, x, t in zip(runs, steps, xs, arr):
            assert encode_time(int(r), int(s), int(x), cfg) == t

    def test_bins_ordered_in_run(self):
        cfg = EmulatorConfig()
        times = [encode_time(0, s, x, cfg) for s in range(1, 11) for x in range(-s, s + 1, 2)]
        assert times == sorted(times)
        assert len(set(times)) == len(times)
        assert max(times) < encode_time(1, 1, -1, cfg)


class TestSimulate:
    def test_bunched_outputs(self, bunched_stream):
        assert bunched_stream.diagnostics.generated_pairs == 20_000
        runs = bunched_stream.records["run_id"]
        assert np.all(np.bincount(runs.astype(np.int64)) == 2)
        assert np.all(bunched_stream.records["step"] == 1)
        modes = {e.mode for e in bunched_stream}
        assert modes == {Mode(1, H), Mode(-1, V)}
        n = len(bunched_stream) // 2
        right = int(np.sum(bunched_stream.records["position"] == 1)) // 2
        assert abs(right - n / 2) <= 3 * math.sqrt(n / 4)

    def test_no_pairs(self):
        s = simulate_runs(EmulatorConfig(pair_generation_prob=0.0, runs=5000))
        assert len(s) == 0
        assert s.diagnostics.generated_pairs == 0

    def test_zero_runs(self):
        assert len(simulate_runs(EmulatorConfig(runs=0))) == 0

    def test_same_seed_identical(self):
        cfg = EmulatorConfig(runs=70_000, rng_seed=3)
        a, b = simulate_runs(cfg), simulate_runs(cfg)
        assert a.to_bytes() == b.to_bytes()
        assert a.diagnostics == b.diagnostics

    def test_seed_changes_stream(self):
        a = simulate_runs(EmulatorConfig(runs=20_000, rng_seed=1))
        b = simulate_runs(EmulatorConfig(runs=20_000, rng_seed=2))
        assert a != b

    @pytest.mark.parametrize("workers", [2, 4])
    def test_worker_count_irrelevant(self, workers):
        cfg = ideal(runs=200_000, rng_seed=9)
        assert simulate_runs(cfg).to_bytes() == simulate_runs(cfg, workers=workers).to_bytes()

    def test_sorted_and_detector_matches_polarization(self, lossy_stream):
        r = lossy_stream.records
        order = np.lexsort((r["time_ns"], r["run_id"]))
        assert np.array_equal(order, np.arange(len(r)))
        assert np.array_equal(r["detector"], r["polarization"])
        assert np.all(r["step"] <= 6)
        assert np.all((r["position"] + r["step"]) % 2 == 0)

    def test_dead_time_only_within_bin(self):
        s = simulate_runs(ideal(outcoupling_prob=0.3, runs=100_000, rng_seed=4))
        assert s.diagnostics.dead_time_drops > 0
        assert s.diagnostics.cross_bin_drops == 0

    def test_efficiency_drops(self):
        s = simulate_runs(EmulatorConfig(pair_generation_prob=1.0, runs=10_000, rng_seed=1))
        d = s.diagnostics
        assert d.efficiency_drops > 0
        assert len(s) <= 2 * d.generated_pairs - d.efficiency_drops


class TestStreamIO:
    def test_csv_roundtrip(self, lossy_stream, tmp_path):
        part = lossy_stream[:500]
        path = tmp_path / "clicks.csv"
        part.save(path)
        assert ClickStream.load(path) == part
        assert path.read_text().splitlines()[0] == "run_id,step,position,polarization,detector,time_ns"

    def test_binary_roundtrip(self, lossy_stream, tmp_path):
        path = tmp_path / "clicks.bin"
        lossy_stream.save(path)
        assert ClickStream.load(path) == lossy_stream

    def test_event_access(self, bunched_stream):
        e = bunched_stream[0]
        assert isinstance(e, ClickEvent)
        assert isinstance(e.detector, Detector)
        assert ClickStream.from_events(list(bunched_stream[:10])) == bunched_stream[:10]

    def test_detector_labels(self):
        assert Detector.H_PORT.label == "H-port"
        assert Detector.parse("V-port") is Detector.V_PORT


class TestReconstruct:
    @pytest.mark.parametrize("mode,n", [(Mode(1, H), 3), (Mode(-1, V), 2), (Mode(-1, V), 4)])
    def test_matches_conditioned_distribution(self, lossy_stream, mode, n):
        d, counts = reconstruct_conditioned(lossy_stream, 1, mode, n)
        ref, _ = conditioned_distribution(ConditioningSpec(1, mode, Convention.ANNIHILATION), n)
        within_sigma(counts, dict(ref.entries), 3)
        assert similarity(d, ref) > 0.99

    def test_born_aggregate(self, lossy_stream):
        d, counts = reconstruct_loss_averaged(lossy_stream, 2, 4)
        ref = average_conditioned({2}, 4, AveragingScheme(AveragingKind.BORN), Convention.ANNIHILATION)
        within_sigma(counts, dict(ref.entries), 4)

    def test_no_pairs(self):
        s = simulate_runs(EmulatorConfig(pair_generation_prob=0.0, runs=100))
        with pytest.raises(EmptySelection):
            reconstruct_conditioned(s, 1, Mode(1, H), 2)

    def test_unoccupied_mode(self, lossy_stream):
        with pytest.raises(EmptySelection, match="matching first click"):
            reconstruct_conditioned(lossy_stream, 2, Mode(2, V), 4)

    def test_order(self, lossy_stream):
        with pytest.raises(ValueError):
            reconstruct_conditioned(lossy_stream, 3, Mode(1, H), 3)

    def test_accepts_event_list(self, lossy_stream):
        a = reconstruct_conditioned(lossy_stream, 1, Mode(1, H), 3)
        b = reconstruct_conditioned(list(lossy_stream), 1, Mode(1, H), 3)
        assert a[1] == b[1]


class TestEffectiveRate:
    def test_unit_probabilities(self):
        # a pair always leaves together at step 1 when p = 1
        cfg = ideal(outcoupling_prob=1.0)
        assert effective_rate(cfg, 1, 2) == 0.0

    def test_product_form(self):
        cfg = ideal(outcoupling_prob=0.15, pair_generation_prob=0.1)
        expected = 2 * 0.1 * 0.15 * 0.85 * 0.15 * cfg.repetition_rate_hz
        assert effective_rate(cfg, 1, 2) == pytest.approx(expected, rel=1e-12)

    def test_decreasing_in_out_step(self):
        cfg = EmulatorConfig()
        rates = [effective_rate(cfg, 1, n) for n in range(2, 11)]
        assert all(a > b for a, b in zip(rates, rates[1:]))

    @pytest.mark.parametrize("m,n", [(0, 2), (2, 2), (3, 1), (1, 11)])
    def test_bad_steps(self, m, n):
        with pytest.raises(ValueError):
            effective_rate(EmulatorConfig(), m, n)

    def test_matches_simulation(self, lossy_stream):
        cfg = ideal(outcoupling_prob=0.4, dead_time_ns=0.0, max_step=6, runs=300_000)
        r = lossy_stream.records
        _, idx, cnt = np.unique(r["run_id"], return_index=True, return_counts=True)
        two = idx[cnt == 2]
        observed = int(np.sum((r["step"][two] == 2) & (r["step"][two + 1] == 5)))
        expected = effective_rate(cfg, 2, 5) * cfg.runs / cfg.repetition_rate_hz
        assert abs(observed - expected) <= 3 * math.sqrt(expected)
