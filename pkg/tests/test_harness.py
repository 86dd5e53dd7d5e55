"""Experiment harness: traces, summaries, audits and the default-run shape."""

import json

import numpy as np
import pytest

from edge_miner.core.fog import FogRepository
from edge_miner.core.harness import (
    audit_full_chain,
    emit_csv,
    load_csv,
    replay,
    run_experiment,
    summarize,
    write_results,
)
from edge_miner.data.models import ExperimentConfig, LatencyTrace, OffloadBundle, OffloadReceipt, ReputationConfig
from edge_miner.errors import EmptyTrace, InconsistentBundle, StallDetected, TooShort

SMALL = dict(txn_count=40, activation_threshold=0, offload_threshold=2)


@pytest.fixture(scope="module")
def default_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="module")
def default_run(default_cfg, tmp_path_factory):
    workdir = tmp_path_factory.mktemp("default-run")
    return run_experiment(default_cfg, workdir), workdir


@pytest.fixture
def small_cfg():
    return ExperimentConfig(**SMALL)


class TestSmallRuns:
    def test_traces_and_audit(self, small_cfg):
        result = run_experiment(small_cfg)
        assert len(result.contract_trace) == 40
        assert len(result.consensus_trace) == 4
        assert result.audit.passed
        assert result.audit.blocks_audited == 4
        assert result.audit.entries_audited == 40
        assert result.safety_violations == []

    def test_single_block(self):
        result = run_experiment(ExperimentConfig(txn_count=10, block_size=10))
        assert len(result.consensus_trace) == 1
        assert result.committed == {"miner-0": 1, "miner-1": 1, "miner-2": 1}

    def test_conservation(self):
        result = run_experiment(ExperimentConfig(txn_count=35, activation_threshold=0))
        committed = result.committed["miner-0"]
        assert result.sent == result.verified == 35
        assert result.sent == 10 * committed + result.residual_pool
        assert result.residual_pool == 5

    def test_corrupted_fog_file_fails_audit(self, small_cfg, tmp_path):
        run_experiment(small_cfg, tmp_path)
        repository = FogRepository(tmp_path / "fog")
        segment = repository.segment_dir("miner-1", 0)
        records, files = repository.load_segment("miner-1", 0)
        target = records[1].data_hash
        obj = json.loads(files[target])
        signature = obj["Msg"][0]["SensorSignature"]
        obj["Msg"][0]["SensorSignature"] = ("B" if signature[0] == "A" else "A") + signature[1:]
        (segment / f"{target}.json").write_text(json.dumps(obj), encoding="utf-8")

        report = audit_full_chain(FogRepository(tmp_path / "fog"), small_cfg)
        assert not report.passed
        assert report.failed_data_hash == target

    def test_deleted_block_file_fails_audit(self, small_cfg, tmp_path):
        run_experiment(small_cfg, tmp_path)
        repository = FogRepository(tmp_path / "fog")
        records, _ = repository.load_segment("miner-0", 1)
        (repository.segment_dir("miner-0", 1) / f"{records[0].data_hash}.json").unlink()
        report = audit_full_chain(FogRepository(tmp_path / "fog"), small_cfg)
        assert report.failed_data_hash == records[0].data_hash
        assert report.reason == "block file missing"


class RejectingFog:
    """Fog that answers every bundle with a lockstep violation."""

    def store_bundle(self, bundle: OffloadBundle) -> OffloadReceipt:
        raise InconsistentBundle(f"segment {bundle.segment_index} rejected")


class TestStalls:
    def test_fog_down_exhausts_in_chain_store(self):
        with pytest.raises(StallDetected, match="records held, fog down"):
            run_experiment(ExperimentConfig(**SMALL, fog_fail_after=0))

    def test_reputation_floor_leaves_no_leader(self):
        cfg = ExperimentConfig(txn_count=20, reputation=ReputationConfig(reputation_floor=1))
        with pytest.raises(StallDetected, match="no eligible leader for height 1"):
            run_experiment(cfg)

    def test_rejected_bundle_halts_run(self):
        with pytest.raises(StallDetected, match="segment 0 rejected"):
            run_experiment(ExperimentConfig(**SMALL), fog=RejectingFog())


class TestCsv:
    def test_emit_and_load(self, tmp_path):
        trace = LatencyTrace.from_values("contract", [1.5, 2.25, 3.0])
        path = emit_csv(trace, tmp_path / "contract.csv")
        assert path.read_text().splitlines() == [
            "index,latency",
            "1,1.5000",
            "2,2.2500",
            "3,3.0000",
        ]
        assert load_csv(path).values == [1.5, 2.25, 3.0]
        first = path.read_bytes()
        emit_csv(trace, path)
        assert path.read_bytes() == first

    def test_empty_trace_refused(self, tmp_path):
        with pytest.raises(EmptyTrace):
            emit_csv(LatencyTrace(name="contract"), tmp_path / "empty.csv")


class TestSummarize:
    def test_too_short(self):
        with pytest.raises(TooShort):
            summarize(LatencyTrace.from_values("c", [1.0] * 19), ExperimentConfig())

    def test_flat_trace_has_no_change_point(self):
        summary = summarize(LatencyTrace.from_values("c", [3.0] * 300), ExperimentConfig())
        assert summary.change_point is None
        assert summary.phase1_mean == 3.0

    def test_synthetic_step_and_peaks(self):
        cfg = ExperimentConfig()
        values = [3.0] * 100 + [13.0] * 900
        for i in range(199, 1000, 100):
            values[i] = 60.0
        summary = summarize(LatencyTrace.from_values("c", values), cfg)
        assert summary.change_point == 101
        assert summary.window_maxima == list(range(200, 1001, 100))
        assert summary.peak_indices == list(range(200, 1000, 100))
        assert summary.phase2_mean > summary.phase1_mean


class TestResults:
    def test_write_and_replay(self, small_cfg, tmp_path):
        out = tmp_path / "out"
        paths = write_results(run_experiment(small_cfg), out)
        assert set(paths) == {"contract", "consensus", "summary", "audit", "config"}
        assert replay(out) == []

    def test_replay_detects_edits(self, small_cfg, tmp_path):
        out = tmp_path / "out"
        write_results(run_experiment(small_cfg), out)
        (out / "consensus.csv").write_text("index,latency\n1,0.0000\n")
        assert replay(out) == ["consensus"]


@pytest.mark.slow
class TestDefaultRun:
    def test_trace_lengths(self, default_run):
        result, _ = default_run
        assert len(result.contract_trace) == 1000
        assert len(result.consensus_trace) == 100
        assert result.safety_violations == []

    def test_phase_transition(self, default_run, default_cfg):
        result, _ = default_run
        values = np.asarray(result.contract_trace.values)
        step = default_cfg.costs.metadata_upkeep_ms + default_cfg.costs.file_upkeep_ms
        assert values[100:].mean() - values[:100].mean() >= step
        assert abs(result.summary.change_point - 101) <= 10

    def test_offload_peaks(self, default_run):
        result, _ = default_run
        maxima = result.summary.window_maxima
        assert len(maxima) == 9
        assert all(i % 100 == 0 for i in maxima)

    def test_consensus_slower_than_constituent_contracts(self, default_run):
        result, _ = default_run
        contract = result.contract_trace.values
        for height, latency in enumerate(result.consensus_trace.values, start=1):
            block = contract[(height - 1) * 10 : height * 10]
            assert latency > sum(block) / len(block)

    def test_round_robin_leadership(self, default_run):
        result, _ = default_run
        assert sorted(result.summary.leadership_counts.values()) == [33, 33, 34]
        assert all(a != b for a, b in zip(result.leaders, result.leaders[1:]))
        assert result.leaders[:3] == ["miner-0", "miner-1", "miner-2"]

    def test_reputation_closed_form(self, default_run, default_cfg):
        result, _ = default_run
        reward = default_cfg.reputation
        expected = {
            m: 100 * reward.validator_reward + count * reward.leader_bonus
            for m, count in result.summary.leadership_counts.items()
        }
        assert result.summary.reputation == expected
        assert sorted(expected.values()) == [133, 133, 134]
        for ledger in result.ledgers.values():
            assert ledger == expected

    def test_full_chain_audit(self, default_run):
        result, workdir = default_run
        assert result.audit.passed
        assert result.audit.blocks_audited == 90
        assert result.audit.entries_audited == 900
        assert audit_full_chain(FogRepository(workdir / "fog"), result.config).passed

    def test_conservation(self, default_run):
        result, _ = default_run
        assert result.sent == result.verified == 1000
        assert result.residual_pool == 0

    def test_full_persistence_audits_every_block(self):
        result = run_experiment(ExperimentConfig(activation_threshold=0))
        assert result.audit.blocks_audited == result.committed["miner-0"] == 100

    def test_interval_independence(self, default_run):
        result, _ = default_run
        reference = result.consensus_trace.values
        for interval in (100.0, 200.0):
            other = run_experiment(ExperimentConfig(interval_ms=interval))
            assert other.consensus_trace.values == reference

    def test_byte_identical_outputs(self, default_run, default_cfg, tmp_path):
        result, _ = default_run
        first = write_results(result, tmp_path / "a")
        second = write_results(run_experiment(default_cfg), tmp_path / "b")
        for name in ("contract", "consensus", "summary"):
            assert first[name].read_bytes() == second[name].read_bytes()
