"""Experiment harness: topology setup, the simulation loop, traces, summaries and audits."""

import json
import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from Crypto.PublicKey.RSA import RsaKey

from ..data.models import AuditReport, ExperimentConfig, LatencyTrace, TraceSummary
from ..errors import ConfigError, DecodeError, DecryptFailure, EmptyTrace, StallDetected, StorageError, TooShort
from .chain_store import FogClient
from .codec import compute_data_hash, decode_block
from .consensus import CommitEffects
from .contracts import ContractRegistry, SubscriptionTable
from .crypto import KeyPair, decrypt, digest, generate_keypair, verify
from .fog import FogRepository, LocalFogClient
from .miner import EMiner
from .sensor import Sensor, SensorWorkload, sensor_ids
from .transport import Scheduler, SimNetwork

logger = logging.getLogger(__name__)

CSV_HEADER = "index,latency"


@dataclass
class KeyEscrow:
    """Every private key of a run; the audit decrypts block entries with them."""

    miners: Dict[str, KeyPair]
    sensors: Dict[str, KeyPair]

    @classmethod
    def for_config(cls, cfg: ExperimentConfig) -> "KeyEscrow":
        return cls(
            miners={m: generate_keypair(m, cfg.seed) for m in cfg.miners},
            sensors={s: generate_keypair(s, cfg.seed) for s in sensor_ids(cfg.sensors)},
        )

    def miner_public(self) -> Dict[str, RsaKey]:
        return {m: k.public_key for m, k in self.miners.items()}

    def sensor_public(self) -> Dict[str, RsaKey]:
        return {s: k.public_key for s, k in self.sensors.items()}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    contract_trace: LatencyTrace
    consensus_trace: LatencyTrace
    summary: TraceSummary
    audit: AuditReport
    leaders: List[str] = field(default_factory=list)
    ledgers: Dict[str, Dict[str, int]] = field(default_factory=dict)
    committed: Dict[str, int] = field(default_factory=dict)
    residual_pool: int = 0
    sent: int = 0
    verified: int = 0
    alarms: int = 0
    safety_violations: List[str] = field(default_factory=list)
    rejections: Dict[str, int] = field(default_factory=dict)


class _CommitLog:
    """Commit observations of every miner, checked for conflicting data hashes."""

    def __init__(self, honest: Sequence[str]):
        self.honest = set(honest)
        self.by_height: Dict[int, Dict[str, CommitEffects]] = {}
        self.times: Dict[int, Dict[str, float]] = {}
        self.violations: List[str] = []
        self.last_progress = 0.0

    def __call__(self, miner_id: str, effects: CommitEffects, at: float) -> None:
        self.last_progress = at
        if miner_id not in self.honest:
            return
        seen = self.by_height.setdefault(effects.height, {})
        for other, prior in seen.items():
            if prior.block.data_hash != effects.block.data_hash:
                self.violations.append(
                    f"height {effects.height}: {other} committed {prior.block.data_hash}, "
                    f"{miner_id} committed {effects.block.data_hash}"
                )
        seen[miner_id] = effects
        self.times.setdefault(effects.height, {})[miner_id] = at


def _build_registry(cfg: ExperimentConfig) -> SubscriptionTable:
    registry = ContractRegistry()
    for spec in cfg.contracts:
        registry.register_contract(spec)
        registry.subscribe(cfg.contract_host, spec.contract_id)
    registry.publish_group(cfg.thing_group)
    for miner_id in cfg.miners:
        registry.subscribe(miner_id, cfg.thing_group)
    return registry.table


def _miner_registry(cfg: ExperimentConfig, table: SubscriptionTable) -> ContractRegistry:
    registry = ContractRegistry(table.copy())
    for spec in cfg.contracts:
        registry.register_contract(spec)
    return registry


def _stall_budget(cfg: ExperimentConfig) -> float:
    if cfg.stall_budget_ms is not None:
        return cfg.stall_budget_ms
    return 20 * max(cfg.interval_ms * cfg.block_size, cfg.effective_round_timeout_ms())


def run_experiment(
    cfg: ExperimentConfig,
    workdir: Optional[Union[str, Path]] = None,
    fog: Optional[FogClient] = None,
    audit_each_commit: bool = False,
) -> ExperimentResult:
    """Run one deterministic simulation and return its traces, summary and audit."""
    if workdir is None:
        with tempfile.TemporaryDirectory(prefix="edge-miner-") as tmp:
            return _run(cfg, Path(tmp), fog, audit_each_commit)
    return _run(cfg, Path(workdir), fog, audit_each_commit)


def _run(
    cfg: ExperimentConfig, workdir: Path, fog: Optional[FogClient], audit_each_commit: bool
) -> ExperimentResult:
    fog_root = workdir / "fog"
    if fog is None and fog_root.exists() and any(fog_root.iterdir()):
        raise ConfigError(f"{fog_root} already holds segments; use a fresh workdir")
    escrow = KeyEscrow.for_config(cfg)
    scheduler = Scheduler()
    network = SimNetwork(scheduler, cfg.network, seed=cfg.seed)
    repository = FogRepository(fog_root)
    fog_client = fog if fog is not None else LocalFogClient(repository, fail_after=cfg.fog_fail_after)

    table = _build_registry(cfg)
    participants = [m for m in cfg.miners if m in table.subscribers(cfg.thing_group)]
    honest = [m for m in cfg.miners if m not in cfg.byzantine]
    log = _CommitLog(honest)

    miners: Dict[str, EMiner] = {}
    for miner_id in cfg.miners:
        miners[miner_id] = EMiner(
            escrow.miners[miner_id],
            cfg,
            network,
            public_keys=escrow.miner_public(),
            sensor_keys=escrow.sensor_public(),
            registry=_miner_registry(cfg, table),
            participants=participants,
            fog=fog_client,
            block_dir=str(workdir / "blocks" / miner_id),
            audit_each_commit=audit_each_commit,
            listener=log,
        )

    host = miners[cfg.contract_host]
    sensors = [Sensor.seeded(sid, cfg.seed) for sid in escrow.sensors]
    workload = SensorWorkload(cfg.workload(), sensors, host.keys.public_key, network)
    report = workload.schedule()

    budget = _stall_budget(cfg)
    logger.info(
        "Running %d transactions across %s (interval %.0f ms)",
        cfg.txn_count,
        ", ".join(cfg.miners),
        cfg.interval_ms,
    )
    while not scheduler.idle:
        scheduler.advance()
        failed = [miners[m] for m in honest if miners[m].failure is not None]
        if failed:
            raise StallDetected(f"{failed[0].miner_id}: {failed[0].failure}")
        if report.emissions:
            log.last_progress = max(log.last_progress, report.emissions[-1].sent_at)
        if scheduler.now - log.last_progress > budget:
            raise StallDetected(
                f"no commit within {budget:.0f} ms of virtual time (t={scheduler.now:.0f})"
            )

    for miner_id in honest:
        try:
            miners[miner_id].flush()
        except StorageError as exc:
            raise StallDetected(f"final discharge of {miner_id} failed: {exc}") from exc

    contract_trace = LatencyTrace.from_values(
        "contract", [r.latency for r in host.contract_records if r.accepted]
    )
    consensus_trace = _consensus_trace(log, miners)
    summary = _summary(contract_trace, consensus_trace, cfg, host)
    audit = _audit(fog, repository, cfg, escrow)

    reference = host.engine
    result = ExperimentResult(
        config=cfg,
        contract_trace=contract_trace,
        consensus_trace=consensus_trace,
        summary=summary,
        audit=audit,
        leaders=[e.leader_id for e in reference.chain] if reference else [],
        ledgers={
            m: miners[m].engine.ledger.snapshot() for m in honest if miners[m].engine is not None
        },
        committed={m: len(miners[m].engine.chain) for m in cfg.miners if miners[m].engine is not None},
        residual_pool=len(reference.pool) if reference else 0,
        sent=len(report.emissions),
        verified=host.stats.verified,
        alarms=len(host.alarms),
        safety_violations=list(log.violations),
        rejections=dict(host.stats.rejections_by_step),
    )
    logger.info(
        "Committed %d blocks; audit %s",
        len(consensus_trace),
        "passed" if audit.passed else f"failed at {audit.failed_data_hash}",
    )
    return result


def _audit(
    fog: Optional[FogClient], repository: FogRepository, cfg: ExperimentConfig, escrow: KeyEscrow
) -> AuditReport:
    if fog is None:
        return audit_full_chain(repository, cfg, escrow)
    if isinstance(fog, LocalFogClient):
        return audit_full_chain(fog.repository, cfg, escrow)
    logger.warning("Fog is remote; skipping the full-chain audit")
    return AuditReport(passed=True, skipped=True, reason="remote fog; run `edge-miner audit` on the fog host")


def _consensus_trace(log: _CommitLog, miners: Mapping[str, EMiner]) -> LatencyTrace:
    values: List[float] = []
    for height in sorted(log.by_height):
        if height != len(values) + 1:
            break
        effects = next(iter(log.by_height[height].values()))
        start = miners[effects.leader_id].fabrication_starts.get((height, effects.attempt))
        if start is None:
            break
        values.append(max(log.times[height].values()) - start)
    return LatencyTrace.from_values("consensus", values)


def _summary(
    contract: LatencyTrace, consensus: LatencyTrace, cfg: ExperimentConfig, host: EMiner
) -> TraceSummary:
    try:
        summary = summarize(contract, cfg)
    except (TooShort, EmptyTrace):
        values = contract.values
        summary = TraceSummary(phase1_mean=float(np.mean(values)) if values else 0.0)
    engine = host.engine
    return summary.model_copy(
        update={
            "consensus_mean": float(np.mean(consensus.values)) if len(consensus) else None,
            "leadership_counts": dict(engine.ledger.leader_counts) if engine else {},
            "reputation": engine.ledger.snapshot() if engine else {},
            "alarm_count": len(host.alarms),
        }
    )


def emit_csv(trace: LatencyTrace, path: Union[str, Path]) -> Path:
    """Write "index,latency" rows in index order."""
    if not len(trace):
        raise EmptyTrace(f"trace {trace.name!r} has no points")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [CSV_HEADER] + [f"{p.index},{p.latency:.4f}" for p in trace.points]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_csv(path: Union[str, Path], name: str = "trace") -> LatencyTrace:
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    if not rows or rows[0] != CSV_HEADER:
        raise DecodeError(f"{path}: expected header {CSV_HEADER!r}")
    return LatencyTrace.from_values(name, [float(row.split(",")[1]) for row in rows[1:] if row])


def summarize(trace: LatencyTrace, cfg: ExperimentConfig) -> TraceSummary:
    """Phase means, change point, offload peaks and per-window maxima of a contract trace."""
    values = np.asarray(trace.values, dtype=float)
    bs = cfg.block_size
    if len(values) < 2 * bs:
        raise TooShort(f"need at least {2 * bs} points, got {len(values)}")

    baseline = float(values[:bs].mean())
    threshold = baseline + cfg.costs.in_chain_step_ms / 2
    change_point: Optional[int] = None
    window_means = np.convolve(values, np.ones(bs) / bs, mode="valid")
    crossings = np.flatnonzero(window_means > threshold)
    if crossings.size:
        start = int(crossings[0])
        above = np.flatnonzero(values[start : start + bs] > threshold)
        change_point = start + int(above[0]) + 1

    if change_point is None:
        return TraceSummary(phase1_mean=float(values.mean()))

    phase1 = values[: change_point - 1]
    phase2 = values[change_point - 1 :]
    phase2_mean = float(phase2.mean())
    cutoff = phase2_mean + cfg.peak_fraction * cfg.costs.offload_ms
    peaks = [
        i + 1
        for i in range(max(change_point - 1, 1), len(values) - 1)
        if values[i] > values[i - 1] and values[i] > values[i + 1] and values[i] >= cutoff
    ]

    window = cfg.offload_threshold * bs
    maxima = []
    for begin in range(cfg.activation_threshold * bs, len(values) - window + 1, window):
        maxima.append(begin + int(np.argmax(values[begin : begin + window])) + 1)

    return TraceSummary(
        phase1_mean=float(phase1.mean()) if phase1.size else baseline,
        phase2_mean=phase2_mean,
        change_point=change_point,
        peak_indices=peaks,
        peak_mean=float(np.mean([values[i - 1] for i in peaks])) if peaks else None,
        window_maxima=maxima,
    )


def _fail(report: AuditReport, data_hash: Optional[str], reason: str) -> AuditReport:
    logger.warning("Audit failed at %s: %s", data_hash, reason)
    return report.model_copy(update={"passed": False, "failed_data_hash": data_hash, "reason": reason})


def audit_full_chain(
    fog: FogRepository, cfg: ExperimentConfig, escrow: Optional[KeyEscrow] = None
) -> AuditReport:
    """Re-verify every fog segment of every miner; reports the first violation."""
    escrow = escrow or KeyEscrow.for_config(cfg)
    miner_pubs = escrow.miner_public()
    sensor_pubs = list(escrow.sensor_public().values())
    audited: set = set()
    entries = 0
    segments = 0
    report = AuditReport(passed=True)

    for miner_id in fog.list_miners():
        signer = miner_pubs.get(miner_id)
        if signer is None:
            return _fail(report, None, f"segments from unknown miner {miner_id}")
        prev: Optional[str] = None
        for segment in fog.list_segments(miner_id):
            try:
                records, files = fog.load_segment(miner_id, segment)
            except DecodeError as exc:
                return _fail(report, None, f"{miner_id}/{segment}: metadata unreadable ({exc})")
            segments += 1
            for record in records:
                dh = record.data_hash
                if prev is not None and record.prev_hash != prev:
                    return _fail(report, dh, "metadata linkage broken")
                if not verify(signer, dh, record.signature):
                    return _fail(report, dh, "metadata signature invalid")
                prev = dh
                if dh not in files:
                    return _fail(report, dh, "block file missing")
                try:
                    block = decode_block(files[dh].encode("utf-8"))
                except DecodeError as exc:
                    return _fail(report, dh, f"block file undecodable ({exc})")
                if block.data_hash != dh or compute_data_hash(block.message) != dh:
                    return _fail(report, dh, "block data hash does not recompute")
                if block.prev_hash != record.prev_hash:
                    return _fail(report, dh, "block linkage disagrees with metadata")
                if not any(verify(pub, dh, block.signature) for pub in miner_pubs.values()):
                    return _fail(report, dh, "leader signature invalid")
                for i, entry in enumerate(block.message):
                    holder = next((m for m in entry.ciphertexts if m in escrow.miners), None)
                    if holder is None:
                        return _fail(report, dh, f"entry {i} has no escrowed recipient")
                    try:
                        plaintext = decrypt(escrow.miners[holder].private_key, entry.ciphertexts[holder])
                    except DecryptFailure:
                        return _fail(report, dh, f"entry {i} does not decrypt")
                    if digest(plaintext) != entry.plain_hash:
                        return _fail(report, dh, f"entry {i} plain hash mismatch")
                    if not any(verify(pub, entry.plain_hash, entry.sensor_signature) for pub in sensor_pubs):
                        return _fail(report, dh, f"entry {i} sensor signature invalid")
                if dh not in audited:
                    audited.add(dh)
                    entries += len(block.message)

    return AuditReport(
        passed=True,
        blocks_audited=len(audited),
        entries_audited=entries,
        segments_audited=segments,
    )


def write_results(result: ExperimentResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """contract.csv, consensus.csv, summary.json, audit.json and the config used."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"contract": emit_csv(result.contract_trace, out / "contract.csv")}
    if len(result.consensus_trace):
        paths["consensus"] = emit_csv(result.consensus_trace, out / "consensus.csv")
    for name, model in (("summary", result.summary), ("audit", result.audit), ("config", result.config)):
        path = out / f"{name}.json"
        path.write_text(json.dumps(model.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths[name] = path
    return paths


def replay(out_dir: Union[str, Path], workdir: Optional[Union[str, Path]] = None) -> List[str]:
    """Re-run the config saved in out_dir; returns the names of outputs that differ."""
    out = Path(out_dir)
    cfg = ExperimentConfig.model_validate_json((out / "config.json").read_text(encoding="utf-8"))
    with tempfile.TemporaryDirectory(prefix="edge-miner-replay-") as tmp:
        fresh = write_results(run_experiment(cfg, workdir), Path(tmp))
        return [
            name
            for name, path in fresh.items()
            if not (out / path.name).exists() or (out / path.name).read_bytes() != path.read_bytes()
        ]
