"""Domain models for transactions, blocks, metadata and experiments using Pydantic."""

import json
from enum import Enum
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ZERO_DIGEST = "0" * 40

Digest = Annotated[str, Field(pattern=r"^[0-9a-f]{40}$")]
SignatureHex = Annotated[str, Field(pattern=r"^[0-9a-f]{512}$")]
CiphertextHex = Annotated[str, Field(pattern=r"^(?:[0-9a-f]{512})+$")]

Comparator = Literal[">", ">=", "<", "<=", "="]
_COMPARATOR_ALIASES = {"≥": ">=", "≤": "<=", "==": "="}


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# Wire records


class Transaction(_Frozen):
    """Sensor-signed, encrypted reading (Hash / Msg / Signature)."""

    hash: Digest = Field(..., description="Digest of the plaintext reading")
    msg: CiphertextHex = Field(..., description="Reading encrypted for the receiving miner")
    signature: SignatureHex = Field(..., description="Sensor signature over hash")


class BlockEntry(_Frozen):
    """One transaction inside a block, re-encrypted for every validator."""

    plain_hash: Digest
    sensor_signature: SignatureHex
    ciphertexts: Dict[str, CiphertextHex] = Field(..., min_length=1)


class Block(_Frozen):
    """Leader-built container of per-recipient encrypted transactions."""

    prev_hash: Digest
    data_hash: Digest
    message: Tuple[BlockEntry, ...]
    signature: SignatureHex


class MetadataBlock(_Frozen):
    """In-chain record kept in memory for the last n committed blocks."""

    prev_hash: Digest
    data_hash: Digest
    signature: SignatureHex


class BlockFile(_Frozen):
    data_hash: Digest
    encoded: str = Field(..., description="encode_block output as text")


class OffloadBundle(_Frozen):
    """Metadata records and block files discharged to the fog in one go."""

    miner_id: str
    segment_index: int = Field(..., ge=0)
    metadata: Tuple[MetadataBlock, ...]
    block_files: Tuple[BlockFile, ...]


class OffloadReceipt(_Frozen):
    miner_id: str
    segment_index: int
    count: int


# Sensor readings and contracts


# Reading fields a threshold contract can compare against
NUMERIC_READING_FIELDS = ("v",)


class SensorReading(_Frozen):
    """Temperature value (v) and measurement symbol (c)."""

    v: Union[int, float]
    c: str = Field(default="Celsius", min_length=1)

    @field_validator("v")
    @classmethod
    def minimal_number(cls, v: Union[int, float]) -> Union[int, float]:
        if isinstance(v, float) and v.is_integer():
            return int(v)
        return v

    def to_bytes(self) -> bytes:
        return json.dumps(
            {"c": self.c, "v": self.v}, sort_keys=True, separators=(",", ":")
        ).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "SensorReading":
        return cls.model_validate(json.loads(data.decode("utf-8")))

    def get(self, name: str) -> Optional[Union[int, float, str]]:
        return getattr(self, name, None) if name in ("v", "c") else None


class ContractSpec(_Frozen):
    """Declarative threshold predicate over one reading field."""

    contract_id: str = Field(..., min_length=1)
    field: str = Field(..., min_length=1, description="Reading field name, e.g. 'v'")
    comparator: Comparator
    threshold: float
    action: str = Field(..., min_length=1, description="Alarm label")

    @field_validator("comparator", mode="before")
    @classmethod
    def normalize_comparator(cls, value: str) -> str:
        return _COMPARATOR_ALIASES.get(value, value)


class Alarm(_Frozen):
    contract_id: str
    action: str
    txn_hash: Digest
    value: Union[int, float]
    timestamp: float = Field(..., description="Virtual time in ms")
    miner_id: str


# Consensus wire messages


class MessageKind(str, Enum):
    PRE_PREPARE = "pre-prepare"
    PREPARE = "prepare"
    COMMIT = "commit"


class ConsensusMessage(_Frozen):
    kind: MessageKind
    height: int = Field(..., ge=1)
    attempt: int = Field(default=0, ge=0)
    leader_id: str
    sender_id: str
    data_hash: Digest
    block: Optional[Block] = None
    signature: Optional[SignatureHex] = None


# Experiment configuration


class ServiceCosts(BaseModel):
    """Virtual per-operation durations in milliseconds."""

    model_config = ConfigDict(extra="forbid")

    verify_ms: float = Field(0.8, ge=0)
    decrypt_ms: float = Field(1.5, ge=0)
    digest_ms: float = Field(0.1, ge=0)
    contract_eval_ms: float = Field(0.4, ge=0)
    encrypt_ms: float = Field(0.4, ge=0)
    sign_ms: float = Field(1.6, ge=0)
    metadata_upkeep_ms: float = Field(6.0, ge=0, description="Per transaction while in-chain is active")
    file_upkeep_ms: float = Field(4.0, ge=0, description="Per transaction while local files are kept")
    record_pressure_ms: float = Field(0.5, ge=0, description="Per transaction per in-memory record")
    fabric_trigger_ms: float = Field(2.0, ge=0, description="Charged to the pool-filling transaction")
    metadata_write_ms: float = Field(1.0, ge=0)
    file_write_ms: float = Field(2.0, ge=0)
    offload_ms: float = Field(15.0, ge=0)

    @property
    def in_chain_step_ms(self) -> float:
        return self.metadata_upkeep_ms + self.file_upkeep_ms

    def fabrication_ms(self, block_size: int, recipients: int) -> float:
        per_entry = self.decrypt_ms + self.digest_ms + recipients * self.encrypt_ms
        return block_size * per_entry + self.digest_ms + self.sign_ms

    def validation_ms(self, block_size: int, contracts: int) -> float:
        per_entry = (
            self.decrypt_ms + self.digest_ms + self.verify_ms + contracts * self.contract_eval_ms
        )
        return self.verify_ms + self.digest_ms + block_size * per_entry


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    latency_ms: float = Field(1.0, gt=0, description="Per-link latency")
    jitter_ms: float = Field(0.0, ge=0, description="Uniform extra latency in [0, jitter]")
    drop_probability: float = Field(0.0, ge=0, le=1)
    datagram_cap: int = Field(1152, ge=1, description="Max CoAP-style payload in bytes")


class ReputationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    validator_reward: int = Field(1, ge=0)
    leader_bonus: int = Field(1, ge=0)
    reputation_floor: int = Field(0, ge=0)
    cooldown_rounds: Optional[int] = Field(None, ge=0, description="None means n - 1")
    cooldown_mode: Literal["rounds", "time"] = "rounds"
    cooldown_seconds: float = Field(0.0, ge=0)


ByzantineBehavior = Literal["tamper", "equivocate"]


def _default_contracts() -> List[ContractSpec]:
    return [
        ContractSpec(
            contract_id="overheat", field="v", comparator=">", threshold=30, action="overheat"
        )
    ]


class WorkloadConfig(BaseModel):
    """Sensor emission schedule."""

    model_config = ConfigDict(extra="forbid")

    count: int = Field(1000, ge=1)
    interval_ms: float = Field(50.0, gt=0)
    seed: int = 1
    target: str = "miner-0"
    value_min: float = 15.0
    value_max: float = 40.0
    sensors: int = Field(1, ge=1)
    thing_group: str = "temperature"

    @model_validator(mode="after")
    def check_range(self) -> "WorkloadConfig":
        if self.value_min > self.value_max:
            raise ValueError("value_min must not exceed value_max")
        return self

    @property
    def value_range(self) -> Tuple[float, float]:
        return (self.value_min, self.value_max)


class ExperimentConfig(BaseModel):
    """Topology, thresholds, workload and cost model of one experiment."""

    model_config = ConfigDict(extra="forbid")

    miners: List[str] = Field(default_factory=lambda: ["miner-0", "miner-1", "miner-2"])
    contract_host: Optional[str] = Field(None, description="Defaults to the first miner")
    block_size: int = Field(10, ge=1)
    activation_threshold: int = Field(10, ge=0, description="Committed blocks before in-chain work")
    offload_threshold: int = Field(10, ge=1)
    interval_ms: float = Field(50.0, gt=0)
    txn_count: int = Field(1000, ge=1)
    seed: int = 7
    sensors: int = Field(1, ge=1)
    value_min: float = 15.0
    value_max: float = 40.0
    thing_group: str = "temperature"
    leader_copy: bool = Field(False, description="Keep the leader's own ciphertext per entry")
    costs: ServiceCosts = Field(default_factory=ServiceCosts)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    reputation: ReputationConfig = Field(default_factory=ReputationConfig)
    contracts: List[ContractSpec] = Field(default_factory=_default_contracts)
    byzantine: Dict[str, ByzantineBehavior] = Field(default_factory=dict)
    round_timeout_ms: Optional[float] = Field(None, gt=0)
    stall_budget_ms: Optional[float] = Field(None, gt=0)
    fog_fail_after: Optional[int] = Field(
        None, ge=0, description="Fog refuses bundles after this many segments per miner"
    )
    peak_fraction: float = Field(0.1, ge=0)

    @model_validator(mode="after")
    def check_topology(self) -> "ExperimentConfig":
        if not self.miners:
            raise ValueError("at least one miner is required")
        if len(set(self.miners)) != len(self.miners):
            raise ValueError("miner ids must be unique")
        if self.contract_host is None:
            self.contract_host = self.miners[0]
        if self.contract_host not in self.miners:
            raise ValueError(f"contract host {self.contract_host!r} is not a miner")
        for miner_id in self.byzantine:
            if miner_id not in self.miners:
                raise ValueError(f"byzantine miner {miner_id!r} is not a miner")
        if self.contract_host in self.byzantine:
            raise ValueError("the contract host must be honest")
        if self.txn_count < self.block_size:
            raise ValueError("txn_count must cover at least one block")
        if self.value_min > self.value_max:
            raise ValueError("value_min must not exceed value_max")
        ids = [spec.contract_id for spec in self.contracts]
        if len(set(ids)) != len(ids):
            raise ValueError("contract ids must be unique")
        for spec in self.contracts:
            if spec.field not in NUMERIC_READING_FIELDS:
                raise ValueError(
                    f"contract {spec.contract_id!r} cannot compare reading field {spec.field!r}"
                )
        return self

    @property
    def fault_tolerance(self) -> int:
        return (len(self.miners) - 1) // 3

    @property
    def cooldown_rounds(self) -> int:
        if self.reputation.cooldown_rounds is not None:
            return self.reputation.cooldown_rounds
        return len(self.miners) - 1

    def recipients_per_entry(self) -> int:
        return len(self.miners) if self.leader_copy else len(self.miners) - 1

    def effective_round_timeout_ms(self) -> float:
        if self.round_timeout_ms is not None:
            return self.round_timeout_ms
        n = len(self.miners)
        estimate = (
            self.costs.fabrication_ms(self.block_size, self.recipients_per_entry())
            + self.costs.validation_ms(self.block_size, len(self.contracts))
            + 4 * n * (self.costs.verify_ms + self.costs.sign_ms)
        )
        return estimate + 10 * (self.network.latency_ms + self.network.jitter_ms)

    def workload(self) -> WorkloadConfig:
        return WorkloadConfig(
            count=self.txn_count,
            interval_ms=self.interval_ms,
            seed=self.seed,
            target=self.contract_host,
            value_min=self.value_min,
            value_max=self.value_max,
            sensors=self.sensors,
            thing_group=self.thing_group,
        )


# Results


class LatencyPoint(_Frozen):
    index: int = Field(..., ge=1)
    latency: float = Field(..., ge=0)


class LatencyTrace(BaseModel):
    """Contract (per transaction) or consensus (per block) latency series in ms."""

    name: str
    points: List[LatencyPoint] = Field(default_factory=list)

    @model_validator(mode="after")
    def contiguous(self) -> "LatencyTrace":
        for expected, point in enumerate(self.points, start=1):
            if point.index != expected:
                raise ValueError(f"trace indices must be contiguous from 1 (got {point.index})")
        return self

    @classmethod
    def from_values(cls, name: str, values: List[float]) -> "LatencyTrace":
        return cls(
            name=name,
            points=[LatencyPoint(index=i, latency=v) for i, v in enumerate(values, start=1)],
        )

    @property
    def values(self) -> List[float]:
        return [p.latency for p in self.points]

    def __len__(self) -> int:
        return len(self.points)


class TraceSummary(BaseModel):
    phase1_mean: float
    phase2_mean: Optional[float] = None
    change_point: Optional[int] = None
    peak_indices: List[int] = Field(default_factory=list)
    peak_mean: Optional[float] = None
    window_maxima: List[int] = Field(default_factory=list)
    consensus_mean: Optional[float] = None
    leadership_counts: Dict[str, int] = Field(default_factory=dict)
    reputation: Dict[str, int] = Field(default_factory=dict)
    alarm_count: int = 0


class AuditReport(BaseModel):
    passed: bool
    blocks_audited: int = 0
    entries_audited: int = 0
    segments_audited: int = 0
    failed_data_hash: Optional[str] = None
    reason: Optional[str] = None
    skipped: bool = Field(False, description="Fog is remote; audit it on the fog host")
