"""E-miner: an edge device hosting the contract, consensus and in-chain components.

Each component runs as its own serialized lane on the simulated clock. The
contract host receives sensor datagrams, verifies them, executes contracts and
relays verified transactions to the other validators of the thing group.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from Crypto.PublicKey.RSA import RsaKey

from ..data.models import Alarm, ExperimentConfig, Transaction
from ..errors import ContractError, DecodeError, EdgeMinerError, StorageError, UnknownTopic, VerificationError
from .chain_store import ChainStore, FogClient
from .codec import (
    canonical_json,
    decode_consensus_message,
    decode_transaction,
    encode_consensus_message,
    encode_metadata_list,
    encode_transaction,
)
from .consensus import CommitEffects, ConsensusEngine, Step
from .contracts import ContractRegistry, execute, verify_transaction
from .costs import Lane, Work
from .crypto import KeyPair, RandFunc, SeededBytes, encrypt
from .transport import CHAIN, CONSENSUS, PUBSUB, RELAY, TRANSACTIONS, BulkMessage, DatagramRequest, SimNetwork

logger = logging.getLogger(__name__)

CommitListener = Callable[[str, CommitEffects, float], None]


@dataclass
class ContractRecord:
    """Contract-lane timing of one sensor transaction."""

    txn_hash: str
    arrived_at: float
    finished_at: float
    accepted: bool

    @property
    def latency(self) -> float:
        return self.finished_at - self.arrived_at


@dataclass
class MinerStats:
    verified: int = 0
    rejected: int = 0
    relayed: int = 0
    dropped_messages: int = 0
    contract_failures: int = 0
    rejections_by_step: Dict[str, int] = field(default_factory=dict)


def encode_relay(sensor_id: str, txn: Transaction) -> bytes:
    return canonical_json(
        {"sensor_id": sensor_id, "transaction": json.loads(encode_transaction(txn))}
    )


def decode_relay(data: bytes) -> Tuple[str, Transaction]:
    try:
        obj = json.loads(data)
        sensor_id = obj["sensor_id"]
        txn = decode_transaction(canonical_json(obj["transaction"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"relay: {exc}") from exc
    return sensor_id, txn


class EMiner:
    """One simulated e-miner node."""

    def __init__(
        self,
        keys: KeyPair,
        cfg: ExperimentConfig,
        network: SimNetwork,
        *,
        public_keys: Mapping[str, RsaKey],
        sensor_keys: Mapping[str, RsaKey],
        registry: ContractRegistry,
        participants: Sequence[str],
        fog: FogClient,
        block_dir: Optional[str] = None,
        audit_each_commit: bool = False,
        listener: Optional[CommitListener] = None,
    ):
        self.miner_id = keys.owner_id
        self.keys = keys
        self.cfg = cfg
        self.network = network
        self.scheduler = network.scheduler
        self.costs = cfg.costs
        self.public_keys = dict(public_keys)
        self.sensor_keys = dict(sensor_keys)
        self.registry = registry
        self.participants = tuple(participants)
        self.listener = listener
        self.randfunc: RandFunc = SeededBytes(f"{self.miner_id}:oaep:{cfg.seed}")

        self.contract_lane = Lane(f"{self.miner_id}/contract", self.scheduler)
        self.consensus_lane = Lane(f"{self.miner_id}/consensus", self.scheduler)
        self.in_chain_lane = Lane(f"{self.miner_id}/in-chain", self.scheduler)

        self.engine: Optional[ConsensusEngine] = None
        if self.miner_id in self.participants:
            self.engine = ConsensusEngine.from_config(
                cfg,
                keys,
                self.public_keys,
                list(self.sensor_keys.values()),
                participants=self.participants,
                randfunc=self.randfunc,
            )
        self.chain_store = ChainStore(
            self.miner_id,
            keys,
            fog,
            offload_threshold=cfg.offload_threshold,
            activation_threshold=cfg.activation_threshold,
            directory=block_dir,
            audit_each_commit=audit_each_commit,
        )

        self.contract_records: List[ContractRecord] = []
        self.alarms: List[Alarm] = []
        self.stats = MinerStats()
        self.fabrication_starts: Dict[Tuple[int, int], float] = {}
        self.commit_times: Dict[int, float] = {}
        self.failure: Optional[EdgeMinerError] = None

        network.register(self.miner_id, datagram=self.on_datagram, bulk=self.on_bulk)

    @property
    def is_contract_host(self) -> bool:
        return self.miner_id == self.cfg.contract_host

    @property
    def honest(self) -> bool:
        return self.miner_id not in self.cfg.byzantine

    # Contract lane

    def on_datagram(self, req: DatagramRequest) -> Optional[bytes]:
        if req.method == "GET" and req.path == CHAIN:
            return self.query_chain()
        if req.method != "POST" or req.path != TRANSACTIONS:
            logger.debug("%s ignored %s %s", self.miner_id, req.method, req.path)
            return None
        arrived = self.scheduler.now
        self.contract_lane.submit(lambda: self._contract_job(req, arrived))
        return None

    def query_chain(self) -> bytes:
        """In-chain metadata, oldest first, as served on GET /chain."""
        return encode_metadata_list(self.chain_store.query())

    def _reject(self, exc: VerificationError) -> None:
        self.stats.rejected += 1
        self.stats.rejections_by_step[exc.step] = self.stats.rejections_by_step.get(exc.step, 0) + 1

    def _contract_job(self, req: DatagramRequest, arrived: float) -> Tuple[float, Optional[Callable[[], None]]]:
        now = self.scheduler.now
        work = Work(verifies=1, decrypts=1, digests=1)
        try:
            txn = decode_transaction(req.payload)
            sensor_pub = self.sensor_keys.get(req.source)
            if sensor_pub is None:
                raise VerificationError(f"unknown sensor {req.source}")
            reading = verify_transaction(txn, self.keys, sensor_pub)
        except DecodeError as exc:
            logger.warning("%s dropped undecodable transaction: %s", self.miner_id, exc)
            self.stats.rejected += 1
            return 0.0, None
        except VerificationError as exc:
            self._reject(exc)
            finished = now + work.cost_ms(self.costs)
            self.contract_records.append(ContractRecord(exc.txn_hash or "", arrived, finished, False))
            return work.cost_ms(self.costs), None

        for spec in self.registry.contracts_for(self.miner_id):
            work.contract_evals += 1
            try:
                alarm = execute(spec, reading, now, txn_hash=txn.hash, miner_id=self.miner_id)
            except ContractError as exc:
                logger.warning("%s contract %s failed on %s: %s", self.miner_id, spec.contract_id, txn.hash, exc)
                self.stats.contract_failures += 1
                continue
            if alarm is not None:
                self.alarms.append(alarm)
                logger.debug("%s alarm %s for %s", self.miner_id, alarm.action, txn.hash)

        self.stats.verified += 1
        cost = work.cost_ms(self.costs) + self._upkeep_ms()
        if self.stats.verified % self.cfg.block_size == 0:
            cost += self.costs.fabric_trigger_ms
        self.contract_records.append(ContractRecord(txn.hash, arrived, now + cost, True))
        plaintext = reading.to_bytes()

        def done() -> None:
            self._hand_to_consensus(txn, plaintext)
            self.contract_lane.submit(lambda: self._relay_job(req.source, txn, plaintext))

        return cost, done

    def _upkeep_ms(self) -> float:
        """In-chain upkeep charged to every transaction while the component is active."""
        if not self.chain_store.active:
            return 0.0
        held = len(self.chain_store.store.records)
        return self.costs.in_chain_step_ms + held * self.costs.record_pressure_ms

    def _relay_job(self, sensor_id: str, txn: Transaction, plaintext: bytes) -> Tuple[float, Optional[Callable[[], None]]]:
        peers = [p for p in self.participants if p != self.miner_id]
        if not peers:
            return 0.0, None
        payloads = {
            peer: encode_relay(
                sensor_id,
                txn.model_copy(update={"msg": encrypt(self.public_keys[peer], plaintext, self.randfunc)}),
            )
            for peer in peers
        }
        cost = Work(encrypts=len(peers)).cost_ms(self.costs)

        def done() -> None:
            for peer, payload in payloads.items():
                self.network.send_bulk(
                    BulkMessage(source=self.miner_id, destination=peer, path=RELAY, body=payload, size=len(payload))
                )
            self.stats.relayed += 1

        return cost, done

    def _on_relay(self, payload: bytes, source: str) -> None:
        def job() -> Tuple[float, Optional[Callable[[], None]]]:
            work = Work(verifies=1, decrypts=1, digests=1)
            try:
                sensor_id, txn = decode_relay(payload)
                sensor_pub = self.sensor_keys.get(sensor_id)
                if sensor_pub is None:
                    raise VerificationError(f"unknown sensor {sensor_id}")
                reading = verify_transaction(txn, self.keys, sensor_pub)
            except DecodeError as exc:
                logger.warning("%s dropped relay from %s: %s", self.miner_id, source, exc)
                return 0.0, None
            except VerificationError as exc:
                self._reject(exc)
                return work.cost_ms(self.costs), None
            self.stats.verified += 1
            return work.cost_ms(self.costs), lambda: self._hand_to_consensus(txn, reading.to_bytes())

        self.contract_lane.submit(job)

    # Consensus lane

    def _hand_to_consensus(self, txn: Transaction, plaintext: Optional[bytes] = None) -> None:
        if self.engine is None:
            return
        engine = self.engine
        self.consensus_lane.submit(lambda: self._consensus_job(lambda now: engine.ingest(txn, now, plaintext)))

    def _consensus_job(self, action: Callable[[float], Step]) -> Tuple[float, Optional[Callable[[], None]]]:
        start = self.scheduler.now
        try:
            step = action(start)
        except EdgeMinerError as exc:
            logger.error("%s consensus halted: %s", self.miner_id, exc)
            self.failure = exc
            return 0.0, None
        if step.fabricated is not None and step.work_before_fabrication is not None:
            offset = step.work_before_fabrication.cost_ms(self.costs)
            self.fabrication_starts[step.fabricated] = start + offset
        return step.work.cost_ms(self.costs), lambda: self._apply(step)

    def _apply(self, step: Step) -> None:
        now = self.scheduler.now
        for out in step.outgoing:
            payload = encode_consensus_message(out.message)
            destinations = out.to if out.to is not None else self.participants
            self.network.broadcast(self.miner_id, destinations, CONSENSUS, payload, size=len(payload))
        for effects in step.commits:
            self.commit_times[effects.height] = now
            if self.listener is not None:
                self.listener(self.miner_id, effects, now)
            self.in_chain_lane.submit(lambda e=effects: self._in_chain_job(e))
        timeout = self.cfg.effective_round_timeout_ms()
        for height, attempt in step.timers:
            self.scheduler.delay(timeout, self._on_timer, height, attempt, label=f"timeout:{self.miner_id}")

    def _on_timer(self, height: int, attempt: int) -> None:
        if self.engine is None:
            return
        engine = self.engine
        self.consensus_lane.submit(lambda: self._consensus_job(lambda now: engine.on_timeout(height, attempt, now)))

    def _on_consensus(self, payload: bytes, source: str) -> None:
        if self.engine is None:
            return
        try:
            msg = decode_consensus_message(payload)
        except DecodeError as exc:
            self.stats.dropped_messages += 1
            logger.warning("%s dropped malformed consensus message from %s: %s", self.miner_id, source, exc)
            return
        engine = self.engine
        self.consensus_lane.submit(lambda: self._consensus_job(lambda now: engine.handle(msg, now)))

    # In-chain lane

    def _in_chain_job(self, effects: CommitEffects) -> Tuple[float, Optional[Callable[[], None]]]:
        store = self.chain_store
        try:
            receipt = store.commit(effects.block)
        except StorageError as exc:
            logger.error("%s: %s", self.miner_id, exc)
            self.failure = exc
            return 0.0, None
        cost = 0.0
        if store.store.committed_count > store.store.activation_threshold:
            cost += self.costs.metadata_write_ms + self.costs.file_write_ms
        if receipt is not None:
            cost += self.costs.offload_ms
        return cost, None

    def flush(self) -> None:
        self.chain_store.flush()

    # Publish/subscribe gossip

    def request_terminate(self, contract_id: str) -> bool:
        """Stop executing a contract if a peer still runs it; peers learn via /pubsub."""
        if not self.registry.request_terminate(self.miner_id, contract_id):
            return False
        record = canonical_json({"miner_id": self.miner_id, "topic": contract_id, "action": "unsubscribe"})
        self.network.broadcast(self.miner_id, self.cfg.miners, PUBSUB, record, size=len(record))
        return True

    def _on_pubsub(self, payload: bytes, source: str) -> None:
        try:
            record = json.loads(payload)
            miner_id, topic, action = record["miner_id"], record["topic"], record["action"]
        except (KeyError, TypeError, ValueError):
            logger.warning("%s dropped malformed pubsub record from %s", self.miner_id, source)
            return
        try:
            if action == "unsubscribe":
                self.registry.unsubscribe(miner_id, topic)
            elif action == "subscribe":
                self.registry.subscribe(miner_id, topic)
        except UnknownTopic:
            logger.warning("%s: pubsub record for unknown topic %s", self.miner_id, topic)

    # Bulk channel

    def on_bulk(self, msg: BulkMessage) -> None:
        payload = msg.body if isinstance(msg.body, bytes) else bytes(msg.body)
        if msg.path == CONSENSUS:
            self._on_consensus(payload, msg.source)
        elif msg.path == RELAY:
            self._on_relay(payload, msg.source)
        elif msg.path == PUBSUB:
            self._on_pubsub(payload, msg.source)
        else:
            logger.debug("%s ignored bulk message on %s", self.miner_id, msg.path)
