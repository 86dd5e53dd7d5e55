"""Consensus component.

Pending pool and block fabric, block validation, PBFT rounds (pre-prepare /
prepare / commit) among the validators subscribed to a thing group, the
provenance reputation ledger and round-robin leader cooldown.

The engine is a pure state machine: every handler returns a `Step` listing the
messages to send, blocks committed, timers to arm and the primitive work done.
The e-miner decides when those effects happen on its virtual clock.
"""

import logging
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Deque, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from Crypto.PublicKey.RSA import RsaKey
from pydantic import ValidationError

from ..data.models import (
    ZERO_DIGEST,
    Block,
    BlockEntry,
    ByzantineBehavior,
    ConsensusMessage,
    ContractSpec,
    ExperimentConfig,
    MessageKind,
    ReputationConfig,
    SensorReading,
    Transaction,
)
from ..errors import ConsensusError, DecryptFailure, HashMismatch, MissingField, MissingValidatorKey, NoEligibleLeader
from .codec import compute_data_hash, consensus_digest
from .contracts import execute
from .costs import Work
from .crypto import KeyPair, RandFunc, decrypt, digest, encrypt, sign, verify

logger = logging.getLogger(__name__)


class Phase(str, Enum):
    IDLE = "idle"
    PRE_PREPARED = "pre-prepared"
    PREPARED = "prepared"
    COMMITTED = "committed"


_PHASE_ORDER = {Phase.IDLE: 0, Phase.PRE_PREPARED: 1, Phase.PREPARED: 2, Phase.COMMITTED: 3}


class RejectReason(str, Enum):
    BAD_LEADER_SIG = "BadLeaderSig"
    DATA_HASH_MISMATCH = "DataHashMismatch"
    BAD_LINKAGE = "BadLinkage"
    BAD_BLOCK_SIZE = "BadBlockSize"
    ENTRY_DECRYPT_FAILURE = "EntryDecryptFailure"
    ENTRY_HASH_MISMATCH = "EntryHashMismatch"
    ENTRY_SENSOR_SIG_FAILURE = "EntrySensorSigFailure"
    ENTRY_CONTRACT_FAILURE = "EntryContractFailure"


@dataclass(frozen=True)
class Verdict:
    """Outcome of validate_block; entry-level reasons carry the entry index."""

    reason: Optional[RejectReason] = None
    index: Optional[int] = None
    readings: Tuple[SensorReading, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.reason is None

    def __str__(self) -> str:
        if self.reason is None:
            return "accept"
        if self.index is None:
            return f"reject({self.reason.value})"
        return f"reject({self.reason.value}[{self.index}])"


def _reject(reason: RejectReason, index: Optional[int] = None) -> Verdict:
    return Verdict(reason=reason, index=index)


# Pending pool


class PendingPool:
    """Verified transactions waiting for the next block fabric."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("pool capacity must be at least 1")
        self.capacity = capacity
        self._items: List[Transaction] = []

    def __len__(self) -> int:
        return len(self._items)

    @property
    def items(self) -> Tuple[Transaction, ...]:
        return tuple(self._items)

    def ingest_verified(self, txn: Transaction) -> Optional[Tuple[Transaction, ...]]:
        """Append txn; returns the drained batch once the pool is full."""
        self._items.append(txn)
        if len(self._items) < self.capacity:
            return None
        batch = tuple(self._items)
        self._items.clear()
        return batch


def ingest_verified(txn: Transaction, pool: PendingPool) -> Optional[Tuple[Transaction, ...]]:
    return pool.ingest_verified(txn)


# Block fabric and validation


def fabricate_block(
    batch: Sequence[Transaction],
    validators: Sequence[str],
    public_keys: Mapping[str, RsaKey],
    leader: KeyPair,
    prev: str,
    *,
    leader_copy: bool = False,
    randfunc: Optional[RandFunc] = None,
    work: Optional[Work] = None,
    plaintexts: Optional[Mapping[str, bytes]] = None,
) -> Block:
    """Re-encrypt every transaction for each validator and sign the result.

    The leader's own ciphertext is left out unless leader_copy is set (or the
    leader is the only validator). Plaintexts already recovered at verification,
    keyed by transaction hash, are reused instead of decrypting again; the
    charged work is the same either way.
    """
    work = work if work is not None else Work()
    recipients = [v for v in validators if leader_copy or v != leader.owner_id]
    if not recipients:
        recipients = [leader.owner_id]
    missing = [v for v in recipients if v != leader.owner_id and v not in public_keys]
    if missing:
        raise MissingValidatorKey(f"no public key for {', '.join(missing)}")
    keys = {v: public_keys.get(v, leader.public_key) for v in recipients}

    entries: List[BlockEntry] = []
    for txn in batch:
        known = plaintexts.get(txn.hash) if plaintexts else None
        if known is not None and digest(known) == txn.hash:
            plaintext = known
        else:
            plaintext = decrypt(leader.private_key, txn.msg)
        work.decrypts += 1
        work.digests += 1
        if digest(plaintext) != txn.hash:
            raise HashMismatch("pooled transaction no longer matches its hash", txn.hash)
        ciphertexts = {v: encrypt(keys[v], plaintext, randfunc) for v in recipients}
        work.encrypts += len(ciphertexts)
        entries.append(
            BlockEntry(plain_hash=txn.hash, sensor_signature=txn.signature, ciphertexts=ciphertexts)
        )
    data_hash = compute_data_hash(entries)
    work.digests += 1
    work.signs += 1
    return Block(
        prev_hash=prev,
        data_hash=data_hash,
        message=tuple(entries),
        signature=sign(leader.private_key, data_hash),
    )


def tamper_block(block: Block, leader: KeyPair, index: int, work: Optional[Work] = None) -> Block:
    """Flip one entry's plain hash, then re-hash and re-sign like a faulty leader would."""
    work = work if work is not None else Work()
    entries = list(block.message)
    i = index % len(entries)
    flipped = entries[i].plain_hash[:-1] + ("0" if entries[i].plain_hash[-1] != "0" else "1")
    entries[i] = entries[i].model_copy(update={"plain_hash": flipped})
    data_hash = compute_data_hash(entries)
    work.digests += 1
    work.signs += 1
    return Block(
        prev_hash=block.prev_hash,
        data_hash=data_hash,
        message=tuple(entries),
        signature=sign(leader.private_key, data_hash),
    )


def validate_block(
    block: Block,
    me: KeyPair,
    leader_pub: RsaKey,
    head: str,
    sensor_keys: Union[RsaKey, Sequence[RsaKey]],
    contracts: Iterable[ContractSpec],
    *,
    block_size: Optional[int] = None,
    work: Optional[Work] = None,
) -> Verdict:
    """Validator-side checks; contract predicates run but alarms are discarded."""
    work = work if work is not None else Work()
    keys = [sensor_keys] if isinstance(sensor_keys, RsaKey) else list(sensor_keys)
    specs = list(contracts)

    work.digests += 1
    if compute_data_hash(block.message) != block.data_hash:
        return _reject(RejectReason.DATA_HASH_MISMATCH)
    work.verifies += 1
    if not verify(leader_pub, block.data_hash, block.signature):
        return _reject(RejectReason.BAD_LEADER_SIG)
    if block.prev_hash != head:
        return _reject(RejectReason.BAD_LINKAGE)
    if block_size is not None and len(block.message) != block_size:
        return _reject(RejectReason.BAD_BLOCK_SIZE)

    readings: List[SensorReading] = []
    for i, entry in enumerate(block.message):
        ciphertext = entry.ciphertexts.get(me.owner_id)
        if ciphertext is None:
            return _reject(RejectReason.ENTRY_DECRYPT_FAILURE, i)
        work.decrypts += 1
        try:
            plaintext = decrypt(me.private_key, ciphertext)
        except DecryptFailure:
            return _reject(RejectReason.ENTRY_DECRYPT_FAILURE, i)
        work.digests += 1
        if digest(plaintext) != entry.plain_hash:
            return _reject(RejectReason.ENTRY_HASH_MISMATCH, i)
        work.verifies += 1
        if not any(verify(key, entry.plain_hash, entry.sensor_signature) for key in keys):
            return _reject(RejectReason.ENTRY_SENSOR_SIG_FAILURE, i)
        try:
            reading = SensorReading.from_bytes(plaintext)
            for spec in specs:
                work.contract_evals += 1
                execute(spec, reading, 0.0, txn_hash=entry.plain_hash)
        except (MissingField, ValueError, ValidationError):
            return _reject(RejectReason.ENTRY_CONTRACT_FAILURE, i)
        readings.append(reading)
    return Verdict(readings=tuple(readings))


# Reputation and leader rotation


class ReputationLedger:
    """Provenance scores, cooldowns and leadership history of one e-miner's view."""

    def __init__(self, participants: Iterable[str]):
        members = list(participants)
        self.score: Dict[str, int] = {m: 0 for m in members}
        self.cooldown: Dict[str, int] = {m: 0 for m in members}
        self.cooldown_until: Dict[str, float] = {m: 0.0 for m in members}
        self.leader_counts: Counter = Counter()
        self.last_leader: Optional[str] = None
        self._credited: Set[Tuple[int, str]] = set()

    def credit(self, height: int, miner_id: str, amount: int) -> bool:
        """Validator reward, at most once per (height, miner)."""
        if (height, miner_id) in self._credited or miner_id not in self.score:
            return False
        self._credited.add((height, miner_id))
        self.score[miner_id] += amount
        return True

    def reward_leader(self, leader_id: str, amount: int) -> None:
        self.score[leader_id] = self.score.get(leader_id, 0) + amount
        self.leader_counts[leader_id] += 1
        self.last_leader = leader_id

    def tick(self) -> None:
        for miner_id, rounds in self.cooldown.items():
            self.cooldown[miner_id] = max(0, rounds - 1)

    def start_cooldown(self, leader_id: str, rounds: int, until: Optional[float] = None) -> None:
        self.cooldown[leader_id] = rounds
        if until is not None:
            self.cooldown_until[leader_id] = until

    def eligible(self, miner_id: str, floor: int = 0, now: Optional[float] = None) -> bool:
        if self.score.get(miner_id, 0) < floor:
            return False
        if now is not None:
            return now >= self.cooldown_until.get(miner_id, 0.0)
        return self.cooldown.get(miner_id, 0) == 0

    def snapshot(self) -> Dict[str, int]:
        return dict(sorted(self.score.items()))


def select_leader(
    height: int,
    subscribed: Sequence[str],
    ledger: ReputationLedger,
    *,
    floor: int = 0,
    excluded: Iterable[str] = (),
    now: Optional[float] = None,
) -> str:
    """Next eligible miner in fixed rotation order after the previous leader.

    `now` switches cooldown to wall-clock mode (compared with cooldown_until).
    """
    if not subscribed:
        raise NoEligibleLeader("no subscribed validators")
    skip = set(excluded)
    n = len(subscribed)
    if ledger.last_leader in subscribed:
        start = subscribed.index(ledger.last_leader) + 1
    else:
        start = (height - 1) % n
    for offset in range(n):
        candidate = subscribed[(start + offset) % n]
        if candidate not in skip and ledger.eligible(candidate, floor, now):
            return candidate
    raise NoEligibleLeader(f"no eligible leader for height {height}")


# Rounds


@dataclass
class ConsensusRound:
    height: int
    leader_id: str
    attempt: int = 0
    phase: Phase = Phase.IDLE
    block: Optional[Block] = None
    candidates: Dict[str, Block] = field(default_factory=dict)
    prepare_votes: Dict[str, Set[str]] = field(default_factory=dict)
    commit_votes: Dict[str, Set[str]] = field(default_factory=dict)
    excluded: Set[str] = field(default_factory=set)
    locked: Optional[str] = None

    def advance(self, phase: Phase) -> None:
        if _PHASE_ORDER[phase] < _PHASE_ORDER[self.phase]:
            raise ConsensusError(f"phase cannot move back from {self.phase.value} to {phase.value}")
        logger.debug("Height %d: %s -> %s", self.height, self.phase.value, phase.value)
        self.phase = phase

    def accept(self, block: Block) -> None:
        self.candidates[block.data_hash] = block
        self.block = block
        if self.phase is Phase.IDLE:
            self.advance(Phase.PRE_PREPARED)

    def add_prepare(self, data_hash: str, miner_id: str) -> int:
        votes = self.prepare_votes.setdefault(data_hash, set())
        votes.add(miner_id)
        return len(votes)

    def add_commit(self, data_hash: str, miner_id: str) -> int:
        votes = self.commit_votes.setdefault(data_hash, set())
        votes.add(miner_id)
        return len(votes)

    def retry(self, leader_id: str) -> None:
        self.attempt += 1
        self.leader_id = leader_id


@dataclass(frozen=True)
class CommitEffects:
    height: int
    attempt: int
    block: Block
    leader_id: str
    voters: FrozenSet[str]


def on_commit(
    block: Block,
    rnd: ConsensusRound,
    ledger: ReputationLedger,
    *,
    reputation: ReputationConfig,
    cooldown_rounds: int,
    now: float = 0.0,
) -> CommitEffects:
    """Reward the commit quorum and the leader, then start the leader's cooldown."""
    rnd.advance(Phase.COMMITTED)
    voters = frozenset(rnd.commit_votes.get(block.data_hash, ()))
    for voter in sorted(voters):
        ledger.credit(rnd.height, voter, reputation.validator_reward)
    ledger.reward_leader(rnd.leader_id, reputation.leader_bonus)
    ledger.tick()
    until = now + reputation.cooldown_seconds * 1000.0 if reputation.cooldown_mode == "time" else None
    ledger.start_cooldown(rnd.leader_id, cooldown_rounds, until)
    return CommitEffects(
        height=rnd.height, attempt=rnd.attempt, block=block, leader_id=rnd.leader_id, voters=voters
    )


# Engine


@dataclass(frozen=True)
class Outgoing:
    message: ConsensusMessage
    to: Optional[Tuple[str, ...]] = None  # None: every peer


@dataclass
class Step:
    outgoing: List[Outgoing] = field(default_factory=list)
    commits: List[CommitEffects] = field(default_factory=list)
    timers: List[Tuple[int, int]] = field(default_factory=list)
    work: Work = field(default_factory=Work)
    fabricated: Optional[Tuple[int, int]] = None  # (height, attempt)
    work_before_fabrication: Optional[Work] = None


class ConsensusEngine:
    """PBFT participant for one e-miner."""

    def __init__(
        self,
        keys: KeyPair,
        participants: Sequence[str],
        public_keys: Mapping[str, RsaKey],
        sensor_keys: Sequence[RsaKey],
        contracts: Sequence[ContractSpec],
        *,
        block_size: int,
        reputation: Optional[ReputationConfig] = None,
        cooldown_rounds: Optional[int] = None,
        leader_copy: bool = False,
        behavior: Optional[ByzantineBehavior] = None,
        randfunc: Optional[RandFunc] = None,
    ):
        self.keys = keys
        self.miner_id = keys.owner_id
        self.participants = tuple(participants)
        if self.miner_id not in self.participants:
            raise ConsensusError(f"{self.miner_id} is not a subscribed validator")
        self.public_keys = dict(public_keys)
        self.sensor_keys = list(sensor_keys)
        self.contracts = list(contracts)
        self.block_size = block_size
        self.reputation = reputation or ReputationConfig()
        self.cooldown_rounds = (
            cooldown_rounds if cooldown_rounds is not None else len(self.participants) - 1
        )
        self.leader_copy = leader_copy
        self.behavior = behavior
        self.randfunc = randfunc

        self.fault_tolerance = (len(self.participants) - 1) // 3
        self.quorum = 2 * self.fault_tolerance + 1
        self.pool = PendingPool(block_size)
        self.ledger = ReputationLedger(self.participants)
        self.head = ZERO_DIGEST
        self.height = 1
        self.round: Optional[ConsensusRound] = None
        self.batches: Deque[Tuple[Transaction, ...]] = deque()
        self.chain: List[CommitEffects] = []
        self.rejections: List[Tuple[int, str, Verdict]] = []
        self.timeouts = 0
        self._committed: Dict[int, str] = {}
        self._buffer: List[ConsensusMessage] = []
        self._batches_owed = 0
        self._plaintexts: Dict[str, bytes] = {}

    @classmethod
    def from_config(
        cls,
        cfg: ExperimentConfig,
        keys: KeyPair,
        public_keys: Mapping[str, RsaKey],
        sensor_keys: Sequence[RsaKey],
        participants: Optional[Sequence[str]] = None,
        randfunc: Optional[RandFunc] = None,
    ) -> "ConsensusEngine":
        return cls(
            keys,
            participants or cfg.miners,
            public_keys,
            sensor_keys,
            cfg.contracts,
            block_size=cfg.block_size,
            reputation=cfg.reputation,
            cooldown_rounds=cfg.cooldown_rounds,
            leader_copy=cfg.leader_copy,
            behavior=cfg.byzantine.get(keys.owner_id),
            randfunc=randfunc,
        )

    @property
    def peers(self) -> Tuple[str, ...]:
        return tuple(p for p in self.participants if p != self.miner_id)

    @property
    def committed_heights(self) -> Dict[int, str]:
        return dict(self._committed)

    def _clock(self, now: float) -> Optional[float]:
        return now if self.reputation.cooldown_mode == "time" else None

    # Pool

    def ingest(self, txn: Transaction, now: float = 0.0, plaintext: Optional[bytes] = None) -> Step:
        """Add a verified transaction; a full pool may start the next round."""
        if plaintext is not None:
            self._plaintexts[txn.hash] = plaintext
        step = Step()
        batch = self.pool.ingest_verified(txn)
        if batch is None:
            return step
        if self._batches_owed:
            # the height this batch belonged to already committed
            self._batches_owed -= 1
            self._forget(batch)
            return step
        self.batches.append(batch)
        self._maybe_start(step, now)
        return step

    def _forget(self, batch: Sequence[Transaction]) -> None:
        for txn in batch:
            self._plaintexts.pop(txn.hash, None)

    def _maybe_start(self, step: Step, now: float) -> None:
        if self.round is not None or not self.batches:
            return
        leader = select_leader(
            self.height,
            self.participants,
            self.ledger,
            floor=self.reputation.reputation_floor,
            now=self._clock(now),
        )
        self.round = ConsensusRound(height=self.height, leader_id=leader)
        step.timers.append((self.height, 0))
        logger.debug("%s opened height %d, leader %s", self.miner_id, self.height, leader)
        if leader == self.miner_id:
            self._fabricate_and_propose(step, now)
        self._replay(step, now)

    def _fabricate_and_propose(self, step: Step, now: float) -> None:
        assert self.round is not None
        step.fabricated = (self.round.height, self.round.attempt)
        step.work_before_fabrication = replace(step.work)
        block = fabricate_block(
            self.batches[0],
            self.participants,
            self.public_keys,
            self.keys,
            self.head,
            leader_copy=self.leader_copy,
            randfunc=self.randfunc,
            work=step.work,
            plaintexts=self._plaintexts,
        )
        if self.behavior is not None:
            block = tamper_block(block, self.keys, self.round.height, step.work)
            logger.debug("%s tampered with its block for height %d", self.miner_id, self.round.height)
        self.propose(block, step, now)

    # Messages

    def _signed(self, kind: MessageKind, data_hash: str, step: Step, block: Optional[Block] = None) -> ConsensusMessage:
        assert self.round is not None
        unsigned = ConsensusMessage(
            kind=kind,
            height=self.round.height,
            attempt=self.round.attempt,
            leader_id=self.round.leader_id,
            sender_id=self.miner_id,
            data_hash=data_hash,
            block=block,
        )
        step.work.signs += 1
        return unsigned.model_copy(
            update={"signature": sign(self.keys.private_key, consensus_digest(unsigned))}
        )

    def _vote(self, kind: MessageKind, data_hash: str, step: Step) -> None:
        real = self._signed(kind, data_hash, step)
        if self.behavior != "equivocate" or len(self.peers) < 2:
            step.outgoing.append(Outgoing(real))
            return
        forged = self._signed(kind, digest(f"{data_hash}:{self.miner_id}".encode("ascii")), step)
        half = len(self.peers) // 2
        step.outgoing.append(Outgoing(real, to=self.peers[:half]))
        step.outgoing.append(Outgoing(forged, to=self.peers[half:]))

    def propose(self, block: Block, step: Optional[Step] = None, now: float = 0.0) -> Step:
        """Broadcast the leader's pre-prepare; it counts as the leader's prepare."""
        step = step if step is not None else Step()
        rnd = self.round
        if rnd is None or rnd.leader_id != self.miner_id:
            raise ConsensusError(f"{self.miner_id} is not the leader of the current round")
        step.outgoing.append(Outgoing(self._signed(MessageKind.PRE_PREPARE, block.data_hash, step, block)))
        rnd.accept(block)
        rnd.add_prepare(block.data_hash, self.miner_id)
        logger.debug("%s proposed %s at height %d", self.miner_id, block.data_hash, rnd.height)
        self._progress(step, now)
        return step

    def handle(self, msg: ConsensusMessage, now: float = 0.0) -> Step:
        """Authenticate a delivered message and route it by kind."""
        step = Step()
        pub = self.public_keys.get(msg.sender_id)
        if pub is None or msg.sender_id not in self.participants or msg.sender_id == self.miner_id:
            logger.debug("%s dropped message from unknown sender %s", self.miner_id, msg.sender_id)
            return step
        step.work.verifies += 1
        if msg.signature is None or not verify(pub, consensus_digest(msg), msg.signature):
            logger.warning("%s dropped %s with invalid signature from %s", self.miner_id, msg.kind.value, msg.sender_id)
            return step
        self._dispatch(msg, step, now)
        return step

    def _dispatch(self, msg: ConsensusMessage, step: Step, now: float) -> None:
        if msg.height < self.height:
            if msg.kind is MessageKind.COMMIT:
                self._late_credit(msg)
            return
        rnd = self.round
        if msg.height > self.height or rnd is None:
            self._buffer.append(msg)
            return
        if msg.kind is MessageKind.PRE_PREPARE:
            if msg.attempt > rnd.attempt:
                self._buffer.append(msg)
            else:
                self.handle_preprepare(msg, step, now)
        elif msg.kind is MessageKind.PREPARE:
            self.handle_prepare(msg, step, now)
        else:
            self.handle_commit(msg, step, now)

    def handle_preprepare(self, msg: ConsensusMessage, step: Step, now: float = 0.0) -> None:
        rnd = self.round
        assert rnd is not None
        if msg.attempt != rnd.attempt or msg.sender_id != rnd.leader_id or msg.leader_id != rnd.leader_id:
            logger.debug("%s ignored pre-prepare from non-leader %s", self.miner_id, msg.sender_id)
            return
        block = msg.block
        if block is None or block.data_hash != msg.data_hash or block.data_hash in rnd.candidates:
            return
        verdict = validate_block(
            block,
            self.keys,
            self.public_keys[rnd.leader_id],
            self.head,
            self.sensor_keys,
            self.contracts,
            block_size=self.block_size,
            work=step.work,
        )
        if not verdict.accepted:
            self.rejections.append((rnd.height, rnd.leader_id, verdict))
            logger.info(
                "%s rejected block %s from %s at height %d: %s",
                self.miner_id,
                block.data_hash,
                rnd.leader_id,
                rnd.height,
                verdict,
            )
            return
        rnd.accept(block)
        rnd.add_prepare(block.data_hash, rnd.leader_id)
        if rnd.locked is None:
            rnd.add_prepare(block.data_hash, self.miner_id)
            self._vote(MessageKind.PREPARE, block.data_hash, step)
        self._progress(step, now)

    def handle_prepare(self, msg: ConsensusMessage, step: Step, now: float = 0.0) -> None:
        assert self.round is not None
        self.round.add_prepare(msg.data_hash, msg.sender_id)
        self._progress(step, now)

    def handle_commit(self, msg: ConsensusMessage, step: Step, now: float = 0.0) -> None:
        assert self.round is not None
        self.round.add_commit(msg.data_hash, msg.sender_id)
        self._progress(step, now)

    def _progress(self, step: Step, now: float) -> None:
        rnd = self.round
        if rnd is None:
            return
        for data_hash, block in list(rnd.candidates.items()):
            if rnd.locked is None and len(rnd.prepare_votes.get(data_hash, ())) >= self.quorum:
                rnd.locked = data_hash
                rnd.advance(Phase.PREPARED)
                rnd.add_commit(data_hash, self.miner_id)
                self._vote(MessageKind.COMMIT, data_hash, step)
            if rnd.locked == data_hash and len(rnd.commit_votes.get(data_hash, ())) >= self.quorum:
                self._commit(block, step, now)
                return

    def _commit(self, block: Block, step: Step, now: float) -> None:
        rnd = self.round
        assert rnd is not None
        effects = on_commit(
            block,
            rnd,
            self.ledger,
            reputation=self.reputation,
            cooldown_rounds=self.cooldown_rounds,
            now=now,
        )
        self.head = block.data_hash
        self._committed[rnd.height] = block.data_hash
        self.chain.append(effects)
        step.commits.append(effects)
        if self.batches:
            self._forget(self.batches.popleft())
        else:
            self._batches_owed += 1
        logger.info(
            "%s committed height %d (%s) led by %s", self.miner_id, rnd.height, block.data_hash, rnd.leader_id
        )
        self.height += 1
        self.round = None
        self._maybe_start(step, now)

    def _late_credit(self, msg: ConsensusMessage) -> None:
        if self._committed.get(msg.height) == msg.data_hash:
            if self.ledger.credit(msg.height, msg.sender_id, self.reputation.validator_reward):
                logger.debug("%s credited late commit vote of %s for height %d", self.miner_id, msg.sender_id, msg.height)

    def _replay(self, step: Step, now: float) -> None:
        pending, self._buffer = self._buffer, []
        for msg in pending:
            self._dispatch(msg, step, now)

    # Liveness

    def on_timeout(self, height: int, attempt: int, now: float = 0.0) -> Step:
        """Retry the height under the next eligible leader if the round stalled."""
        step = Step()
        rnd = self.round
        if rnd is None or rnd.height != height or rnd.attempt != attempt or rnd.phase is Phase.COMMITTED:
            return step
        logger.warning(
            "%s: height %d attempt %d timed out waiting on %s", self.miner_id, height, attempt, rnd.leader_id
        )
        self.timeouts += 1
        rnd.excluded.add(rnd.leader_id)
        self.ledger.tick()
        leader = select_leader(
            height,
            self.participants,
            self.ledger,
            floor=self.reputation.reputation_floor,
            excluded=rnd.excluded,
            now=self._clock(now),
        )
        rnd.retry(leader)
        step.timers.append((height, rnd.attempt))
        if leader == self.miner_id and self.batches:
            self._fabricate_and_propose(step, now)
        self._replay(step, now)
        return step
