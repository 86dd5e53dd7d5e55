"""Smart-contract component: transaction verification, publish/subscribe selection,
threshold-predicate contracts and cooperative termination."""

import logging
import operator
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple, Union

import yaml
from Crypto.PublicKey.RSA import RsaKey
from pydantic import ValidationError

from ..data.models import ZERO_DIGEST, Alarm, ContractSpec, SensorReading, Transaction
from ..errors import (
    BadSignature,
    ConfigError,
    DecryptFailure,
    DuplicateContract,
    HashMismatch,
    MissingField,
    NotAnExecutor,
    TransactionDecryptFailure,
    UnknownContract,
    UnknownTopic,
)
from .crypto import KeyPair, decrypt, digest, verify

logger = logging.getLogger(__name__)

_COMPARATORS: Dict[str, Callable[[float, float], bool]] = {
    ">": operator.gt,
    ">=": operator.ge,
    "<": operator.lt,
    "<=": operator.le,
    "=": operator.eq,
}


def verify_transaction(txn: Transaction, miner: KeyPair, sensor_pub: RsaKey) -> SensorReading:
    """Run the three ordered checks and return the decrypted reading.

    1. sensor signature over the Hash field, 2. decryption with the miner key,
    3. digest of the plaintext equals the Hash field.
    """
    if not verify(sensor_pub, txn.hash, txn.signature):
        logger.warning("Transaction %s rejected at step signature", txn.hash)
        raise BadSignature("sensor signature does not verify", txn.hash)
    try:
        plaintext = decrypt(miner.private_key, txn.msg)
    except DecryptFailure as exc:
        logger.warning("Transaction %s rejected at step decrypt", txn.hash)
        raise TransactionDecryptFailure(str(exc), txn.hash) from exc
    if digest(plaintext) != txn.hash:
        logger.warning("Transaction %s rejected at step hash", txn.hash)
        raise HashMismatch("digest of decrypted message differs from Hash", txn.hash)
    try:
        return SensorReading.from_bytes(plaintext)
    except (ValueError, ValidationError) as exc:
        raise HashMismatch(f"plaintext is not a reading: {exc}", txn.hash) from exc


def execute(
    spec: ContractSpec,
    reading: SensorReading,
    now: float,
    *,
    txn_hash: str = ZERO_DIGEST,
    miner_id: str = "",
) -> Optional[Alarm]:
    """Evaluate the contract predicate; an Alarm iff it holds."""
    value = reading.get(spec.field)
    if value is None:
        raise MissingField(f"reading has no field {spec.field!r} for contract {spec.contract_id}")
    if isinstance(value, str):
        raise MissingField(f"field {spec.field!r} is not numeric")
    if not _COMPARATORS[spec.comparator](value, spec.threshold):
        return None
    return Alarm(
        contract_id=spec.contract_id,
        action=spec.action,
        txn_hash=txn_hash,
        value=value,
        timestamp=now,
        miner_id=miner_id,
    )


class SubscriptionTable:
    """Set of (miner_id, topic) pairs; topics are contract ids or thing groups."""

    def __init__(self) -> None:
        self._topics: Set[str] = set()
        self._pairs: Set[Tuple[str, str]] = set()

    def publish(self, topic: str) -> None:
        self._topics.add(topic)

    def has_topic(self, topic: str) -> bool:
        return topic in self._topics

    def subscribe(self, miner_id: str, topic: str) -> None:
        if topic not in self._topics:
            raise UnknownTopic(topic)
        self._pairs.add((miner_id, topic))

    def unsubscribe(self, miner_id: str, topic: str) -> None:
        if topic not in self._topics:
            raise UnknownTopic(topic)
        self._pairs.discard((miner_id, topic))

    def subscribers(self, topic: str) -> FrozenSet[str]:
        return frozenset(m for m, t in self._pairs if t == topic)

    def topics_of(self, miner_id: str) -> FrozenSet[str]:
        return frozenset(t for m, t in self._pairs if m == miner_id)

    def copy(self) -> "SubscriptionTable":
        clone = SubscriptionTable()
        clone._topics = set(self._topics)
        clone._pairs = set(self._pairs)
        return clone

    def __len__(self) -> int:
        return len(self._pairs)


class ContractRegistry:
    """Contracts known to one e-miner plus its local publish/subscribe view."""

    def __init__(self, table: Optional[SubscriptionTable] = None):
        self.table = table if table is not None else SubscriptionTable()
        self._contracts: Dict[str, ContractSpec] = {}

    def register_contract(self, spec: ContractSpec) -> None:
        if spec.contract_id in self._contracts:
            raise DuplicateContract(spec.contract_id)
        self._contracts[spec.contract_id] = spec
        self.table.publish(spec.contract_id)
        logger.debug("Published contract %s", spec.contract_id)

    def publish_group(self, thing_group: str) -> None:
        self.table.publish(thing_group)

    def get(self, contract_id: str) -> ContractSpec:
        try:
            return self._contracts[contract_id]
        except KeyError:
            raise UnknownContract(contract_id) from None

    @property
    def contracts(self) -> List[ContractSpec]:
        return list(self._contracts.values())

    def subscribe(self, miner_id: str, topic: str) -> None:
        self.table.subscribe(miner_id, topic)

    def unsubscribe(self, miner_id: str, topic: str) -> None:
        self.table.unsubscribe(miner_id, topic)

    def executors(self, contract_id: str) -> FrozenSet[str]:
        self.get(contract_id)
        return self.table.subscribers(contract_id)

    def contracts_for(self, miner_id: str) -> List[ContractSpec]:
        """Contracts miner_id currently executes, in registration order."""
        topics = self.table.topics_of(miner_id)
        return [spec for cid, spec in self._contracts.items() if cid in topics]

    def request_terminate(
        self, miner_id: str, contract_id: str, peer_view: Optional[SubscriptionTable] = None
    ) -> bool:
        """Stop executing contract_id iff another miner in peer_view still executes it."""
        view = peer_view if peer_view is not None else self.table
        executors = view.subscribers(contract_id)
        if miner_id not in executors:
            raise NotAnExecutor(f"{miner_id} does not execute {contract_id}")
        if not executors - {miner_id}:
            logger.info("%s is the sole executor of %s; termination refused", miner_id, contract_id)
            return False
        self.table.unsubscribe(miner_id, contract_id)
        if peer_view is not None and peer_view is not self.table:
            peer_view.unsubscribe(miner_id, contract_id)
        logger.info("%s terminated execution of %s", miner_id, contract_id)
        return True


def load_contracts(path: Union[str, Path]) -> List[ContractSpec]:
    """Load contract specs from a YAML (or JSON) file with a `contracts` list."""
    with Path(path).open("r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    records: Iterable = data.get("contracts", []) if isinstance(data, dict) else data
    try:
        return [ContractSpec.model_validate(record) for record in records]
    except ValidationError as exc:
        raise ConfigError(f"invalid contract spec in {path}: {exc}") from exc
