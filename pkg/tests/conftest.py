"""Shared fixtures: deterministic keys are generated once per session."""

import random
from typing import Callable, Dict, List, Optional

import pytest
from Crypto.PublicKey.RSA import RsaKey

from edge_miner.core.chain_store import make_metadata
from edge_miner.core.codec import encode_block
from edge_miner.core.consensus import fabricate_block
from edge_miner.core.crypto import KeyPair, SeededBytes, generate_keypair
from edge_miner.core.sensor import build_transaction
from edge_miner.data.models import (
    ZERO_DIGEST,
    Block,
    BlockFile,
    OffloadBundle,
    SensorReading,
    Transaction,
)

SEED = 7
MINERS = ["miner-0", "miner-1", "miner-2", "miner-3"]


@pytest.fixture(scope="session")
def miner_keys() -> Dict[str, KeyPair]:
    return {m: generate_keypair(m, SEED) for m in MINERS}


@pytest.fixture(scope="session")
def sensor_key() -> KeyPair:
    return generate_keypair("sensor-0", SEED)


@pytest.fixture(scope="session")
def other_sensor_key() -> KeyPair:
    return generate_keypair("sensor-1", SEED)


@pytest.fixture
def make_txn(miner_keys, sensor_key) -> Callable[..., Transaction]:
    """Build a transaction for a recipient miner (miner-0 by default)."""
    randfunc = SeededBytes("tests:oaep")

    def factory(
        value: float = 22.5, recipient: str = "miner-0", sensor: Optional[KeyPair] = None
    ) -> Transaction:
        return build_transaction(
            SensorReading(v=value),
            sensor or sensor_key,
            miner_keys[recipient].public_key,
            randfunc,
        )

    return factory


@pytest.fixture
def batch(make_txn):
    """Ten transactions addressed to miner-0, all below the overheat threshold."""
    rng = random.Random(3)
    return [make_txn(round(rng.uniform(15, 29), 1)) for _ in range(10)]


@pytest.fixture(scope="session")
def public_keys(miner_keys) -> Dict[str, RsaKey]:
    return {m: k.public_key for m, k in miner_keys.items()}


@pytest.fixture
def block(batch, miner_keys, public_keys) -> Block:
    """Genesis-linked block led by miner-0 for validators miner-0..2."""
    return fabricate_block(
        batch,
        MINERS[:3],
        public_keys,
        miner_keys["miner-0"],
        ZERO_DIGEST,
        randfunc=SeededBytes("tests:fabric"),
    )


@pytest.fixture(scope="session")
def chain(miner_keys, public_keys, sensor_key) -> List[Block]:
    """Twelve linked single-entry blocks led by miner-0."""
    blocks: List[Block] = []
    prev = ZERO_DIGEST
    for i in range(12):
        txn = build_transaction(
            SensorReading(v=20 + i / 10),
            sensor_key,
            public_keys["miner-0"],
            SeededBytes(f"chain:{i}"),
        )
        block = fabricate_block(
            [txn], MINERS[:3], public_keys, miner_keys["miner-0"], prev
        )
        blocks.append(block)
        prev = block.data_hash
    return blocks


@pytest.fixture
def make_bundle(miner_keys) -> Callable[..., OffloadBundle]:
    """Bundle a run of linked blocks as one fog segment signed by `miner_id`."""

    def factory(
        blocks: List[Block], miner_id: str = "miner-1", segment_index: int = 0
    ) -> OffloadBundle:
        return OffloadBundle(
            miner_id=miner_id,
            segment_index=segment_index,
            metadata=tuple(make_metadata(b, miner_keys[miner_id]) for b in blocks),
            block_files=tuple(
                BlockFile(data_hash=b.data_hash, encoded=encode_block(b).decode())
                for b in blocks
            ),
        )

    return factory
