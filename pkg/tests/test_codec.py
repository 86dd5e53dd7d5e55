"""Tests for the canonical JSON codecs."""

import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from edge_miner.core.chain_store import make_metadata
from edge_miner.core.codec import (
    canonical_json,
    compute_data_hash,
    decode_block,
    decode_bundle,
    decode_consensus_message,
    decode_metadata,
    decode_metadata_list,
    decode_transaction,
    encode_block,
    encode_bundle,
    encode_consensus_message,
    encode_metadata,
    encode_metadata_list,
    encode_transaction,
)
from edge_miner.data.models import (
    Block,
    BlockEntry,
    BlockFile,
    ConsensusMessage,
    MessageKind,
    MetadataBlock,
    OffloadBundle,
    SensorReading,
    Transaction,
)
from edge_miner.errors import DecodeError


def _hex(size: int) -> st.SearchStrategy[str]:
    """Lowercase hex of `size` random bytes, drawn from a seed to keep examples small."""
    return st.integers(0, 2**63 - 1).map(lambda seed: np.random.default_rng(seed).bytes(size).hex())


digests = _hex(20)
signatures = _hex(256)
ciphertexts = st.integers(1, 2).flatmap(lambda chunks: _hex(256 * chunks))
miner_ids = st.integers(0, 15).map(lambda i: f"miner-{i}")

transactions = st.builds(Transaction, hash=digests, msg=ciphertexts, signature=signatures)
entries = st.builds(
    BlockEntry,
    plain_hash=digests,
    sensor_signature=signatures,
    ciphertexts=st.dictionaries(miner_ids, ciphertexts, min_size=1, max_size=4),
)
records = st.builds(MetadataBlock, prev_hash=digests, data_hash=digests, signature=signatures)


@st.composite
def blocks(draw) -> Block:
    message = tuple(draw(st.lists(entries, min_size=1, max_size=4)))
    return Block(
        prev_hash=draw(digests),
        data_hash=compute_data_hash(message),
        message=message,
        signature=draw(signatures),
    )


@st.composite
def consensus_messages(draw) -> ConsensusMessage:
    kind = draw(st.sampled_from(list(MessageKind)))
    block = draw(blocks()) if kind is MessageKind.PRE_PREPARE else None
    return ConsensusMessage(
        kind=kind,
        height=draw(st.integers(1, 10_000)),
        attempt=draw(st.integers(0, 5)),
        leader_id=draw(miner_ids),
        sender_id=draw(miner_ids),
        data_hash=block.data_hash if block is not None else draw(digests),
        block=block,
        signature=draw(st.none() | signatures),
    )


@st.composite
def bundles(draw) -> OffloadBundle:
    chosen = draw(st.lists(blocks(), min_size=1, max_size=3))
    return OffloadBundle(
        miner_id=draw(miner_ids),
        segment_index=draw(st.integers(0, 500)),
        metadata=tuple(
            MetadataBlock(prev_hash=b.prev_hash, data_hash=b.data_hash, signature=draw(signatures))
            for b in chosen
        ),
        block_files=tuple(
            BlockFile(data_hash=b.data_hash, encoded=encode_block(b).decode()) for b in chosen
        ),
    )


roundtrip = settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])


class TestCanonicalForm:
    def test_sorted_keys_without_whitespace(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == b'{"a":[1,2],"b":1}'

    @given(
        v=st.one_of(
            st.integers(-100, 200),
            st.floats(-100, 200, allow_nan=False, allow_infinity=False),
        ),
        c=st.sampled_from(["Celsius", "Fahrenheit", "K"]),
    )
    @settings(max_examples=200)
    def test_reading_bytes_round_trip(self, v, c):
        reading = SensorReading(v=v, c=c)
        assert SensorReading.from_bytes(reading.to_bytes()) == reading

    def test_integral_float_reading_is_minimal(self):
        assert SensorReading(v=22.0).to_bytes() == b'{"c":"Celsius","v":22}'


class TestTransactionCodec:
    @given(transactions)
    @roundtrip
    def test_round_trip_any(self, txn):
        assert decode_transaction(encode_transaction(txn)) == txn

    def test_round_trip_and_size_band(self, make_txn):
        txn = make_txn(22.5)
        encoded = encode_transaction(txn)
        assert 1000 <= len(encoded) <= 1200
        assert decode_transaction(encoded) == txn

    def test_wire_keys(self, make_txn):
        assert set(json.loads(encode_transaction(make_txn()))) == {"Hash", "Msg", "Signature"}

    def test_missing_key(self, make_txn):
        obj = json.loads(encode_transaction(make_txn()))
        del obj["Signature"]
        with pytest.raises(DecodeError, match="Signature"):
            decode_transaction(canonical_json(obj))

    def test_extra_key(self, make_txn):
        obj = json.loads(encode_transaction(make_txn()))
        obj["Nonce"] = 1
        with pytest.raises(DecodeError, match="Nonce"):
            decode_transaction(canonical_json(obj))

    def test_non_hex_hash(self, make_txn):
        obj = json.loads(encode_transaction(make_txn()))
        obj["Hash"] = "g" * 40
        with pytest.raises(DecodeError):
            decode_transaction(canonical_json(obj))

    @pytest.mark.parametrize("payload", [b"", b"not json", b"[1,2]", b"\xff\xfe"])
    def test_malformed_bytes(self, payload):
        with pytest.raises(DecodeError):
            decode_transaction(payload)


class TestBlockCodec:
    @given(blocks())
    @roundtrip
    def test_round_trip_any(self, block):
        decoded = decode_block(encode_block(block))
        assert decoded == block
        assert compute_data_hash(decoded.message) == block.data_hash

    def test_round_trip_and_size_band(self, block):
        encoded = encode_block(block)
        assert 9000 <= len(encoded) <= 14000
        assert decode_block(encoded) == block

    def test_data_hash_covers_message(self, block):
        assert compute_data_hash(block.message) == block.data_hash

    def test_missing_data_hash(self, block):
        obj = json.loads(encode_block(block))
        del obj["DataHash"]
        with pytest.raises(DecodeError, match="DataHash"):
            decode_block(canonical_json(obj))

    def test_entry_with_invalid_base64(self, block):
        obj = json.loads(encode_block(block))
        obj["Msg"][0]["SensorSignature"] = "***"
        with pytest.raises(DecodeError):
            decode_block(canonical_json(obj))

    def test_msg_must_be_array(self, block):
        obj = json.loads(encode_block(block))
        obj["Msg"] = {}
        with pytest.raises(DecodeError):
            decode_block(canonical_json(obj))

    def test_leader_ciphertext_omitted(self, block):
        for entry in block.message:
            assert set(entry.ciphertexts) == {"miner-1", "miner-2"}


class TestMetadataCodec:
    @given(st.lists(records, max_size=12))
    @roundtrip
    def test_round_trip_any(self, held):
        for record in held:
            assert decode_metadata(encode_metadata(record)) == record
        assert decode_metadata_list(encode_metadata_list(held)) == held

    def test_round_trip_and_size_band(self, block, miner_keys):
        record = make_metadata(block, miner_keys["miner-0"])
        encoded = encode_metadata(record)
        assert 550 <= len(encoded) <= 750
        assert decode_metadata(encoded) == record

    def test_list_round_trip(self, block, miner_keys):
        records = [make_metadata(block, miner_keys[m]) for m in ("miner-0", "miner-1")]
        assert decode_metadata_list(encode_metadata_list(records)) == records

    def test_tampered_hash_still_decodes(self, block, miner_keys):
        obj = json.loads(encode_metadata(make_metadata(block, miner_keys["miner-0"])))
        obj["DataHash"] = "0" * 40
        assert decode_metadata(canonical_json(obj)).data_hash == "0" * 40

    def test_list_must_be_array(self):
        with pytest.raises(DecodeError):
            decode_metadata_list(b"{}")


class TestConsensusMessageCodec:
    @given(consensus_messages())
    @roundtrip
    def test_round_trip_any(self, msg):
        assert decode_consensus_message(encode_consensus_message(msg)) == msg

    def test_round_trip_with_block(self, block):
        msg = ConsensusMessage(
            kind=MessageKind.PRE_PREPARE,
            height=1,
            leader_id="miner-0",
            sender_id="miner-0",
            data_hash=block.data_hash,
            block=block,
        )
        assert decode_consensus_message(encode_consensus_message(msg)) == msg

    def test_unknown_kind(self):
        payload = canonical_json(
            {
                "kind": "view-change",
                "height": 1,
                "attempt": 0,
                "leader_id": "miner-0",
                "sender_id": "miner-1",
                "data_hash": "0" * 40,
                "signature": None,
            }
        )
        with pytest.raises(DecodeError):
            decode_consensus_message(payload)


class TestBundleCodec:
    @given(bundles())
    @roundtrip
    def test_round_trip_any(self, bundle):
        assert decode_bundle(encode_bundle(bundle)) == bundle

    def test_round_trip(self, block, miner_keys):
        bundle = OffloadBundle(
            miner_id="miner-0",
            segment_index=0,
            metadata=(make_metadata(block, miner_keys["miner-0"]),),
            block_files=(
                BlockFile(data_hash=block.data_hash, encoded=encode_block(block).decode()),
            ),
        )
        assert decode_bundle(encode_bundle(bundle)) == bundle

    def test_missing_files(self):
        payload = canonical_json({"miner_id": "miner-0", "segment_index": 0, "metadata": []})
        with pytest.raises(DecodeError):
            decode_bundle(payload)
