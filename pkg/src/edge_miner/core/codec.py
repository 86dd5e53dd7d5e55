"""Canonical JSON codecs for transactions, blocks, metadata and consensus messages.

Canonical form: keys sorted, no insignificant whitespace, lowercase hex. Block
entries carry their binary fields (ciphertexts, sensor signature) as base64 so a
10-entry block stays within the bulk channel's expected size; everything else is hex.
"""

import base64
import binascii
import json
from typing import Any, Dict, Iterable, List, Set

from pydantic import ValidationError

from ..data.models import (
    Block,
    BlockEntry,
    BlockFile,
    ConsensusMessage,
    MetadataBlock,
    OffloadBundle,
    Transaction,
)
from ..errors import DecodeError
from .crypto import digest

TRANSACTION_KEYS = {"Hash", "Msg", "Signature"}
BLOCK_KEYS = {"PrevHash", "DataHash", "Msg", "Signature"}
ENTRY_KEYS = {"PlainHash", "SensorSignature", "Ciphertexts"}
METADATA_KEYS = {"PrevHash", "DataHash", "Signature"}


def canonical_json(value: Any) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def _load_object(data: bytes, expected: Set[str], what: str) -> Dict[str, Any]:
    try:
        obj = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"{what}: not valid JSON ({exc})") from exc
    return _check_keys(obj, expected, what)


def _check_keys(obj: Any, expected: Set[str], what: str) -> Dict[str, Any]:
    if not isinstance(obj, dict):
        raise DecodeError(f"{what}: expected a JSON object")
    keys = set(obj)
    if keys != expected:
        missing = sorted(expected - keys)
        extra = sorted(keys - expected)
        raise DecodeError(f"{what}: missing keys {missing}, unexpected keys {extra}")
    return obj


def _validate(model: Any, what: str, **fields: Any) -> Any:
    try:
        return model(**fields)
    except ValidationError as exc:
        raise DecodeError(f"{what}: {exc.errors()[0]['msg']}") from exc


def _b64(hex_value: str) -> str:
    return base64.b64encode(bytes.fromhex(hex_value)).decode("ascii")


def _unb64(value: Any, what: str) -> str:
    if not isinstance(value, str):
        raise DecodeError(f"{what}: expected a base64 string")
    try:
        return base64.b64decode(value, validate=True).hex()
    except (binascii.Error, ValueError) as exc:
        raise DecodeError(f"{what}: invalid base64") from exc


# Transactions


def encode_transaction(txn: Transaction) -> bytes:
    return canonical_json({"Hash": txn.hash, "Msg": txn.msg, "Signature": txn.signature})


def decode_transaction(data: bytes) -> Transaction:
    obj = _load_object(data, TRANSACTION_KEYS, "transaction")
    return _validate(
        Transaction, "transaction", hash=obj["Hash"], msg=obj["Msg"], signature=obj["Signature"]
    )


# Blocks


def entry_to_wire(entry: BlockEntry) -> Dict[str, Any]:
    return {
        "PlainHash": entry.plain_hash,
        "SensorSignature": _b64(entry.sensor_signature),
        "Ciphertexts": {miner: _b64(ct) for miner, ct in entry.ciphertexts.items()},
    }


def entry_from_wire(obj: Any) -> BlockEntry:
    obj = _check_keys(obj, ENTRY_KEYS, "block entry")
    ciphertexts = obj["Ciphertexts"]
    if not isinstance(ciphertexts, dict):
        raise DecodeError("block entry: Ciphertexts must be an object")
    return _validate(
        BlockEntry,
        "block entry",
        plain_hash=obj["PlainHash"],
        sensor_signature=_unb64(obj["SensorSignature"], "SensorSignature"),
        ciphertexts={
            str(miner): _unb64(ct, f"Ciphertexts[{miner}]") for miner, ct in ciphertexts.items()
        },
    )


def message_bytes(entries: Iterable[BlockEntry]) -> bytes:
    """Canonical serialization of a block's message field."""
    return canonical_json([entry_to_wire(e) for e in entries])


def compute_data_hash(entries: Iterable[BlockEntry]) -> str:
    return digest(message_bytes(entries))


def block_to_wire(block: Block) -> Dict[str, Any]:
    return {
        "PrevHash": block.prev_hash,
        "DataHash": block.data_hash,
        "Msg": [entry_to_wire(e) for e in block.message],
        "Signature": block.signature,
    }


def block_from_wire(obj: Any) -> Block:
    obj = _check_keys(obj, BLOCK_KEYS, "block")
    if not isinstance(obj["Msg"], list):
        raise DecodeError("block: Msg must be an array")
    entries = tuple(entry_from_wire(e) for e in obj["Msg"])
    return _validate(
        Block,
        "block",
        prev_hash=obj["PrevHash"],
        data_hash=obj["DataHash"],
        message=entries,
        signature=obj["Signature"],
    )


def encode_block(block: Block) -> bytes:
    return canonical_json(block_to_wire(block))


def decode_block(data: bytes) -> Block:
    try:
        obj = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"block: not valid JSON ({exc})") from exc
    return block_from_wire(obj)


# Metadata


def metadata_to_wire(record: MetadataBlock) -> Dict[str, str]:
    return {
        "PrevHash": record.prev_hash,
        "DataHash": record.data_hash,
        "Signature": record.signature,
    }


def metadata_from_wire(obj: Any) -> MetadataBlock:
    obj = _check_keys(obj, METADATA_KEYS, "metadata")
    return _validate(
        MetadataBlock,
        "metadata",
        prev_hash=obj["PrevHash"],
        data_hash=obj["DataHash"],
        signature=obj["Signature"],
    )


def encode_metadata(record: MetadataBlock) -> bytes:
    return canonical_json(metadata_to_wire(record))


def decode_metadata(data: bytes) -> MetadataBlock:
    return metadata_from_wire(_load_object(data, METADATA_KEYS, "metadata"))


def encode_metadata_list(records: Iterable[MetadataBlock]) -> bytes:
    return canonical_json([metadata_to_wire(r) for r in records])


def decode_metadata_list(data: bytes) -> List[MetadataBlock]:
    try:
        obj = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"metadata list: not valid JSON ({exc})") from exc
    if not isinstance(obj, list):
        raise DecodeError("metadata list: expected a JSON array")
    return [metadata_from_wire(item) for item in obj]


# Consensus messages


def consensus_payload(msg: ConsensusMessage) -> Dict[str, Any]:
    """Message fields covered by the sender's signature."""
    payload: Dict[str, Any] = {
        "kind": msg.kind.value,
        "height": msg.height,
        "attempt": msg.attempt,
        "leader_id": msg.leader_id,
        "sender_id": msg.sender_id,
        "data_hash": msg.data_hash,
    }
    if msg.block is not None:
        payload["block"] = block_to_wire(msg.block)
    return payload


def consensus_digest(msg: ConsensusMessage) -> str:
    return digest(canonical_json(consensus_payload(msg)))


def encode_consensus_message(msg: ConsensusMessage) -> bytes:
    payload = consensus_payload(msg)
    payload["signature"] = msg.signature
    return canonical_json(payload)


def decode_consensus_message(data: bytes) -> ConsensusMessage:
    try:
        obj = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"consensus message: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise DecodeError("consensus message: expected a JSON object")
    block = obj.pop("block", None)
    fields = dict(obj)
    if block is not None:
        fields["block"] = block_from_wire(block)
    return _validate(ConsensusMessage, "consensus message", **fields)


# Offload bundles


def encode_bundle(bundle: OffloadBundle) -> bytes:
    return canonical_json(
        {
            "miner_id": bundle.miner_id,
            "segment_index": bundle.segment_index,
            "metadata": [metadata_to_wire(r) for r in bundle.metadata],
            "block_files": [
                {"data_hash": f.data_hash, "block": f.encoded} for f in bundle.block_files
            ],
        }
    )


def decode_bundle(data: bytes) -> OffloadBundle:
    obj = _load_object(
        data, {"miner_id", "segment_index", "metadata", "block_files"}, "offload bundle"
    )
    if not isinstance(obj["metadata"], list) or not isinstance(obj["block_files"], list):
        raise DecodeError("offload bundle: metadata and block_files must be arrays")
    files = []
    for item in obj["block_files"]:
        item = _check_keys(item, {"data_hash", "block"}, "block file")
        files.append(
            _validate(BlockFile, "block file", data_hash=item["data_hash"], encoded=item["block"])
        )
    return _validate(
        OffloadBundle,
        "offload bundle",
        miner_id=obj["miner_id"],
        segment_index=obj["segment_index"],
        metadata=tuple(metadata_from_wire(r) for r in obj["metadata"]),
        block_files=tuple(files),
    )
