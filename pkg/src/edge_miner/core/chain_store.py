"""In-chain data component.

Keeps metadata records of the last n committed blocks in memory, one local
JSON file per recorded block, and discharges both to the fog repository once
the offload threshold is reached.
"""

import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Protocol, Union

from Crypto.PublicKey.RSA import RsaKey

from ..data.models import Block, BlockFile, MetadataBlock, OffloadBundle, OffloadReceipt
from ..errors import FogUnreachable, InconsistentBundle, NotFound, StorageFull
from .codec import decode_block, encode_block
from .crypto import KeyPair, sign, verify

logger = logging.getLogger(__name__)


class FogClient(Protocol):
    def store_bundle(self, bundle: OffloadBundle) -> OffloadReceipt:
        ...


def make_metadata(block: Block, signer: KeyPair) -> MetadataBlock:
    return MetadataBlock(
        prev_hash=block.prev_hash,
        data_hash=block.data_hash,
        signature=sign(signer.private_key, block.data_hash),
    )


def check_records(
    records: List[MetadataBlock], signer_pub: RsaKey, anchor: Optional[str] = None
) -> Optional[str]:
    """Return the data_hash of the first record breaking linkage or signature, else None."""
    prev = anchor
    for record in records:
        if prev is not None and record.prev_hash != prev:
            return record.data_hash
        if not verify(signer_pub, record.data_hash, record.signature):
            return record.data_hash
        prev = record.data_hash
    return None


class InChainStore:
    """Metadata records kept in memory between discharges."""

    def __init__(self, offload_threshold: int = 10, activation_threshold: int = 10):
        self.offload_threshold = offload_threshold
        self.activation_threshold = activation_threshold
        self.records: List[MetadataBlock] = []
        self.committed_count = 0
        self.anchor: Optional[str] = None
        self.segment_index = 0
        self.offload_failures = 0

    @property
    def active(self) -> bool:
        """True once enough blocks have committed for metadata work to run."""
        return self.committed_count >= self.activation_threshold

    @property
    def full(self) -> bool:
        return len(self.records) >= self.offload_threshold

    def append(self, record: MetadataBlock) -> None:
        if self.full:
            raise StorageFull(f"{len(self.records)} records held, offload pending")
        expected = self.records[-1].data_hash if self.records else self.anchor
        if expected is not None and record.prev_hash != expected:
            raise InconsistentBundle(
                f"record {record.data_hash} does not link to {expected}"
            )
        self.records.append(record)

    def discharge(self) -> List[MetadataBlock]:
        drained, self.records = self.records, []
        if drained:
            self.anchor = drained[-1].data_hash
        self.segment_index += 1
        return drained


class BlockFileStore:
    """One `<data_hash>.json` file per recorded block; in memory when no directory is given."""

    def __init__(self, directory: Optional[Union[str, Path]] = None):
        self.directory = Path(directory) if directory is not None else None
        self._memory: Dict[str, str] = {}
        self._order: List[str] = []
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, data_hash: str) -> Optional[Path]:
        return self.directory / f"{data_hash}.json" if self.directory is not None else None

    def write(self, block: Block) -> None:
        text = encode_block(block).decode("utf-8")
        path = self.path_for(block.data_hash)
        if path is not None:
            path.write_text(text, encoding="utf-8")
        else:
            self._memory[block.data_hash] = text
        self._order.append(block.data_hash)

    def read_text(self, data_hash: str) -> str:
        if data_hash not in self._order:
            raise NotFound(data_hash)
        path = self.path_for(data_hash)
        return path.read_text(encoding="utf-8") if path is not None else self._memory[data_hash]

    def read(self, data_hash: str) -> Block:
        return decode_block(self.read_text(data_hash).encode("utf-8"))

    def hashes(self) -> List[str]:
        return list(self._order)

    def clear(self) -> None:
        for data_hash in self._order:
            path = self.path_for(data_hash)
            if path is not None:
                path.unlink(missing_ok=True)
        self._memory.clear()
        self._order.clear()

    def __len__(self) -> int:
        return len(self._order)

    def __iter__(self) -> Iterator[str]:
        return iter(list(self._order))


def on_block_committed(
    block: Block, store: InChainStore, files: BlockFileStore, signer: KeyPair
) -> Optional[MetadataBlock]:
    """Count the block; past the activation threshold also record it and write its file."""
    if store.full and store.offload_failures:
        raise StorageFull(
            f"{len(store.records)} records held and the fog refused the last discharge"
        )
    store.committed_count += 1
    if store.committed_count <= store.activation_threshold:
        return None
    record = make_metadata(block, signer)
    store.append(record)
    files.write(block)
    return record


def maybe_offload(
    store: InChainStore,
    files: BlockFileStore,
    fog: FogClient,
    miner_id: str,
    *,
    force: bool = False,
) -> Optional[OffloadReceipt]:
    """Discharge records and block files when the threshold is reached (or forced).

    Raises FogUnreachable with everything retained when the fog refuses the bundle.
    """
    if not store.records or (not store.full and not force):
        return None
    bundle = OffloadBundle(
        miner_id=miner_id,
        segment_index=store.segment_index,
        metadata=tuple(store.records),
        block_files=tuple(
            BlockFile(data_hash=r.data_hash, encoded=files.read_text(r.data_hash))
            for r in store.records
        ),
    )
    try:
        receipt = fog.store_bundle(bundle)
    except FogUnreachable:
        store.offload_failures += 1
        logger.warning(
            "%s: fog unreachable, retaining %d records", miner_id, len(store.records)
        )
        raise
    store.offload_failures = 0
    store.discharge()
    files.clear()
    logger.info(
        "%s discharged segment %d (%d blocks)",
        miner_id,
        receipt.segment_index,
        receipt.count,
    )
    return receipt


def query_chain(store: InChainStore) -> List[MetadataBlock]:
    return list(store.records)


class ChainStore:
    """Commit path of the in-chain component for one e-miner."""

    def __init__(
        self,
        miner_id: str,
        signer: KeyPair,
        fog: FogClient,
        *,
        offload_threshold: int = 10,
        activation_threshold: int = 10,
        directory: Optional[Union[str, Path]] = None,
        audit_each_commit: bool = False,
    ):
        self.miner_id = miner_id
        self.signer = signer
        self.fog = fog
        self.store = InChainStore(offload_threshold, activation_threshold)
        self.files = BlockFileStore(directory)
        self.audit_each_commit = audit_each_commit
        self.receipts: List[OffloadReceipt] = []

    @property
    def active(self) -> bool:
        return self.store.active

    def commit(self, block: Block) -> Optional[OffloadReceipt]:
        """Record a committed block and discharge when due; StorageFull on back-pressure."""
        if self.store.full and self.store.offload_failures:
            try:
                self._offload()
            except FogUnreachable as exc:
                raise StorageFull(
                    f"{self.miner_id}: {len(self.store.records)} records held, fog down"
                ) from exc
        on_block_committed(block, self.store, self.files, self.signer)
        if self.audit_each_commit:
            self.check()
        try:
            return self._offload()
        except FogUnreachable:
            return None

    def flush(self) -> Optional[OffloadReceipt]:
        """Force a final discharge of whatever is held."""
        return self._offload(force=True)

    def _offload(self, force: bool = False) -> Optional[OffloadReceipt]:
        receipt = maybe_offload(self.store, self.files, self.fog, self.miner_id, force=force)
        if receipt is not None:
            self.receipts.append(receipt)
        return receipt

    def query(self) -> List[MetadataBlock]:
        return query_chain(self.store)

    def check(self) -> None:
        if len(self.store.records) != len(self.files):
            raise InconsistentBundle(f"{self.miner_id}: records and block files out of step")
        broken = check_records(self.store.records, self.signer.public_key, self.store.anchor)
        if broken is not None:
            raise InconsistentBundle(f"{self.miner_id}: in-chain record {broken} fails audit")
