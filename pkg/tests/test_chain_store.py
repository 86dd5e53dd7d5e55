"""Tests for the in-chain data component."""

from typing import List

import pytest

from edge_miner.core.chain_store import (
    BlockFileStore,
    ChainStore,
    InChainStore,
    check_records,
    make_metadata,
    maybe_offload,
    on_block_committed,
    query_chain,
)
from edge_miner.core.crypto import verify
from edge_miner.core.fog import FogRepository, LocalFogClient
from edge_miner.data.models import ZERO_DIGEST, OffloadBundle, OffloadReceipt
from edge_miner.errors import FogUnreachable, InconsistentBundle, NotFound, StorageFull


class RecordingFog:
    """Fog client double that keeps every bundle and can be switched off."""

    def __init__(self) -> None:
        self.bundles: List[OffloadBundle] = []
        self.down = False

    def store_bundle(self, bundle: OffloadBundle) -> OffloadReceipt:
        if self.down:
            raise FogUnreachable("fog switched off")
        self.bundles.append(bundle)
        return OffloadReceipt(
            miner_id=bundle.miner_id, segment_index=bundle.segment_index, count=len(bundle.metadata)
        )


@pytest.fixture
def signer(miner_keys):
    return miner_keys["miner-1"]


@pytest.fixture
def fog():
    return RecordingFog()


class TestMakeMetadata:
    def test_fields(self, chain, signer):
        record = make_metadata(chain[0], signer)
        assert record.prev_hash == ZERO_DIGEST
        assert record.data_hash == chain[0].data_hash
        assert verify(signer.public_key, record.data_hash, record.signature)


class TestOnBlockCommitted:
    def test_activation_threshold(self, chain, signer):
        store, files = InChainStore(10, 10), BlockFileStore()
        for block in chain[:10]:
            assert on_block_committed(block, store, files, signer) is None
        assert store.records == [] and len(files) == 0
        assert store.active

        record = on_block_committed(chain[10], store, files, signer)
        assert record is not None and record.data_hash == chain[10].data_hash
        assert files.hashes() == [chain[10].data_hash]
        assert store.committed_count == 11

    def test_zero_activation_records_everything(self, chain, signer):
        store, files = InChainStore(10, 0), BlockFileStore()
        for block in chain[:3]:
            on_block_committed(block, store, files, signer)
        assert [r.data_hash for r in store.records] == [b.data_hash for b in chain[:3]]
        assert len(files) == len(store.records)

    def test_broken_linkage_rejected(self, chain, signer):
        store = InChainStore(10, 0)
        store.append(make_metadata(chain[0], signer))
        with pytest.raises(InconsistentBundle):
            store.append(make_metadata(chain[2], signer))


class TestMaybeOffload:
    def test_below_threshold_is_noop(self, chain, signer, fog):
        store, files = InChainStore(10, 0), BlockFileStore()
        for block in chain[:9]:
            on_block_committed(block, store, files, signer)
        assert maybe_offload(store, files, fog, "miner-1") is None
        assert fog.bundles == []

    def test_threshold_discharges(self, chain, signer, fog):
        store, files = InChainStore(10, 0), BlockFileStore()
        for block in chain[:10]:
            on_block_committed(block, store, files, signer)
        receipt = maybe_offload(store, files, fog, "miner-1")
        assert receipt == OffloadReceipt(miner_id="miner-1", segment_index=0, count=10)
        assert store.records == [] and len(files) == 0
        assert store.anchor == chain[9].data_hash
        assert store.segment_index == 1
        bundle = fog.bundles[0]
        assert [f.data_hash for f in bundle.block_files] == [r.data_hash for r in bundle.metadata]

        on_block_committed(chain[10], store, files, signer)
        assert store.records[0].prev_hash == store.anchor

    def test_forced_partial_discharge(self, chain, signer, fog):
        store, files = InChainStore(10, 0), BlockFileStore()
        for block in chain[:4]:
            on_block_committed(block, store, files, signer)
        assert maybe_offload(store, files, fog, "miner-1", force=True).count == 4
        assert maybe_offload(store, files, fog, "miner-1", force=True) is None

    def test_fog_down_retains_then_storage_full(self, chain, signer, fog):
        store, files = InChainStore(10, 0), BlockFileStore()
        for block in chain[:10]:
            on_block_committed(block, store, files, signer)
        fog.down = True
        with pytest.raises(FogUnreachable):
            maybe_offload(store, files, fog, "miner-1")
        assert len(store.records) == 10 and len(files) == 10
        assert store.offload_failures == 1
        with pytest.raises(StorageFull):
            on_block_committed(chain[10], store, files, signer)
        assert store.committed_count == 10


class TestQueryChain:
    def test_snapshot_semantics(self, chain, signer, fog):
        store, files = InChainStore(10, 0), BlockFileStore()
        for block in chain[:3]:
            on_block_committed(block, store, files, signer)
        snapshot = query_chain(store)
        on_block_committed(chain[3], store, files, signer)
        assert len(snapshot) == 3
        assert len(query_chain(store)) == 4

    def test_empty_after_offload(self, chain, signer, fog):
        store, files = InChainStore(10, 0), BlockFileStore()
        for block in chain[:10]:
            on_block_committed(block, store, files, signer)
        maybe_offload(store, files, fog, "miner-1")
        assert query_chain(store) == []


class TestBlockFileStore:
    def test_files_on_disk(self, chain, tmp_path):
        files = BlockFileStore(tmp_path / "blocks")
        files.write(chain[0])
        path = tmp_path / "blocks" / f"{chain[0].data_hash}.json"
        assert path.exists()
        assert files.read(chain[0].data_hash) == chain[0]
        files.clear()
        assert not path.exists()
        assert len(files) == 0

    def test_unknown_hash(self):
        with pytest.raises(NotFound):
            BlockFileStore().read_text("0" * 40)


class TestCheckRecords:
    def test_valid_chain(self, chain, signer):
        records = [make_metadata(b, signer) for b in chain[:5]]
        assert check_records(records, signer.public_key, ZERO_DIGEST) is None

    def test_bad_signature_named(self, chain, signer, miner_keys):
        records = [make_metadata(b, signer) for b in chain[:5]]
        records[3] = make_metadata(chain[3], miner_keys["miner-2"])
        assert check_records(records, signer.public_key) == chain[3].data_hash

    def test_broken_link_named(self, chain, signer):
        records = [make_metadata(b, signer) for b in (chain[0], chain[1], chain[3])]
        assert check_records(records, signer.public_key) == chain[3].data_hash


class TestChainStore:
    def test_commit_and_flush_to_fog(self, chain, signer, tmp_path):
        repository = FogRepository(tmp_path / "fog")
        store = ChainStore(
            "miner-1",
            signer,
            LocalFogClient(repository),
            activation_threshold=0,
            directory=tmp_path / "blocks",
            audit_each_commit=True,
        )
        for block in chain[:12]:
            store.commit(block)
        assert [r.count for r in store.receipts] == [10]
        assert len(store.query()) == 2
        store.flush()
        assert [r.count for r in store.receipts] == [10, 2]
        assert repository.list_segments("miner-1") == [0, 1]
        assert list((tmp_path / "blocks").iterdir()) == []

    def test_back_pressure_and_recovery(self, chain, signer, fog):
        store = ChainStore("miner-1", signer, fog, activation_threshold=0)
        fog.down = True
        for block in chain[:10]:
            assert store.commit(block) is None
        with pytest.raises(StorageFull):
            store.commit(chain[10])
        assert len(store.query()) == 10

        fog.down = False
        store.commit(chain[10])
        assert [r.count for r in store.receipts] == [10]
        assert [r.data_hash for r in store.query()] == [chain[10].data_hash]

    def test_check_detects_lockstep_break(self, chain, signer, fog):
        store = ChainStore("miner-1", signer, fog, activation_threshold=0)
        store.commit(chain[0])
        store.files.clear()
        with pytest.raises(InconsistentBundle):
            store.check()
