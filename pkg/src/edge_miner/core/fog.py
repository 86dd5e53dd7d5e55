"""Fog repository: permanent sink for discharged metadata and block files.

On-disk layout::

    <root>/<miner_id>/<segment_index>/metadata.json
    <root>/<miner_id>/<segment_index>/<data_hash>.json
"""

import logging
import os
import shutil
import threading
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import httpx

from ..data.models import MetadataBlock, OffloadBundle, OffloadReceipt
from ..errors import DecodeError, FogUnreachable, InconsistentBundle, NotFound
from .codec import decode_block, decode_bundle, decode_metadata_list, encode_bundle, encode_metadata_list

logger = logging.getLogger(__name__)

METADATA_FILE = "metadata.json"


def check_bundle(bundle: OffloadBundle) -> None:
    """Lockstep, linkage and file/name agreement; raises InconsistentBundle."""
    if not bundle.metadata:
        raise InconsistentBundle("empty bundle")
    if len(bundle.metadata) != len(bundle.block_files):
        raise InconsistentBundle(
            f"{len(bundle.metadata)} metadata records but {len(bundle.block_files)} block files"
        )
    for i in range(1, len(bundle.metadata)):
        if bundle.metadata[i].prev_hash != bundle.metadata[i - 1].data_hash:
            raise InconsistentBundle(f"linkage broken at record {i}")
    for record, block_file in zip(bundle.metadata, bundle.block_files):
        if record.data_hash != block_file.data_hash:
            raise InconsistentBundle(f"block file {block_file.data_hash} out of order")
        try:
            block = decode_block(block_file.encoded.encode("utf-8"))
        except DecodeError as exc:
            raise InconsistentBundle(f"block file {block_file.data_hash}: {exc}") from exc
        if block.data_hash != block_file.data_hash or block.prev_hash != record.prev_hash:
            raise InconsistentBundle(f"block file {block_file.data_hash} disagrees with metadata")


class FogRepository:
    """Directory-tree store; bundles are written whole or not at all."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: Dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()
        self._index: Dict[str, Path] = {}

    def _lock(self, miner_id: str) -> threading.Lock:
        with self._guard:
            return self._locks[miner_id]

    def segment_dir(self, miner_id: str, segment_index: int) -> Path:
        return self.root / miner_id / str(segment_index)

    def store_bundle(self, bundle: OffloadBundle) -> OffloadReceipt:
        check_bundle(bundle)
        receipt = OffloadReceipt(
            miner_id=bundle.miner_id,
            segment_index=bundle.segment_index,
            count=len(bundle.metadata),
        )
        with self._lock(bundle.miner_id):
            target = self.segment_dir(bundle.miner_id, bundle.segment_index)
            if target.exists():
                logger.info(
                    "Segment %s/%d already stored; re-acknowledging",
                    bundle.miner_id,
                    bundle.segment_index,
                )
                return receipt
            existing = self.list_segments(bundle.miner_id)
            expected = existing[-1] + 1 if existing else 0
            if bundle.segment_index != expected:
                raise InconsistentBundle(
                    f"segment {bundle.segment_index} out of order, expected {expected}"
                )
            if existing:
                previous, _ = self.load_segment(bundle.miner_id, existing[-1])
                if bundle.metadata[0].prev_hash != previous[-1].data_hash:
                    raise InconsistentBundle(
                        f"segment {bundle.segment_index} does not link to segment {existing[-1]}"
                    )
            staging = target.with_name(f".{bundle.segment_index}.tmp")
            if staging.exists():
                shutil.rmtree(staging)
            staging.mkdir(parents=True)
            try:
                (staging / METADATA_FILE).write_bytes(encode_metadata_list(bundle.metadata))
                for block_file in bundle.block_files:
                    (staging / f"{block_file.data_hash}.json").write_text(
                        block_file.encoded, encoding="utf-8"
                    )
                os.replace(staging, target)
            except OSError:
                shutil.rmtree(staging, ignore_errors=True)
                raise
            for block_file in bundle.block_files:
                self._index[block_file.data_hash] = target / f"{block_file.data_hash}.json"
        logger.info(
            "Stored segment %s/%d (%d blocks)", bundle.miner_id, bundle.segment_index, receipt.count
        )
        return receipt

    def list_miners(self) -> List[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir() and not p.name.startswith("."))

    def list_segments(self, miner_id: str) -> List[int]:
        miner_dir = self.root / miner_id
        if not miner_dir.is_dir():
            return []
        return sorted(int(p.name) for p in miner_dir.iterdir() if p.is_dir() and p.name.isdigit())

    def load_segment(self, miner_id: str, segment_index: int) -> Tuple[List[MetadataBlock], Dict[str, str]]:
        """Metadata records and encoded block files of one segment."""
        directory = self.segment_dir(miner_id, segment_index)
        if not directory.is_dir():
            raise NotFound(f"{miner_id}/{segment_index}")
        records = decode_metadata_list((directory / METADATA_FILE).read_bytes())
        files = {
            p.stem: p.read_text(encoding="utf-8")
            for p in directory.glob("*.json")
            if p.name != METADATA_FILE
        }
        return records, files

    def fetch_block(self, data_hash: str) -> str:
        path = self._index.get(data_hash)
        if path is None or not path.exists():
            self._reindex()
            path = self._index.get(data_hash)
        if path is None:
            raise NotFound(data_hash)
        return path.read_text(encoding="utf-8")

    def _reindex(self) -> None:
        for miner_id in self.list_miners():
            for segment in self.list_segments(miner_id):
                for path in self.segment_dir(miner_id, segment).glob("*.json"):
                    if path.name != METADATA_FILE:
                        self._index[path.stem] = path


class LocalFogClient:
    """In-process client; `fail_after` makes the fog refuse further segments per miner."""

    def __init__(self, repository: FogRepository, fail_after: Optional[int] = None):
        self.repository = repository
        self.fail_after = fail_after
        self.down = False
        self._accepted: Dict[str, int] = defaultdict(int)

    def store_bundle(self, bundle: OffloadBundle) -> OffloadReceipt:
        if self.down or (
            self.fail_after is not None and self._accepted[bundle.miner_id] >= self.fail_after
        ):
            raise FogUnreachable(f"fog refused segment {bundle.segment_index} of {bundle.miner_id}")
        receipt = self.repository.store_bundle(bundle)
        self._accepted[bundle.miner_id] += 1
        return receipt


class HttpFogClient:
    """Fog client over the bulk HTTP channel (POST /fog/offload)."""

    def __init__(
        self,
        base_url: str,
        timeout: float = 10.0,
        client: Optional[httpx.Client] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.client = client or httpx.Client(base_url=self.base_url, timeout=timeout)

    def store_bundle(self, bundle: OffloadBundle) -> OffloadReceipt:
        try:
            response = self.client.post(
                "/fog/offload",
                content=encode_bundle(bundle),
                headers={"Content-Type": "application/json"},
            )
        except httpx.HTTPError as exc:
            raise FogUnreachable(f"{self.base_url}: {exc}") from exc
        if response.status_code == 422:
            raise InconsistentBundle(response.json().get("error", "bundle rejected"))
        if response.status_code >= 400:
            raise FogUnreachable(f"{self.base_url}: HTTP {response.status_code}")
        return OffloadReceipt.model_validate(response.json())

    def list_segments(self, miner_id: str) -> List[int]:
        response = self._get(f"/fog/{miner_id}/segments")
        return list(response.json()["segments"])

    def fetch_block(self, data_hash: str) -> str:
        response = self._get(f"/fog/blocks/{data_hash}")
        return response.text

    def _get(self, path: str) -> httpx.Response:
        try:
            response = self.client.get(path)
        except httpx.HTTPError as exc:
            raise FogUnreachable(f"{self.base_url}: {exc}") from exc
        if response.status_code == 404:
            raise NotFound(path)
        if response.status_code >= 400:
            raise FogUnreachable(f"{self.base_url}: HTTP {response.status_code}")
        return response

    def close(self) -> None:
        self.client.close()


def bundle_from_request(body: bytes) -> OffloadBundle:
    try:
        return decode_bundle(body)
    except DecodeError as exc:
        raise InconsistentBundle(str(exc)) from exc
