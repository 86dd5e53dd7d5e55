"""Tests for the fog HTTP endpoints."""

import asyncio

import pytest
from aiohttp.test_utils import TestClient, TestServer

from edge_miner.core.codec import encode_bundle
from edge_miner.core.fog import FogRepository, HttpFogClient
from edge_miner.core.fog_server import create_app
from edge_miner.errors import InconsistentBundle


@pytest.fixture
def repository(tmp_path):
    return FogRepository(tmp_path / "fog")


@pytest.fixture
async def client(repository):
    async with TestClient(TestServer(create_app(repository))) as test_client:
        yield test_client


class TestFogServer:
    @pytest.mark.asyncio
    async def test_offload_then_query(self, client, chain, make_bundle):
        response = await client.post("/fog/offload", data=encode_bundle(make_bundle(chain[:3])))
        assert response.status == 200
        assert await response.json() == {"miner_id": "miner-1", "segment_index": 0, "count": 3}

        response = await client.get("/fog/miner-1/segments")
        assert await response.json() == {"miner_id": "miner-1", "segments": [0]}

        response = await client.get(f"/fog/blocks/{chain[2].data_hash}")
        assert response.status == 200
        body = await response.json()
        assert body["DataHash"] == chain[2].data_hash

    @pytest.mark.asyncio
    async def test_inconsistent_bundle(self, client, chain, make_bundle):
        response = await client.post(
            "/fog/offload", data=encode_bundle(make_bundle([chain[0], chain[2]]))
        )
        assert response.status == 422
        assert "linkage" in (await response.json())["error"]

    @pytest.mark.asyncio
    async def test_undecodable_body(self, client):
        response = await client.post("/fog/offload", data=b"not a bundle")
        assert response.status == 422

    @pytest.mark.asyncio
    async def test_unknown_block(self, client):
        response = await client.get(f"/fog/blocks/{'0' * 40}")
        assert response.status == 404

    @pytest.mark.asyncio
    async def test_unknown_miner_has_no_segments(self, client):
        response = await client.get("/fog/miner-9/segments")
        assert (await response.json())["segments"] == []


@pytest.mark.integration
class TestHttpRoundTrip:
    @pytest.mark.asyncio
    async def test_http_client_against_server(self, repository, chain, make_bundle):
        async with TestServer(create_app(repository)) as server:
            fog = HttpFogClient(f"http://{server.host}:{server.port}")
            try:
                receipt = await asyncio.to_thread(fog.store_bundle, make_bundle(chain[:10]))
                assert receipt.count == 10
                with pytest.raises(InconsistentBundle):
                    await asyncio.to_thread(
                        fog.store_bundle, make_bundle(chain[10:12], segment_index=3)
                    )
                segments = await asyncio.to_thread(fog.list_segments, "miner-1")
                assert segments == [0]
                text = await asyncio.to_thread(fog.fetch_block, chain[9].data_hash)
                assert chain[9].data_hash in text
            finally:
                fog.close()
