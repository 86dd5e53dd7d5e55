"""aiohttp application exposing a FogRepository over the bulk channel."""

import asyncio
import logging

from aiohttp import web

from ..errors import InconsistentBundle, NotFound
from .fog import FogRepository, bundle_from_request

logger = logging.getLogger(__name__)

REPOSITORY_KEY = web.AppKey("repository", FogRepository)


async def offload(request: web.Request) -> web.Response:
    repository = request.app[REPOSITORY_KEY]
    body = await request.read()
    try:
        bundle = bundle_from_request(body)
        # disk writes stay off the event loop
        receipt = await asyncio.to_thread(repository.store_bundle, bundle)
    except InconsistentBundle as exc:
        logger.warning("Rejected bundle: %s", exc)
        return web.json_response({"error": str(exc)}, status=422)
    return web.json_response(receipt.model_dump())


async def segments(request: web.Request) -> web.Response:
    repository = request.app[REPOSITORY_KEY]
    miner_id = request.match_info["miner_id"]
    return web.json_response({"miner_id": miner_id, "segments": repository.list_segments(miner_id)})


async def block(request: web.Request) -> web.Response:
    repository = request.app[REPOSITORY_KEY]
    data_hash = request.match_info["data_hash"]
    try:
        text = repository.fetch_block(data_hash)
    except NotFound:
        return web.json_response({"error": f"unknown block {data_hash}"}, status=404)
    return web.Response(text=text, content_type="application/json")


def create_app(repository: FogRepository) -> web.Application:
    app = web.Application()
    app[REPOSITORY_KEY] = repository
    app.router.add_post("/fog/offload", offload)
    app.router.add_get("/fog/blocks/{data_hash}", block)
    app.router.add_get("/fog/{miner_id}/segments", segments)
    return app


def serve(repository: FogRepository, host: str = "127.0.0.1", port: int = 8470) -> None:
    logger.info("Serving fog repository %s on %s:%d", repository.root, host, port)
    web.run_app(create_app(repository), host=host, port=port, print=None)
