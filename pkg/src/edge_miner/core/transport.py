"""Deterministic discrete-event network fabric.

Two faces: constrained datagrams (CoAP-style REST verbs, payload cap) for
sensor -> miner traffic and an uncapped bulk channel (HTTP-style) for
miner <-> miner and miner -> fog traffic. Links are FIFO; time is virtual (ms).
"""

import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Literal, Optional, Tuple

from ..data.models import NetworkConfig
from ..errors import PayloadOverCap, UnknownEndpoint

logger = logging.getLogger(__name__)

Method = Literal["GET", "POST", "PUT", "DELETE"]
METHODS = ("GET", "POST", "PUT", "DELETE")

# Resource paths
TRANSACTIONS = "/transactions"
RELAY = "/transactions/relay"
CONSENSUS = "/consensus"
BLOCKS = "/blocks"
CHAIN = "/chain"
PUBSUB = "/pubsub"
FOG_OFFLOAD = "/fog/offload"


@dataclass(order=True)
class Event:
    time: float
    seq: int
    callback: Callable[..., Any] = field(compare=False)
    args: Tuple[Any, ...] = field(default=(), compare=False)
    label: str = field(default="", compare=False)


class Scheduler:
    """Single-threaded virtual-time event loop; ties break by sequence number."""

    def __init__(self) -> None:
        self.now = 0.0
        self._queue: List[Event] = []
        self._seq = itertools.count()
        self.processed = 0

    def schedule(self, at: float, callback: Callable[..., Any], *args: Any, label: str = "") -> Event:
        event = Event(max(at, self.now), next(self._seq), callback, args, label)
        heapq.heappush(self._queue, event)
        return event

    def delay(self, after: float, callback: Callable[..., Any], *args: Any, label: str = "") -> Event:
        return self.schedule(self.now + after, callback, *args, label=label)

    @property
    def idle(self) -> bool:
        return not self._queue

    def peek_time(self) -> Optional[float]:
        return self._queue[0].time if self._queue else None

    def advance(self) -> Optional[Event]:
        """Pop the earliest event, move the clock and run its callback once."""
        if not self._queue:
            return None
        event = heapq.heappop(self._queue)
        self.now = event.time
        self.processed += 1
        event.callback(*event.args)
        return event

    def run(self, until: Optional[float] = None, max_events: Optional[int] = None) -> int:
        """Advance until idle, past `until`, or after max_events; returns events run."""
        count = 0
        while self._queue:
            if until is not None and self._queue[0].time > until:
                break
            if max_events is not None and count >= max_events:
                break
            self.advance()
            count += 1
        return count


class DeliveryStatus(str, Enum):
    PENDING = "pending"
    DELIVERED = "delivered"
    DROPPED = "dropped"


@dataclass
class Delivery:
    """Ack handle: resolves to delivered (with time) or dropped."""

    source: str
    destination: str
    path: str
    size: int
    sent_at: float
    status: DeliveryStatus = DeliveryStatus.PENDING
    delivered_at: Optional[float] = None
    reply: Optional[bytes] = None

    @property
    def acked(self) -> bool:
        return self.status is DeliveryStatus.DELIVERED


@dataclass(frozen=True)
class DatagramRequest:
    method: Method
    path: str
    payload: bytes
    source: str
    destination: str

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unsupported method {self.method!r}")


@dataclass(frozen=True)
class BulkMessage:
    source: str
    destination: str
    path: str
    body: Any
    size: int = 0


# A handler may answer with a reply body; None means no response
DatagramHandler = Callable[[DatagramRequest], Optional[bytes]]
ReplyHandler = Callable[[bytes], None]
BulkHandler = Callable[[BulkMessage], None]


@dataclass
class _Endpoint:
    datagram: Optional[DatagramHandler] = None
    bulk: Optional[BulkHandler] = None


class SimNetwork:
    """Simulated links between registered endpoints."""

    def __init__(self, scheduler: Scheduler, config: Optional[NetworkConfig] = None, seed: int = 0):
        self.scheduler = scheduler
        self.config = config or NetworkConfig()
        self._rng = random.Random(seed)
        self._endpoints: Dict[str, _Endpoint] = {}
        self._link_tail: Dict[Tuple[str, str], float] = {}
        self.trace: List[Tuple[float, str, str, str, str]] = []

    def register(
        self,
        endpoint_id: str,
        datagram: Optional[DatagramHandler] = None,
        bulk: Optional[BulkHandler] = None,
    ) -> None:
        self._endpoints[endpoint_id] = _Endpoint(datagram=datagram, bulk=bulk)

    def has_endpoint(self, endpoint_id: str) -> bool:
        return endpoint_id in self._endpoints

    def link_latency(self) -> float:
        jitter = self.config.jitter_ms
        return self.config.latency_ms + (self._rng.uniform(0, jitter) if jitter else 0.0)

    def _enqueue(self, source: str, destination: str, path: str, size: int, deliver: Callable[[], None]) -> Delivery:
        now = self.scheduler.now
        ticket = Delivery(source=source, destination=destination, path=path, size=size, sent_at=now)
        latency = self.link_latency()
        if self.config.drop_probability and self._rng.random() < self.config.drop_probability:
            ticket.status = DeliveryStatus.DROPPED
            self.trace.append((now, "drop", source, destination, path))
            logger.debug("Dropped %s %s -> %s", path, source, destination)
            return ticket
        link = (source, destination)
        # FIFO per link: never overtake an earlier message on the same link
        at = max(now + latency, self._link_tail.get(link, 0.0))
        self._link_tail[link] = at

        def _arrive() -> None:
            ticket.status = DeliveryStatus.DELIVERED
            ticket.delivered_at = self.scheduler.now
            self.trace.append((self.scheduler.now, "deliver", source, destination, path))
            deliver()

        self.scheduler.schedule(at, _arrive, label=f"{path}:{source}->{destination}")
        return ticket

    def send_datagram(self, req: DatagramRequest, on_reply: Optional[ReplyHandler] = None) -> Delivery:
        """Constrained, capped exchange; acked on delivery.

        A reply travels back on the reverse link and lands in ``Delivery.reply``.
        Replies are block-wise transfers, so the request cap does not bound them.
        """
        if len(req.payload) > self.config.datagram_cap:
            raise PayloadOverCap(len(req.payload), self.config.datagram_cap)
        endpoint = self._endpoints.get(req.destination)
        if endpoint is None or endpoint.datagram is None:
            raise UnknownEndpoint(req.destination)
        handler = endpoint.datagram

        def deliver() -> None:
            reply = handler(req)
            if reply is None:
                return
            self._enqueue(req.destination, req.source, req.path, len(reply), lambda: answer(reply))

        def answer(reply: bytes) -> None:
            ticket.reply = reply
            if on_reply is not None:
                on_reply(reply)

        ticket = self._enqueue(req.source, req.destination, req.path, len(req.payload), deliver)
        return ticket

    def send_bulk(self, msg: BulkMessage) -> Delivery:
        endpoint = self._endpoints.get(msg.destination)
        if endpoint is None or endpoint.bulk is None:
            raise UnknownEndpoint(msg.destination)
        handler = endpoint.bulk
        return self._enqueue(msg.source, msg.destination, msg.path, msg.size, lambda: handler(msg))

    def broadcast(self, source: str, destinations: Iterable[str], path: str, body: Any, size: int = 0) -> List[Delivery]:
        return [
            self.send_bulk(BulkMessage(source=source, destination=d, path=path, body=body, size=size))
            for d in destinations
            if d != source
        ]
