"""Simulated temperature sensors emitting signed, encrypted transactions."""

import logging
import random
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from Crypto.PublicKey.RSA import RsaKey

from ..data.models import SensorReading, Transaction, WorkloadConfig
from ..errors import EndpointUnreachable
from .codec import encode_transaction
from .crypto import KeyPair, RandFunc, SeededBytes, digest, encrypt, generate_keypair, sign
from .transport import TRANSACTIONS, DatagramRequest, Delivery, SimNetwork

logger = logging.getLogger(__name__)


def next_reading(rng: random.Random, value_range: Tuple[float, float]) -> SensorReading:
    """Uniform temperature in value_range, one decimal, Celsius."""
    low, high = value_range
    value = round(rng.uniform(low, high), 1)
    return SensorReading(v=min(max(value, low), high), c="Celsius")


def build_transaction(
    reading: SensorReading,
    sensor: KeyPair,
    miner_pub: RsaKey,
    randfunc: Optional[RandFunc] = None,
) -> Transaction:
    """Hash the plaintext, encrypt it for the miner, sign the hash."""
    plaintext = reading.to_bytes()
    txn_hash = digest(plaintext)
    return Transaction(
        hash=txn_hash,
        msg=encrypt(miner_pub, plaintext, randfunc),
        signature=sign(sensor.private_key, txn_hash),
    )


@dataclass
class Sensor:
    sensor_id: str
    keypair: KeyPair
    randfunc: Optional[RandFunc] = None

    @classmethod
    def seeded(cls, sensor_id: str, seed: int) -> "Sensor":
        return cls(
            sensor_id=sensor_id,
            keypair=generate_keypair(sensor_id, seed),
            randfunc=SeededBytes(f"{sensor_id}:oaep:{seed}"),
        )


@dataclass
class Emission:
    index: int
    sensor_id: str
    txn_hash: str
    size: int
    sent_at: float
    payload: bytes = field(repr=False)
    delivery: Delivery = field(repr=False)

    @property
    def acked(self) -> bool:
        return self.delivery.acked


@dataclass
class WorkloadReport:
    emissions: List[Emission] = field(default_factory=list)

    @property
    def send_times(self) -> List[float]:
        return [e.sent_at for e in self.emissions]

    @property
    def acked(self) -> int:
        return sum(1 for e in self.emissions if e.acked)

    def stream(self) -> bytes:
        """Every emitted payload, newline separated (replay comparison)."""
        return b"\n".join(e.payload for e in self.emissions)


def sensor_ids(count: int) -> List[str]:
    return [f"sensor-{i}" for i in range(count)]


class SensorWorkload:
    """Sequential emitter; logical sensors take turns in round-robin order."""

    def __init__(
        self,
        cfg: WorkloadConfig,
        sensors: List[Sensor],
        miner_pub: RsaKey,
        network: SimNetwork,
    ):
        if not sensors:
            raise ValueError("a workload needs at least one sensor")
        self.cfg = cfg
        self.sensors = sensors
        self.miner_pub = miner_pub
        self.network = network
        self.report = WorkloadReport()
        self._rng = random.Random(cfg.seed)

    def schedule(self, start: float = 0.0) -> WorkloadReport:
        if not self.network.has_endpoint(self.cfg.target):
            raise EndpointUnreachable(self.cfg.target)
        for i in range(self.cfg.count):
            self.network.scheduler.schedule(
                start + i * self.cfg.interval_ms, self._emit, i, label="sensor-emit"
            )
        logger.info(
            "Scheduled %d transactions every %.1f ms to %s",
            self.cfg.count,
            self.cfg.interval_ms,
            self.cfg.target,
        )
        return self.report

    def _emit(self, index: int) -> None:
        sensor = self.sensors[index % len(self.sensors)]
        reading = next_reading(self._rng, self.cfg.value_range)
        txn = build_transaction(reading, sensor.keypair, self.miner_pub, sensor.randfunc)
        payload = encode_transaction(txn)
        delivery = self.network.send_datagram(
            DatagramRequest(
                method="POST",
                path=TRANSACTIONS,
                payload=payload,
                source=sensor.sensor_id,
                destination=self.cfg.target,
            )
        )
        self.report.emissions.append(
            Emission(
                index=index + 1,
                sensor_id=sensor.sensor_id,
                txn_hash=txn.hash,
                size=len(payload),
                sent_at=self.network.scheduler.now,
                payload=payload,
                delivery=delivery,
            )
        )


def run_workload(
    cfg: WorkloadConfig, network: SimNetwork, miner_pub: RsaKey, sensors: Optional[List[Sensor]] = None
) -> WorkloadReport:
    """Emit cfg.count transactions to cfg.target and drain the simulation."""
    sensors = sensors or [Sensor.seeded(sid, cfg.seed) for sid in sensor_ids(cfg.sensors)]
    workload = SensorWorkload(cfg, sensors, miner_pub, network)
    report = workload.schedule(start=network.scheduler.now)
    network.scheduler.run()
    return report
