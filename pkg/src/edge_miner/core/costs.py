"""Virtual service-cost accounting for simulated component lanes."""

from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Optional, Tuple

from ..data.models import ServiceCosts
from .transport import Scheduler

Continuation = Optional[Callable[[], None]]
Job = Callable[[], Tuple[float, Continuation]]


@dataclass
class Work:
    """Primitive operations performed while handling one event."""

    verifies: int = 0
    signs: int = 0
    decrypts: int = 0
    encrypts: int = 0
    digests: int = 0
    contract_evals: int = 0

    def __iadd__(self, other: "Work") -> "Work":
        self.verifies += other.verifies
        self.signs += other.signs
        self.decrypts += other.decrypts
        self.encrypts += other.encrypts
        self.digests += other.digests
        self.contract_evals += other.contract_evals
        return self

    def cost_ms(self, costs: ServiceCosts) -> float:
        return (
            self.verifies * costs.verify_ms
            + self.signs * costs.sign_ms
            + self.decrypts * costs.decrypt_ms
            + self.encrypts * costs.encrypt_ms
            + self.digests * costs.digest_ms
            + self.contract_evals * costs.contract_eval_ms
        )


class Lane:
    """One serialized software-defined component on an e-miner.

    A job runs when the lane reaches it and returns (cost_ms, continuation);
    the continuation fires once the virtual cost has elapsed, then the next
    queued job starts.
    """

    def __init__(self, name: str, scheduler: Scheduler):
        self.name = name
        self.scheduler = scheduler
        self._queue: Deque[Job] = deque()
        self._busy = False
        self.jobs = 0
        self.busy_ms = 0.0

    @property
    def busy(self) -> bool:
        return self._busy

    def __len__(self) -> int:
        return len(self._queue)

    def submit(self, job: Job) -> None:
        self._queue.append(job)
        if not self._busy:
            self._start_next()

    def _start_next(self) -> None:
        if not self._queue:
            self._busy = False
            return
        self._busy = True
        job = self._queue.popleft()
        cost, done = job()
        self.jobs += 1
        self.busy_ms += cost
        self.scheduler.delay(cost, self._finish, done, label=f"lane:{self.name}")

    def _finish(self, done: Continuation) -> None:
        if done is not None:
            done()
        self._start_next()
