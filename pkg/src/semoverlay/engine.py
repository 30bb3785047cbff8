"""Deterministic discrete-event engine.

Events run in ``(time, seq)`` order on a single virtual clock (milliseconds).
Protocol code is written as generator processes that yield requests
(``forward``, ``rpc``, ``sleep``, or any ``Future``) and are resumed when the
request completes.  A message to a dead peer is dropped; the sender learns
about it through a timeout that resumes the process with ``FAILED``.
"""
from __future__ import annotations

import hashlib
import heapq
import math
import random
from collections import Counter

from .errors import OverlayError

QUERY, RESPONSE, MAINTENANCE = "query", "response", "maintenance"
TAGS = (QUERY, RESPONSE, MAINTENANCE)


class _Failed:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return "FAILED"


FAILED = _Failed()


class Event:
    __slots__ = ("time", "seq", "target", "tag", "fn", "args")

    def __init__(self, time, seq, target, tag, fn, args):
        self.time, self.seq, self.target, self.tag = time, seq, target, tag
        self.fn, self.args = fn, args

    def __lt__(self, other):
        return (self.time, self.seq) < (other.time, other.seq)

    def __repr__(self):
        return f"Event({self.time:.3f}, {self.seq}, {self.target}, {self.tag})"


class Future:
    __slots__ = ("done", "value", "error", "_callbacks")

    def __init__(self):
        self.done = False
        self.value = None
        self.error = None
        self._callbacks = []

    def add_callback(self, fn):
        if self.done:
            fn(self)
        else:
            self._callbacks.append(fn)

    def set_result(self, value=None):
        if self.done:
            return
        self.done, self.value = True, value
        callbacks, self._callbacks = self._callbacks, []
        for fn in callbacks:
            fn(self)

    def set_error(self, exc):
        if self.done:
            return
        self.error = exc
        self.set_result(None)

    def _attach(self, proc):
        # a process yielding a future waits for it
        if self.done:
            proc.sim.schedule(0.0, _resume_from, proc, self)
        else:
            self.add_callback(lambda f: _resume_from(proc, f))


class Process(Future):
    """A generator driven by the engine.

    ``at`` is the peer currently executing the process; if that peer dies the
    process is abandoned and resolves to ``FAILED``.
    """
    __slots__ = ("sim", "gen", "at")

    def __init__(self, sim, gen, at=None):
        super().__init__()
        self.sim, self.gen, self.at = sim, gen, at

    def _resume(self, value=None, error=None):
        if self.done:
            return
        if self.at is not None and not self.sim.is_alive(self.at):
            self.gen.close()
            self.set_result(FAILED)
            return
        try:
            req = self.gen.throw(error) if error is not None else self.gen.send(value)
        except StopIteration as stop:
            self.set_result(stop.value)
            return
        except OverlayError as exc:
            self.set_error(exc)
            return
        req._attach(self)


class _Request:
    def _attach(self, proc):  # pragma: no cover - interface
        raise NotImplementedError


class _Sleep(_Request):
    def __init__(self, delay):
        self.delay = delay

    def _attach(self, proc):
        proc.sim.schedule(self.delay, proc._resume, None)


class _Forward(_Request):
    def __init__(self, src, dst, tag):
        self.src, self.dst, self.tag = src, dst, tag

    def _attach(self, proc):
        sim = proc.sim

        def arrived():
            proc.at = self.dst
            proc._resume(True)

        sim.send(self.src, self.dst, self.tag, arrived, sim._timeout(self.src, self.dst, proc))


class _Rpc(_Request):
    def __init__(self, src, dst, tag, fn, args, reply_tag):
        self.src, self.dst, self.tag = src, dst, tag
        self.fn, self.args, self.reply_tag = fn, args, reply_tag

    def _attach(self, proc):
        sim = proc.sim

        def arrived():
            result = self.fn(*self.args)
            sim.send(self.dst, self.src, self.reply_tag,
                     lambda: proc._resume(result), lambda: proc._resume(FAILED))

        sim.send(self.src, self.dst, self.tag, arrived, sim._timeout(self.src, self.dst, proc))


def _resume_from(proc, fut):
    if fut.error is not None:
        proc._resume(error=fut.error)
    else:
        proc._resume(fut.value)


def all_of(futures) -> Future:
    futures = list(futures)
    out = Future()
    remaining = [len(futures)]
    if not futures:
        out.set_result([])
        return out

    def one_done(_):
        remaining[0] -= 1
        if remaining[0] == 0:
            out.set_result([f.value for f in futures])

    for f in futures:
        f.add_callback(one_done)
    return out


class Metrics:
    def __init__(self):
        self.sent = Counter()
        self.delivered = Counter()
        self.dropped = Counter()
        self.inflight = Counter()
        self.churn = Counter()

    def conserved(self) -> bool:
        return all(self.sent[t] == self.delivered[t] + self.dropped[t] + self.inflight[t]
                   for t in set(self.sent) | set(self.delivered))

    def counters(self) -> dict:
        return {tag: {"sent": self.sent[tag], "delivered": self.delivered[tag],
                      "dropped": self.dropped[tag], "inflight": self.inflight[tag]}
                for tag in TAGS}


def fork_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class Simulator:
    """Event queue, virtual clock, latency model and message accounting."""

    def __init__(self, seed: int = 0, base_latency: float = 10.0, alpha: float = 90.0,
                 timeout_slack: float = 50.0):
        self.seed = seed
        self.base_latency = base_latency
        self.alpha = alpha
        self.timeout_slack = timeout_slack
        self.now = 0.0
        self._seq = 0
        self._queue: list[Event] = []
        self._rngs: dict[str, random.Random] = {}
        self._trace = hashlib.sha256()
        self.processed = 0
        self.metrics = Metrics()

    # hooks supplied by the network layer
    def is_alive(self, node) -> bool:
        return True

    def position(self, node):
        return (0.0, 0.0)

    def rng(self, name: str) -> random.Random:
        if name not in self._rngs:
            self._rngs[name] = random.Random(fork_seed(self.seed, name))
        return self._rngs[name]

    def latency(self, a, b) -> float:
        (x1, y1), (x2, y2) = self.position(a), self.position(b)
        return self.base_latency + self.alpha * math.hypot(x1 - x2, y1 - y2)

    def schedule(self, delay: float, fn, *args, target=None, tag: str = "timer") -> Event:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        ev = Event(self.now + delay, self._seq, target, tag, fn, args)
        heapq.heappush(self._queue, ev)
        return ev

    def send(self, src, dst, tag: str, on_deliver=None, on_drop=None) -> Event:
        self.metrics.sent[tag] += 1
        self.metrics.inflight[tag] += 1
        return self.schedule(self.latency(src, dst), self._deliver, dst, tag, on_deliver, on_drop,
                             target=dst, tag=tag)

    def _deliver(self, dst, tag, on_deliver, on_drop):
        self.metrics.inflight[tag] -= 1
        if self.is_alive(dst):
            self.metrics.delivered[tag] += 1
            if on_deliver is not None:
                on_deliver()
        else:
            self.metrics.dropped[tag] += 1
            if on_drop is not None:
                on_drop()

    def _timeout(self, src, dst, proc):
        # fires one round trip (plus slack) after the send, when a reply would have arrived
        wait = self.latency(src, dst) + self.timeout_slack
        return lambda: self.schedule(wait, proc._resume, FAILED, target=src, tag="timeout")

    # process API
    def spawn(self, gen, at=None) -> Process:
        proc = Process(self, gen, at)
        self.schedule(0.0, proc._resume, None, target=at, tag="spawn")
        return proc

    @staticmethod
    def forward(src, dst, tag: str) -> _Forward:
        return _Forward(src, dst, tag)

    @staticmethod
    def rpc(src, dst, tag: str, fn, *args, reply_tag: str | None = None) -> _Rpc:
        if reply_tag is None:
            reply_tag = RESPONSE if tag == QUERY else tag
        return _Rpc(src, dst, tag, fn, args, reply_tag)

    @staticmethod
    def sleep(delay: float) -> _Sleep:
        return _Sleep(delay)

    # driving the clock
    def step(self) -> bool:
        if not self._queue:
            return False
        ev = heapq.heappop(self._queue)
        if ev.time < self.now:
            raise RuntimeError("clock went backwards")
        self.now = ev.time
        self.processed += 1
        self._trace.update(f"{ev.time:.6f}|{ev.seq}|{ev.target}|{ev.tag}\n".encode())
        ev.fn(*ev.args)
        return True

    def run_until(self, t: float) -> int:
        count = 0
        while self._queue and self._queue[0].time <= t:
            self.step()
            count += 1
        self.now = max(self.now, t)
        return count

    def run_process(self, proc, max_time: float = 3.6e6):
        """Run the event loop until ``proc`` (a Process or generator) finishes."""
        if not isinstance(proc, Future):
            proc = self.spawn(proc)
        deadline = self.now + max_time
        while not proc.done:
            if not self._queue or self._queue[0].time > deadline:
                raise RuntimeError("process did not finish")
            self.step()
        if proc.error is not None:
            raise proc.error
        return proc.value

    def trace_digest(self) -> str:
        return self._trace.hexdigest()

    @property
    def pending_events(self) -> int:
        return len(self._queue)
