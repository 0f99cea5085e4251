"""Message-passing runtime hosting all ranks inside one OS session.

Two interchangeable transports: worker threads with in-memory mailboxes,
and forked worker processes each wired to a parent router through a
socketpair.  Wire frames carry an 8-byte little-endian length (header
plus payload), a 16-byte header of four little-endian u32 words (source,
dest, phase, step), and a pickled payload.  The thread transport round-
trips payloads through pickle too, so both transports hand receivers an
isolated copy.  Traffic is counted logically at the send call, which
makes the numbers transport-independent.

Receives address messages by (source, phase, step); a receive that stays
unmatched past the timeout raises EngineError instead of hanging the run.
Optional delay injection sleeps a seeded pseudo-random interval before
each send to shake out ordering assumptions.
"""
from __future__ import annotations

import os
import pickle
import random
import selectors
import socket
import struct
import threading
import time
import traceback
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .core import ConfigError, DecompGrid, EngineError, RankCoords, coords_of_rank, rank_of_coords

_LEN = struct.Struct("<Q")
_HDR = struct.Struct("<IIII")
_COORD_DEST = 0xFFFFFFFF
DEFAULT_TIMEOUT = 30.0

TRANSPORTS = ("thread", "process")
# flag-level spellings, used by manifests and the command line
TRANSPORT_LABELS = {"thread": "threads", "process": "processes"}


def encode_frame(source: int, dest: int, phase: int, step: int, payload: bytes) -> bytes:
    header = _HDR.pack(source, dest, phase, step)
    return _LEN.pack(len(header) + len(payload)) + header + payload


@dataclass
class TrafficStats:
    """Logical send-side traffic; array payloads count elements and bytes."""

    messages: int = 0
    elements: int = 0
    nbytes: int = 0
    by_phase: dict = field(default_factory=dict)

    def count(self, phase: int, payload: object) -> None:
        e = payload.size if isinstance(payload, np.ndarray) else 0
        b = payload.nbytes if isinstance(payload, np.ndarray) else 0
        self.messages += 1
        self.elements += e
        self.nbytes += b
        m, el, nb = self.by_phase.get(phase, (0, 0, 0))
        self.by_phase[phase] = (m + 1, el + e, nb + b)

    def merge(self, other: "TrafficStats") -> None:
        self.messages += other.messages
        self.elements += other.elements
        self.nbytes += other.nbytes
        for phase, (m, el, nb) in other.by_phase.items():
            m0, e0, b0 = self.by_phase.get(phase, (0, 0, 0))
            self.by_phase[phase] = (m0 + m, e0 + el, b0 + nb)


class RankResult(NamedTuple):
    value: object
    traffic: TrafficStats


class _Mailbox:
    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._slots: dict[tuple, deque] = {}

    def put(self, key: tuple, payload: object) -> None:
        with self._cond:
            self._slots.setdefault(key, deque()).append(payload)
            self._cond.notify_all()

    def take(self, key: tuple, timeout: float) -> object:
        with self._cond:
            ok = self._cond.wait_for(
                lambda: self._slots.get(key), timeout=timeout
            )
            if not ok:
                raise EngineError(
                    f"receive timed out after {timeout:.1f}s waiting for "
                    f"(source, phase, step)={key}"
                )
            return self._slots[key].popleft()


class _ThreadEndpoint:
    def __init__(self, boxes: list[_Mailbox], rank: int) -> None:
        self._boxes = boxes
        self._rank = rank

    def send(self, source: int, dest: int, phase: int, step: int, payload: object) -> None:
        clone = pickle.loads(pickle.dumps(payload, pickle.HIGHEST_PROTOCOL))
        self._boxes[dest].put((source, phase, step), clone)

    def recv(self, key: tuple, timeout: float) -> object:
        return self._boxes[self._rank].take(key, timeout)


class _SocketEndpoint:
    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock
        self._stash: dict[tuple, deque] = {}

    def send(self, source: int, dest: int, phase: int, step: int, payload: object) -> None:
        data = pickle.dumps(payload, pickle.HIGHEST_PROTOCOL)
        self._sock.sendall(encode_frame(source, dest, phase, step, data))

    def _read_exact(self, n: int, deadline: float) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise EngineError(f"receive timed out reading frame ({len(buf)}/{n} bytes)")
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(n - len(buf))
            except socket.timeout:
                raise EngineError("receive timed out waiting for a frame") from None
            if not chunk:
                raise EngineError("router closed the connection")
            buf.extend(chunk)
        return bytes(buf)

    def recv(self, key: tuple, timeout: float) -> object:
        deadline = time.monotonic() + timeout
        while True:
            slot = self._stash.get(key)
            if slot:
                return slot.popleft()
            raw = self._read_exact(_LEN.size, deadline)
            (length,) = _LEN.unpack(raw)
            body = self._read_exact(length, deadline)
            source, _dest, phase, step = _HDR.unpack_from(body)
            payload = pickle.loads(body[_HDR.size:])
            self._stash.setdefault((source, phase, step), deque()).append(payload)


class RankContext:
    """Per-rank handle: identity, messaging, and the field-axis reduction."""

    def __init__(
        self,
        rank: int,
        grid: DecompGrid,
        endpoint,
        timeout: float,
        delay: Callable[[], float] | None = None,
    ) -> None:
        self.rank = rank
        self.grid = grid
        self.coords = coords_of_rank(rank, grid)
        self.traffic = TrafficStats()
        self._endpoint = endpoint
        self._timeout = timeout
        self._delay = delay

    def send(self, dest: int, payload: object, *, phase: int, step: int) -> None:
        if self._delay is not None:
            time.sleep(self._delay())
        self.traffic.count(phase, payload)
        self._endpoint.send(self.rank, dest, phase, step, payload)

    def receive(self, source: int, *, phase: int, step: int) -> object:
        return self._endpoint.recv((source, phase, step), self._timeout)

    def peer(self, p_f: int | None = None, p_v: int | None = None, p_r: int | None = None) -> int:
        c = self.coords
        return rank_of_coords(
            RankCoords(
                c.p_f if p_f is None else p_f,
                c.p_v if p_v is None else p_v,
                c.p_r if p_r is None else p_r,
            ),
            self.grid,
        )

    def reduce_field_axis(self, array: np.ndarray, *, phase: int, step: int) -> np.ndarray:
        """Sum partial arrays over the field axis, identically on every rank.

        Field-leader ranks fold contributions in ascending p_f order and
        broadcast the result back, so the addition order (and therefore
        the rounding) never depends on message arrival order.
        """
        n_pf = self.grid.n_pf
        if n_pf == 1:
            return array
        root = self.peer(p_f=0)
        if self.coords.p_f == 0:
            total = array
            for p_f in range(1, n_pf):
                total = total + self.receive(self.peer(p_f=p_f), phase=phase, step=step)
            for p_f in range(1, n_pf):
                self.send(self.peer(p_f=p_f), total, phase=phase, step=step)
            return total
        self.send(root, array, phase=phase, step=step)
        return self.receive(root, phase=phase, step=step)


# ---------------------------------------------------------------------------
# drivers


def _make_delay(rank: int, inject_delay: float, delay_seed: int) -> Callable[[], float] | None:
    if inject_delay <= 0:
        return None
    rng = random.Random((delay_seed << 20) ^ (rank * 2654435761 + 1))
    return lambda: rng.uniform(0.0, inject_delay)


def _run_threads(
    grid: DecompGrid, rank_fn, timeout: float, inject_delay: float, delay_seed: int
) -> dict[int, RankResult]:
    n_p = grid.n_p
    boxes = [_Mailbox() for _ in range(n_p)]
    results: list[RankResult | None] = [None] * n_p
    errors: list[BaseException | None] = [None] * n_p

    def worker(rank: int) -> None:
        ctx = RankContext(
            rank,
            grid,
            _ThreadEndpoint(boxes, rank),
            timeout,
            _make_delay(rank, inject_delay, delay_seed),
        )
        try:
            results[rank] = RankResult(rank_fn(ctx), ctx.traffic)
        except BaseException as exc:  # noqa: BLE001 - reported to the caller
            errors[rank] = exc

    threads = [threading.Thread(target=worker, args=(r,), name=f"rank-{r}") for r in range(n_p)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for rank, exc in enumerate(errors):
        if exc is not None:
            raise EngineError(f"rank {rank} failed: {exc}") from exc
    return {rank: res for rank, res in enumerate(results)}


def _child_main(rank: int, grid: DecompGrid, rank_fn, sock, timeout, inject_delay, delay_seed):
    endpoint = _SocketEndpoint(sock)
    ctx = RankContext(rank, grid, endpoint, timeout, _make_delay(rank, inject_delay, delay_seed))
    try:
        value = rank_fn(ctx)
        endpoint.send(rank, _COORD_DEST, 0, 0, ("ok", value, ctx.traffic))
        sock.close()
        os._exit(0)
    except BaseException:  # noqa: BLE001 - serialized back to the parent
        try:
            endpoint.send(rank, _COORD_DEST, 0, 0, ("err", traceback.format_exc()))
            sock.close()
        finally:
            os._exit(1)


def _run_processes(
    grid: DecompGrid, rank_fn, timeout: float, inject_delay: float, delay_seed: int
) -> dict[int, RankResult]:
    n_p = grid.n_p
    pairs = [socket.socketpair() for _ in range(n_p)]
    pids = []
    for rank in range(n_p):
        pid = os.fork()
        if pid == 0:
            child_sock = pairs[rank][1]
            for r, (parent_end, child_end) in enumerate(pairs):
                parent_end.close()
                if r != rank:
                    child_end.close()
            _child_main(rank, grid, rank_fn, child_sock, timeout, inject_delay, delay_seed)
        pids.append(pid)
    for _, child_end in pairs:
        child_end.close()

    sel = selectors.DefaultSelector()
    states = []
    for rank, (parent_end, _) in enumerate(pairs):
        parent_end.setblocking(False)
        st = {"sock": parent_end, "rank": rank, "inbuf": bytearray(), "outbuf": bytearray()}
        sel.register(parent_end, selectors.EVENT_READ, st)
        states.append(st)

    outcomes: dict[int, tuple] = {}
    last_activity = time.monotonic()

    def dispatch(body: bytes) -> None:
        source, dest, phase, step = _HDR.unpack_from(body)
        if dest == _COORD_DEST:
            outcomes[source] = pickle.loads(body[_HDR.size:])
            return
        st = states[dest]
        if st.get("closed"):
            return  # receiver already finished; matched protocols never hit this
        st["outbuf"] += _LEN.pack(len(body)) + body
        sel.modify(st["sock"], selectors.EVENT_READ | selectors.EVENT_WRITE, st)

    def fail(msg: str) -> None:
        for pid in pids:
            try:
                os.kill(pid, 9)
            except ProcessLookupError:
                pass
        for pid in pids:
            os.waitpid(pid, 0)
        raise EngineError(msg)

    while len(outcomes) < n_p:
        events = sel.select(timeout=0.25)
        if not events and time.monotonic() - last_activity > timeout + 1.0:
            fail(f"router saw no traffic for {timeout:.1f}s with ranks still pending")
        for key, mask in events:
            st = key.data
            if mask & selectors.EVENT_READ:
                try:
                    chunk = st["sock"].recv(1 << 16)
                except (BlockingIOError, InterruptedError):
                    chunk = None
                except ConnectionResetError:
                    chunk = b""
                if chunk:
                    last_activity = time.monotonic()
                    st["inbuf"] += chunk
                    while True:
                        buf = st["inbuf"]
                        if len(buf) < _LEN.size:
                            break
                        (length,) = _LEN.unpack_from(bytes(buf[:_LEN.size]))
                        if len(buf) < _LEN.size + length:
                            break
                        body = bytes(buf[_LEN.size:_LEN.size + length])
                        del buf[:_LEN.size + length]
                        dispatch(body)
                elif chunk == b"":
                    sel.unregister(st["sock"])
                    st["sock"].close()
                    st["closed"] = True
                    if st["rank"] not in outcomes:
                        fail(f"rank {st['rank']} exited without reporting a result")
            if mask & selectors.EVENT_WRITE and st["outbuf"]:
                try:
                    sent = st["sock"].send(bytes(st["outbuf"]))
                    del st["outbuf"][:sent]
                    last_activity = time.monotonic()
                except (BlockingIOError, InterruptedError):
                    pass
                if not st["outbuf"]:
                    sel.modify(st["sock"], selectors.EVENT_READ, st)

    for st in states:
        try:
            sel.unregister(st["sock"])
            st["sock"].close()
        except (KeyError, ValueError, OSError):
            pass
    for pid in pids:
        os.waitpid(pid, 0)

    for rank in range(n_p):
        outcome = outcomes[rank]
        if outcome[0] == "err":
            raise EngineError(f"rank {rank} failed:\n{outcome[1]}")
    return {rank: RankResult(outcomes[rank][1], outcomes[rank][2]) for rank in range(n_p)}


def run(
    grid: DecompGrid,
    rank_fn: Callable[[RankContext], object],
    *,
    transport: str = "thread",
    timeout: float = DEFAULT_TIMEOUT,
    inject_delay: float = 0.0,
    delay_seed: int = 0,
) -> dict[int, RankResult]:
    """Execute ``rank_fn`` once per rank and gather the returned values.

    A single-rank grid runs inline on the calling thread regardless of
    the requested transport.
    """
    if transport not in TRANSPORTS:
        raise ConfigError(f"transport must be one of {TRANSPORTS}, got {transport!r}")
    if grid.n_p == 1:
        ctx = RankContext(
            0, grid, _ThreadEndpoint([_Mailbox()], 0), timeout, _make_delay(0, inject_delay, delay_seed)
        )
        return {0: RankResult(rank_fn(ctx), ctx.traffic)}
    if transport == "thread":
        return _run_threads(grid, rank_fn, timeout, inject_delay, delay_seed)
    return _run_processes(grid, rank_fn, timeout, inject_delay, delay_seed)
