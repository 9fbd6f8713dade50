"""Gradient averaging across learners: in-process barrier and a framed socket transport.

Every worker receives the same mean, reduced in rank order, so replicas
that start from identical parameters stay identical.

Socket frames are a little-endian header (message type u8, payload length
u32) followed by the payload. Client GRAD payloads start with the sender's
rank (u32) and progress counter (u64); server GRAD replies start with the
summed counter (u64). Arrays travel in .npy format.
"""

import io
import logging
import socket
import struct
import threading
import time
from enum import IntEnum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from replay_engine.exceptions import AllReduceTimeout, WorkerDisconnected

logger = logging.getLogger(__name__)

FRAME = struct.Struct("<BI")
RANK = struct.Struct("<I")
GRAD_HEADER = struct.Struct("<IQ")
PROGRESS = struct.Struct("<Q")
CONNECT_RETRY_S = 0.1


class MessageType(IntEnum):
    GRAD = 1
    PARAMS = 2
    CLOSE = 3


def allreduce_mean(worker_grads: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean, summed in the given order.

    Raises:
        ValueError: On an empty list or mismatched shapes
    """
    if len(worker_grads) == 0:
        raise ValueError("allreduce_mean needs at least one gradient")
    shapes = {np.shape(g) for g in worker_grads}
    if len(shapes) != 1:
        raise ValueError(f"gradient shapes differ across workers: {sorted(shapes)}")
    total = np.array(worker_grads[0], copy=True)
    for g in worker_grads[1:]:
        total += g
    return total / len(worker_grads)


class InProcessAllReduce:
    """Barrier-based all-reduce for learner threads in one process.

    The reduction runs once per round as the barrier action, together with
    an optional stop poll, so every rank sees the same mean and the same
    stop decision.
    """

    def __init__(self, num_workers: int, timeout: float = 120.0, should_stop: Optional[Callable[[], bool]] = None):
        if num_workers < 1:
            raise ValueError(f"num_workers must be >= 1, got {num_workers}")
        self.num_workers = num_workers
        self.timeout = timeout
        self._should_stop = should_stop or (lambda: False)
        self._slots: List[Optional[np.ndarray]] = [None] * num_workers
        self._result: Optional[np.ndarray] = None
        self._stop = False
        self._aborted = False
        self._barrier = threading.Barrier(num_workers, action=self._reduce, timeout=timeout)
        self.rounds = 0

    def _reduce(self) -> None:
        self._result = allreduce_mean(self._slots)
        self._stop = bool(self._should_stop())
        self.rounds += 1

    def allreduce(self, rank: int, grad: np.ndarray) -> Tuple[np.ndarray, bool]:
        """Contribute a gradient and block until the round's mean is ready.

        Returns:
            (mean gradient, stop decision for this round)

        Raises:
            AllReduceTimeout: If some rank misses the barrier
            WorkerDisconnected: If another worker aborted the reduction
        """
        self._slots[rank] = grad
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError as exc:
            if self._aborted:
                raise WorkerDisconnected(f"all-reduce aborted while rank {rank} was waiting") from exc
            raise AllReduceTimeout(f"rank {rank}: all-reduce barrier not reached within {self.timeout}s") from exc
        return self._result, self._stop

    def abort(self) -> None:
        """Release every waiting rank with WorkerDisconnected."""
        self._aborted = True
        self._barrier.abort()


def encode_array(values: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(values), allow_pickle=False)
    return buf.getvalue()


def decode_array(payload: bytes) -> np.ndarray:
    return np.load(io.BytesIO(payload), allow_pickle=False)


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise WorkerDisconnected(f"peer closed the connection with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, kind: MessageType, payload: bytes) -> None:
    sock.sendall(FRAME.pack(int(kind), len(payload)) + payload)


def recv_frame(sock: socket.socket) -> Tuple[MessageType, bytes]:
    """Read one frame.

    Raises:
        WorkerDisconnected: On EOF or an unknown message type
    """
    kind, length = FRAME.unpack(_recv_exact(sock, FRAME.size))
    try:
        kind = MessageType(kind)
    except ValueError as exc:
        raise WorkerDisconnected(f"unknown message type {kind}") from exc
    return kind, _recv_exact(sock, length)


class SocketAllReduceServer:
    """Coordinator for learners in separate processes.

    Each client opens with a PARAMS frame carrying its rank (rank 0 also
    carries the initial parameters, which are forwarded to everyone). Then
    every round collects one GRAD frame per rank and answers each with the
    rank-ordered mean and the summed progress counters. The server exits
    cleanly once every rank has sent CLOSE at a round boundary.
    """

    def __init__(self, num_workers: int, host: str = "127.0.0.1", port: int = 0, timeout: float = 120.0):
        self.num_workers = num_workers
        self.timeout = timeout
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(timeout)
        self._thread: Optional[threading.Thread] = None
        self._stop = threading.Event()
        self._conns: List[socket.socket] = []
        self.error: Optional[BaseException] = None
        self.rounds = 0

    @property
    def address(self) -> Tuple[str, int]:
        return self._listener.getsockname()[:2]

    def start(self) -> "SocketAllReduceServer":
        self._thread = threading.Thread(target=self._serve, name="allreduce-server", daemon=True)
        self._thread.start()
        return self

    def wait(self, timeout: Optional[float] = None) -> bool:
        """Block until every rank has closed; True if the server finished."""
        if self._thread is not None:
            self._thread.join(timeout=timeout)
        return self._thread is not None and not self._thread.is_alive()

    def stop(self) -> None:
        self._stop.set()
        self._listener.close()
        for conn in self._conns:
            conn.close()
        if self._thread is not None:
            self._thread.join(timeout=self.timeout)

    def _accept(self) -> List[socket.socket]:
        conns: Dict[int, socket.socket] = {}
        initial = b""
        while len(conns) < self.num_workers:
            conn, _ = self._listener.accept()
            conn.settimeout(self.timeout)
            self._conns.append(conn)
            kind, payload = recv_frame(conn)
            if kind != MessageType.PARAMS:
                raise WorkerDisconnected(f"expected a PARAMS handshake, got {kind.name}")
            (rank,) = RANK.unpack_from(payload)
            if rank in conns or rank >= self.num_workers:
                raise WorkerDisconnected(f"invalid or duplicate rank {rank}")
            conns[rank] = conn
            if rank == 0:
                initial = payload[RANK.size:]
        ordered = [conns[r] for r in range(self.num_workers)]
        for conn in ordered:
            send_frame(conn, MessageType.PARAMS, initial)
        logger.info(f"All-reduce server connected {self.num_workers} workers")
        return ordered

    def _round(self, conns: List[socket.socket]) -> bool:
        """Serve one round; False once every rank has closed."""
        grads, progress, closed = [], 0, []
        for rank, conn in enumerate(conns):
            kind, payload = recv_frame(conn)
            if kind == MessageType.CLOSE:
                closed.append(rank)
                continue
            if kind != MessageType.GRAD:
                raise WorkerDisconnected(f"rank {rank} sent {kind.name} instead of GRAD")
            _, steps = GRAD_HEADER.unpack_from(payload)
            progress += steps
            grads.append(decode_array(payload[GRAD_HEADER.size:]))
        if len(closed) == len(conns):
            return False
        if closed:
            raise WorkerDisconnected(f"rank(s) {closed} closed in the middle of round {self.rounds}")
        reply = PROGRESS.pack(progress) + encode_array(allreduce_mean(grads))
        for conn in conns:
            send_frame(conn, MessageType.GRAD, reply)
        self.rounds += 1
        return True

    def _serve(self) -> None:
        try:
            conns = self._accept()
            while not self._stop.is_set() and self._round(conns):
                pass
            logger.info(f"All-reduce server finished after {self.rounds} rounds")
        except (OSError, WorkerDisconnected, ValueError) as exc:
            if not self._stop.is_set():
                self.error = exc
                logger.error(f"All-reduce server stopped: {exc}")
        finally:
            for conn in self._conns:
                conn.close()


def _open_connection(address: Tuple[str, int], timeout: float) -> socket.socket:
    """Connect, retrying while the server is not listening yet."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection(address, timeout=timeout)
        except ConnectionRefusedError as exc:
            if time.monotonic() >= deadline:
                raise AllReduceTimeout(f"no all-reduce server at {address[0]}:{address[1]} within {timeout}s") from exc
            time.sleep(CONNECT_RETRY_S)


class SocketAllReduceClient:
    """One learner's connection to a SocketAllReduceServer.

    allreduce has the InProcessAllReduce signature. The stop decision is
    taken from the summed progress the server returns, so every rank stops
    in the same round.
    """

    def __init__(
        self,
        address: Tuple[str, int],
        rank: int,
        timeout: float = 120.0,
        progress: Optional[Callable[[], int]] = None,
        budget: Optional[int] = None,
    ):
        """Open the connection.

        Args:
            address: Server (host, port)
            rank: This learner's rank
            timeout: Seconds to wait for the server or a reply
            progress: This rank's monotone work counter, sent with every gradient
            budget: Stop once the counters summed over all ranks reach it
        """
        self.rank = rank
        self.timeout = timeout
        self.budget = budget
        self.total_progress = 0
        self._progress = progress or (lambda: 0)
        self._sock = _open_connection(address, timeout)

    def connect(self, params: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        """Handshake; returns rank 0's initial parameters (None if it sent none)."""
        body = encode_array(params) if params is not None and self.rank == 0 else b""
        send_frame(self._sock, MessageType.PARAMS, RANK.pack(self.rank) + body)
        kind, payload = self._receive()
        if kind != MessageType.PARAMS:
            raise WorkerDisconnected(f"expected PARAMS from the server, got {kind.name}")
        return decode_array(payload) if payload else None

    def allreduce(self, rank: int, grad: np.ndarray) -> Tuple[np.ndarray, bool]:
        """Send this rank's gradient; returns (mean gradient, stop decision).

        Raises:
            ValueError: If rank is not the rank this client connected as
            AllReduceTimeout: If the round does not complete in time
            WorkerDisconnected: If the server or a peer went away
        """
        if rank != self.rank:
            raise ValueError(f"client for rank {self.rank} cannot reduce for rank {rank}")
        header = GRAD_HEADER.pack(self.rank, int(self._progress()))
        send_frame(self._sock, MessageType.GRAD, header + encode_array(grad))
        kind, payload = self._receive()
        if kind != MessageType.GRAD:
            raise WorkerDisconnected(f"expected GRAD from the server, got {kind.name}")
        (self.total_progress,) = PROGRESS.unpack_from(payload)
        stop = self.budget is not None and self.total_progress >= self.budget
        return decode_array(payload[PROGRESS.size:]), stop

    def _receive(self) -> Tuple[MessageType, bytes]:
        try:
            return recv_frame(self._sock)
        except socket.timeout as exc:
            raise AllReduceTimeout(f"rank {self.rank}: no reply within {self.timeout}s") from exc

    def close(self) -> None:
        """Leave at a round boundary so the server can finish cleanly."""
        try:
            send_frame(self._sock, MessageType.CLOSE, RANK.pack(self.rank))
        except OSError:
            pass
        self._sock.close()

    def abort(self) -> None:
        """Drop the connection; the server and every peer see WorkerDisconnected."""
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
