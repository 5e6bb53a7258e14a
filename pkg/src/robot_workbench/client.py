"""Blocking client for the workbench wire protocol.

A reader thread routes acks/errors to the issuing request and queues
asynchronous traffic (state stream, execution_done, plan_done) for polling.
"""

from __future__ import annotations

import socket
import threading
import time
from collections import deque
from queue import Empty, Queue
from typing import Callable, Optional

from . import protocol


class ServerError(RuntimeError):
    """An error reply from the server."""

    def __init__(self, code: str, text: str):
        super().__init__(f"{code}: {text}")
        self.code = code
        self.text = text


class ConnectionClosed(RuntimeError):
    pass


class WorkbenchClient:
    def __init__(self, host: str, port: int, name: str = "client", timeout: float = 10.0):
        self.name = name
        self.timeout = timeout
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._next_id = 0
        self._pending: dict[int, Queue] = {}
        self._lock = threading.Lock()
        self.states: deque = deque(maxlen=4096)
        self.events: Queue = Queue()
        self.welcome: Optional[dict] = None
        self.latest_state: Optional[dict] = None
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # -- transport ---------------------------------------------------------

    def _read_loop(self):
        buf = b""
        while not self._closed.is_set():
            try:
                chunk = self._sock.recv(65536)
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if not line.strip():
                    continue
                try:
                    msg = protocol.decode_message(line)
                except protocol.ProtocolError:
                    continue
                self._route(msg)
        self._closed.set()
        with self._lock:
            for queue in self._pending.values():
                queue.put(None)

    def _route(self, msg: dict):
        mtype = msg.get("type")
        if mtype in ("ack", "error") and msg.get("ref") is not None:
            with self._lock:
                queue = self._pending.pop(msg["ref"], None)
            if queue is not None:
                queue.put(msg)
                return
        if mtype == "welcome":
            self.welcome = msg
        elif mtype == "state":
            self.latest_state = msg
            self.states.append(msg)
        self.events.put(msg)

    def send(self, msg_type: str, **fields) -> int:
        with self._lock:
            self._next_id += 1
            msg_id = self._next_id
            self._pending[msg_id] = Queue()
        msg = {"type": msg_type, "id": msg_id, **fields}
        self._sock.sendall(protocol.encode_message(msg))
        return msg_id

    def request(self, msg_type: str, timeout: Optional[float] = None, **fields) -> dict:
        """Send and wait for the matching ack; raises ServerError on an error reply."""
        msg_id = self.send(msg_type, **fields)
        with self._lock:
            queue = self._pending.get(msg_id)
        if queue is None:
            raise ConnectionClosed("connection closed")
        try:
            reply = queue.get(timeout=timeout or self.timeout)
        except Empty as exc:
            raise TimeoutError(f"no reply to {msg_type} within timeout") from exc
        if reply is None:
            raise ConnectionClosed("connection closed while waiting for reply")
        if reply["type"] == "error":
            raise ServerError(reply.get("code", "unknown"), reply.get("text", ""))
        return reply

    def close(self):
        self._closed.set()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    # -- conveniences --------------------------------------------------------

    def hello(self) -> dict:
        reply = self.request("hello", client_name=self.name)
        deadline = time.monotonic() + self.timeout
        while self.welcome is None and time.monotonic() < deadline:
            time.sleep(0.005)
        if self.welcome is None:
            raise TimeoutError("no welcome received")
        return reply

    def wait_event(
        self, predicate: Callable[[dict], bool], timeout: Optional[float] = None
    ) -> dict:
        deadline = time.monotonic() + (timeout or self.timeout)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("event not observed within timeout")
            try:
                msg = self.events.get(timeout=remaining)
            except Empty:
                continue
            if predicate(msg):
                return msg

    def wait_execution_done(self, name: str, timeout: Optional[float] = None) -> dict:
        return self.wait_event(
            lambda m: m.get("type") == "execution_done" and m.get("name") == name, timeout
        )

    def wait_converged(self, q_target, tol: float = 1e-3, timeout: Optional[float] = None) -> dict:
        def settled(msg: dict) -> bool:
            if msg.get("type") != "state":
                return False
            return max(abs(a - b) for a, b in zip(msg["q"], q_target)) < tol

        return self.wait_event(settled, timeout)
