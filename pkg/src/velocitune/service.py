"""Line-delimited JSON sidecar protocol for driving the scheduler externally.

An external training loop talks to the scheduler across a process boundary:
one JSON object per line, one response per request, over stdio (default) or
a local Unix socket. The server only ever sees losses and returns weights;
it holds no model state.

Message kinds (requests):

    init            declare domain order, initial/target losses, optional
                    initial weights (uniform when omitted), update interval,
                    and optionally the policy kind. Must come first.
    report_losses   per-domain losses at an update step (step % m == 0,
                    strictly increasing). Answered with a ``weights`` message.
    checkpoint      persist the scheduler state to the given path.

Responses are ``ack``, ``weights``, or ``error``; every response echoes the
request's ``id`` and the current ``step``. Protocol violations and malformed
input produce an ``error`` response naming the expected kind, and the session
stays usable. The server shuts down on end-of-stream.
"""

from __future__ import annotations

import json
import os
import socket
import sys
from typing import TextIO

from .checkpoint import save_checkpoint
from .core import LossVector, WeightVector, normalize
from .errors import OrderingError, ProtocolError, VelocituneError
from .scheduler import DEFAULT_UPDATE_INTERVAL, Policy, SchedulerState, scheduler_step

REQUEST_KINDS = ("init", "report_losses", "checkpoint")


class ServiceSession:
    """Sequential request handler around one SchedulerState."""

    def __init__(
        self,
        policy: Policy,
        update_interval: int = DEFAULT_UPDATE_INTERVAL,
        state: SchedulerState | None = None,
    ):
        self.policy = policy
        self.update_interval = update_interval
        self.state = state  # None until init (or resume)

    # -- dispatch -----------------------------------------------------------

    def handle_line(self, line: str) -> dict:
        """Parse one request line and produce exactly one response dict."""
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._error(None, None, f"malformed JSON: {exc.msg}")
        if not isinstance(message, dict):
            return self._error(None, None, "message must be a JSON object")
        msg_id = message.get("id")
        step = message.get("step")
        kind = message.get("kind")
        try:
            if kind == "init":
                return self._handle_init(message)
            if kind == "report_losses":
                return self._handle_report(message)
            if kind == "checkpoint":
                return self._handle_checkpoint(message)
            return self._error(
                msg_id, step, f"unknown kind {kind!r}", expected="|".join(REQUEST_KINDS)
            )
        except (ProtocolError, OrderingError) as exc:
            return self._error(msg_id, step, str(exc), expected="report_losses")
        except VelocituneError as exc:
            return self._error(msg_id, step, str(exc))
        except Exception as exc:  # never crash the session on bad input
            return self._error(msg_id, step, f"{type(exc).__name__}: {exc}")

    def _error(self, msg_id, step, message: str, expected: str | None = None) -> dict:
        out = {"kind": "error", "id": msg_id, "step": step, "message": message}
        if expected is None:
            expected = "init" if self.state is None else "report_losses|checkpoint"
        out["expected"] = expected
        return out

    # -- handlers -----------------------------------------------------------

    def _handle_init(self, message: dict) -> dict:
        msg_id = message.get("id")
        if self.state is not None:
            return self._error(
                msg_id, self.state.step, "session already initialized",
                expected="report_losses|checkpoint",
            )
        domains = message.get("domains")
        if not isinstance(domains, list) or not domains:
            return self._error(msg_id, None, "init requires a non-empty 'domains' list", "init")
        k = len(domains)
        policy = self.policy
        if message.get("policy") is not None:
            policy = Policy(
                kind=str(message["policy"]),
                smoothing=float(message.get("smoothing", self.policy.smoothing)),
            )

        def vector(field: str, ctor, required: bool):
            value = message.get(field)
            if value is None:
                if required:
                    raise ProtocolError(f"init requires '{field}' for policy {policy.kind!r}")
                return None
            if not isinstance(value, list) or len(value) != k:
                raise ProtocolError(f"init field '{field}' must list {k} values")
            return ctor(value)

        try:
            init_losses = vector("init_losses", LossVector, policy.needs_init_losses)
            target_losses = vector("target_losses", LossVector, policy.needs_targets)
            weights = vector("weights", WeightVector, required=False)
        except (ProtocolError, VelocituneError) as exc:
            return self._error(msg_id, None, str(exc), "init")
        if weights is None:
            weights = normalize([1.0] * k)
        interval = int(message.get("m", self.update_interval))
        try:
            self.state = SchedulerState(
                policy=policy,
                weights=weights,
                step=0,
                update_interval=interval,
                init_losses=init_losses,
                target_losses=target_losses if policy.needs_targets else None,
            )
        except (ValueError, VelocituneError) as exc:
            return self._error(msg_id, None, str(exc), "init")
        return {"kind": "ack", "id": msg_id, "step": 0}

    def _handle_report(self, message: dict) -> dict:
        msg_id = message.get("id")
        if self.state is None:
            return self._error(msg_id, message.get("step"), "session not initialized", "init")
        step = message.get("step")
        if not isinstance(step, int):
            raise ProtocolError("report_losses requires an integer 'step'")
        losses_raw = message.get("losses")
        if not isinstance(losses_raw, list) or len(losses_raw) != len(self.state.weights):
            raise ProtocolError(
                f"report_losses must list {len(self.state.weights)} losses"
            )
        losses = LossVector(losses_raw)
        self.state, weights = scheduler_step(self.state, step, losses)
        return {"kind": "weights", "id": msg_id, "step": step, "weights": list(weights.values)}

    def _handle_checkpoint(self, message: dict) -> dict:
        msg_id = message.get("id")
        if self.state is None:
            return self._error(msg_id, message.get("step"), "session not initialized", "init")
        path = message.get("path")
        if not isinstance(path, str) or not path:
            raise ProtocolError("checkpoint requires a 'path' string")
        save_checkpoint(path, self.state, self.state.step)
        return {"kind": "ack", "id": msg_id, "step": self.state.step, "path": path}


def serve_stream(session: ServiceSession, reader: TextIO, writer: TextIO) -> None:
    """Serve one request per input line until end-of-stream."""
    for line in reader:
        line = line.strip()
        if not line:
            continue
        response = session.handle_line(line)
        writer.write(json.dumps(response) + "\n")
        writer.flush()


def serve_stdio(session: ServiceSession) -> None:
    serve_stream(session, sys.stdin, sys.stdout)


def serve_socket(make_session, path: str) -> None:
    """Accept local-socket clients sequentially, one fresh session each."""
    if os.path.exists(path):
        os.unlink(path)
    server = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    try:
        server.bind(path)
        server.listen(1)
        while True:
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("r", encoding="utf-8")
                writer = conn.makefile("w", encoding="utf-8")
                serve_stream(make_session(), reader, writer)
    finally:
        server.close()
        if os.path.exists(path):
            os.unlink(path)
