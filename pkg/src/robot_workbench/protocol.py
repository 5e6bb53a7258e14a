"""Line-delimited JSON wire protocol between workbench clients and the robot server.

One message per line, UTF-8. Every message is an object with a "type" field;
client messages may carry an "id" that the matching ack/error echoes as "ref".
"""

from __future__ import annotations

import json

PROTOCOL_VERSION = 1

CLIENT_TYPES = (
    "hello",
    "get_workspace",
    "set_workspace",
    "set_joint_target",
    "jog",
    "execute_trajectory",
    "gripper",
    "stop",
    "reset",
    "plan",
)

SERVER_TYPES = (
    "welcome",
    "state",
    "ack",
    "error",
    "execution_done",
    "plan_done",
)


class ProtocolError(ValueError):
    """Byte stream does not decode to a protocol message."""


def encode_message(msg: dict) -> bytes:
    try:
        line = json.dumps(msg, allow_nan=False, separators=(",", ":"))
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"message not serializable: {exc}") from exc
    return line.encode("utf-8") + b"\n"


def decode_message(line) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="replace")
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc}") from exc
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise ProtocolError("message must be an object with a string 'type'")
    return msg


def ack(ref, **extra) -> dict:
    return {"type": "ack", "ref": ref, **extra}


def error(ref, code: str, text: str) -> dict:
    return {"type": "error", "ref": ref, "code": code, "text": text}
