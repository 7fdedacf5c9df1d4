"""Message kinds, the message record and JSON-lines trace files."""

from __future__ import annotations

import enum
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from engn.model import Role


class MessageKind(str, enum.Enum):
    SetupRequest = "SetupRequest"
    SetupResponse = "SetupResponse"
    ResourceAllocRequest = "ResourceAllocRequest"
    ResourceAllocCommand = "ResourceAllocCommand"
    ResourceAllocConfirm = "ResourceAllocConfirm"
    ResourceAllocResponse = "ResourceAllocResponse"
    ResourceReleaseCommand = "ResourceReleaseCommand"
    RegistrationRequest = "RegistrationRequest"
    AuthChallenge = "AuthChallenge"
    AuthResponse = "AuthResponse"
    AuthResult = "AuthResult"
    IpConfigAssign = "IpConfigAssign"
    NetworkConfigInfo = "NetworkConfigInfo"
    MobilityRegister = "MobilityRegister"
    LocationBindingUpdate = "LocationBindingUpdate"
    LocationBindingAck = "LocationBindingAck"
    CandidateLinkList = "CandidateLinkList"
    HandoverPolicyInfo = "HandoverPolicyInfo"
    HandoverRequest = "HandoverRequest"
    HandoverDecision = "HandoverDecision"
    HandoverTrigger = "HandoverTrigger"
    HandoverComplete = "HandoverComplete"
    ProfileUpdate = "ProfileUpdate"
    GenericSignaling = "GenericSignaling"
    DataPayload = "DataPayload"


K = MessageKind

RESOURCE_CONTROL = frozenset({K.ResourceAllocCommand, K.ResourceAllocConfirm, K.ResourceReleaseCommand})
DATA = frozenset({K.DataPayload})

# Kinds that count as end-user signaling when one endpoint is an end user.
SIGNALING_KINDS = frozenset({
    K.SetupRequest, K.SetupResponse,
    K.RegistrationRequest, K.AuthChallenge, K.AuthResponse, K.AuthResult,
    K.IpConfigAssign, K.NetworkConfigInfo,
    K.MobilityRegister, K.LocationBindingUpdate, K.LocationBindingAck,
    K.CandidateLinkList, K.HandoverPolicyInfo,
    K.HandoverRequest, K.HandoverDecision, K.HandoverTrigger, K.HandoverComplete,
})

# Action kind charged when a message is processed; the performance model
# looks service rates up by these names.
ACTION_OF_KIND = {
    K.SetupRequest: "setup",
    K.SetupResponse: "setup",
    K.ResourceAllocRequest: "resource",
    K.ResourceAllocCommand: "resource",
    K.ResourceAllocConfirm: "resource",
    K.ResourceAllocResponse: "resource",
    K.ResourceReleaseCommand: "resource",
    K.RegistrationRequest: "auth",
    K.AuthChallenge: "auth",
    K.AuthResponse: "auth",
    K.AuthResult: "auth",
    K.IpConfigAssign: "config",
    K.NetworkConfigInfo: "config",
    K.MobilityRegister: "mobility",
    K.LocationBindingUpdate: "mobility",
    K.LocationBindingAck: "mobility",
    K.ProfileUpdate: "mobility",
    K.CandidateLinkList: "handover",
    K.HandoverPolicyInfo: "handover",
    K.HandoverRequest: "handover",
    K.HandoverDecision: "handover",
    K.HandoverTrigger: "handover",
    K.HandoverComplete: "handover",
    K.GenericSignaling: "signaling",
    K.DataPayload: "data",
}


def role_of(node: str) -> Role:
    """Role of a node id such as ``EU-3``, ``TF-1`` or ``NASSF``."""
    if node.startswith("EU-"):
        return Role.EU
    if node.startswith("TF-"):
        return Role.TF
    return Role(node)


def user_node(lid: int) -> str:
    return f"EU-{lid}"


def user_of(node: str) -> int | None:
    return int(node[3:]) if node.startswith("EU-") else None


@dataclass(frozen=True)
class Message:
    seq: int
    kind: MessageKind
    src: str
    dst: str
    via: tuple = ()
    session_id: int | None = None
    payload: dict = field(default_factory=dict)
    logical_time: int = 0

    def endpoints(self):
        return role_of(self.src), role_of(self.dst)

    def end_user(self) -> int | None:
        """Logical id of the end user at either end, if any."""
        lid = user_of(self.src)
        return lid if lid is not None else user_of(self.dst)

    def is_end_user_signaling(self) -> bool:
        return self.kind in SIGNALING_KINDS and self.end_user() is not None

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind.value,
            "src": self.src,
            "dst": self.dst,
            "via": list(self.via),
            "sessionId": self.session_id,
            "logicalTime": self.logical_time,
            "payload": self.payload,
        }

    @classmethod
    def from_json(cls, obj) -> "Message":
        return cls(
            seq=obj["seq"],
            kind=MessageKind(obj["kind"]),
            src=obj["src"],
            dst=obj["dst"],
            via=tuple(obj.get("via") or ()),
            session_id=obj.get("sessionId"),
            payload=obj.get("payload") or {},
            logical_time=obj.get("logicalTime", 0),
        )


def canonical_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dumps_jsonl(messages) -> str:
    return "".join(canonical_line(m.to_json()) + "\n" for m in messages)


def loads_jsonl(text: str) -> list:
    return [Message.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path, messages) -> None:
    atomic_write_text(path, dumps_jsonl(messages))


def read_jsonl(path) -> list:
    return loads_jsonl(Path(path).read_text(encoding="utf-8"))
