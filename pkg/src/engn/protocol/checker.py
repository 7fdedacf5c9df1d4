"""Trace invariant checker.

The checker never raises; it returns a list of :class:`Violation`.  Rules:

TRACE-1  seq strictly increases
TRACE-2  relays (``via``) are transport functions only
TRACE-3  a successful SetupResponse follows a ResourceAllocConfirm for its session
ENGN-1   transport control and end users never exchange messages
ENGN-2   the TCF/TF interface carries resource-control kinds only
ENGN-3   end-user signaling runs over a session that is allocated at that point
NGN-1    built-in end-user signaling terminates at TCF and is relayed by TFs
MOB-1    MobilityRegister only after a successful AuthResult for that user
MOB-2    HandoverDecision comes from the variant's decision point,
         HandoverTrigger from the end user
MOB-3    at HandoverComplete every moved session has exactly one allocated
         path and the old-only hops were released first
"""

from __future__ import annotations

from dataclasses import dataclass

from engn.model import Role, Variant
from engn.protocol.messages import RESOURCE_CONTROL, MessageKind as K, role_of


@dataclass(frozen=True)
class Violation:
    rule: str
    seq: int
    detail: str

    def to_json(self):
        return {"rule": self.rule, "seq": self.seq, "detail": self.detail}


def _ok(m):
    return bool(m.payload.get("ok", True))


def check_trace_invariants(trace, variant=None) -> list:
    """Check a trace (or a plain message list) against the rules of ``variant``."""
    messages = getattr(trace, "messages", trace)
    if variant is None:
        variant = trace.variant
    variant = Variant.parse(variant)
    out = []

    def flag(rule, m, detail):
        out.append(Violation(rule, m.seq, detail))

    last_seq = None
    confirmed = set()           # sessions with a ResourceAllocConfirm seen
    allocated = set()           # sessions allocated (per TCF responses)
    authenticated = set()       # users with AuthResult(ok)
    paths = {}                  # session -> list of allocated paths
    released = set()            # (session, tf) pairs released so far
    pending_moves = {}          # user -> moves of the last completed resource handover

    def apply_moves(lid, moves):
        for sid, mv in moves.items():
            sid = int(sid)
            live = [p for p in paths.get(sid, []) if p != tuple(mv["old"])]
            paths[sid] = live + [tuple(mv["new"])]
        pending_moves[lid] = (moves, set(released))

    for m in messages:
        src, dst = role_of(m.src), role_of(m.dst)
        roles = {src, dst}
        if last_seq is not None and m.seq <= last_seq:
            flag("TRACE-1", m, f"seq {m.seq} after {last_seq}")
        last_seq = m.seq
        bad_via = [n for n in m.via if role_of(n) is not Role.TF]
        if bad_via:
            flag("TRACE-2", m, f"relay through non-TF nodes {bad_via}")

        if m.kind is K.ResourceAllocConfirm:
            confirmed.add(m.session_id)
        if m.kind is K.ResourceReleaseCommand:
            released.add((m.session_id, m.dst))
        if m.kind is K.SetupResponse and _ok(m) and m.session_id not in confirmed:
            flag("TRACE-3", m, f"no ResourceAllocConfirm precedes setup of session {m.session_id}")

        # session bookkeeping from the transport control's answers
        if src is Role.TCF and m.kind is K.ResourceAllocResponse and _ok(m):
            op = m.payload.get("op")
            if op == "allocate":
                allocated.add(m.session_id)
                paths[m.session_id] = [tuple(m.payload.get("path") or ())]
            elif op == "release":
                allocated.discard(m.session_id)
                paths.pop(m.session_id, None)
            elif op == "handover":
                apply_moves(m.payload.get("user"), m.payload.get("moves") or {})
        if m.kind is K.SetupResponse and src is Role.TCF and _ok(m) and "path" in m.payload:
            paths[m.session_id] = [tuple(m.payload["path"])]
        if m.kind is K.AuthResult and _ok(m) and m.end_user() is not None:
            authenticated.add(m.end_user())

        if variant is Variant.ENGN:
            if roles == {Role.TCF, Role.EU}:
                flag("ENGN-1", m, f"{m.kind.value} between {m.src} and {m.dst}")
            if roles == {Role.TCF, Role.TF} and m.kind not in RESOURCE_CONTROL:
                flag("ENGN-2", m, f"{m.kind.value} on the TCF/TF interface")
            if m.is_end_user_signaling() and m.kind is not K.SetupRequest:
                rejected_setup = m.kind is K.SetupResponse and not _ok(m)
                if not rejected_setup and m.session_id not in allocated:
                    flag("ENGN-3", m, f"{m.kind.value} outside an allocated session "
                                      f"(session {m.session_id})")
        else:
            if m.is_end_user_signaling() and Role.APP not in roles:
                other = dst if src is Role.EU else src
                if other is not Role.TCF:
                    flag("NGN-1", m, f"{m.kind.value} terminates at {other.value}, not TCF")
                elif not m.via:
                    flag("NGN-1", m, f"{m.kind.value} not relayed through a TF")

        if m.kind is K.MobilityRegister:
            if m.end_user() not in authenticated:
                flag("MOB-1", m, f"user {m.end_user()} registers mobility before authentication")
        if m.kind is K.HandoverDecision:
            want = Role.MSSSUF if variant is Variant.ENGN else Role.TCF
            if src is not want:
                flag("MOB-2", m, f"HandoverDecision emitted by {m.src}, expected {want.value}")
        if m.kind is K.HandoverTrigger and src is not Role.EU:
            flag("MOB-2", m, f"HandoverTrigger emitted by {m.src}, expected the end user")
        if m.kind is K.HandoverComplete:
            lid = m.end_user()
            if "moves" in m.payload:
                # NGN: the transport control moved the paths itself
                apply_moves(lid, m.payload["moves"])
            if lid not in pending_moves:
                flag("MOB-3", m, "HandoverComplete without a committed resource handover")
                continue
            moves, released_then = pending_moves.pop(lid)
            for sid, mv in moves.items():
                sid = int(sid)
                if len(paths.get(sid, [])) != 1:
                    flag("MOB-3", m, f"session {sid} has {len(paths.get(sid, []))} allocated paths")
                for tf in mv["old"]:
                    if tf not in mv["new"] and (sid, tf) not in released_then:
                        flag("MOB-3", m, f"old hop {tf} of session {sid} not released before completion")
    return out


def violation_ids(report) -> set:
    return {v.rule for v in report}
