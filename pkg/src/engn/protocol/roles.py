"""Per-role state machines.

Each node owns a :class:`RoleState`.  :func:`handle_message` is a pure
transition: it never mutates its input state and always returns a fresh
state plus the messages the node emits.  Emitted messages carry ``seq=0``;
the driver in :mod:`engn.protocol.world` numbers them.

Tables inside ``RoleState.data`` are copied on write, and the values
stored in them are never mutated in place, so old states stay valid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from engn import errors
from engn.model import (AuthState, EndUserRecord, MobilityMode, RegState, ResourceState,
                        Role, Session, Variant)
from engn.protocol.messages import Message, MessageKind as K, role_of, user_node

DNS_SERVER = "192.0.2.53"


def permanent_ip(lid: int) -> str:
    return f"100.64.{lid // 256 % 256}.{lid % 256}"


def temporary_ip(ap_index: int, lid: int) -> str:
    return f"10.{ap_index}.{lid // 256 % 256}.{lid % 256}"


@dataclass(frozen=True)
class Binding:
    temporary_ip: str
    attachment_point: str
    epoch: int


@dataclass(frozen=True)
class Env:
    """Static facts every node may consult."""

    variant: Variant
    topology: object
    qos: float = 1.0


@dataclass(frozen=True)
class RoleState:
    node: str
    env: Env
    clock: int = 0
    data: dict = None

    @property
    def role(self) -> Role:
        return role_of(self.node)

    def get(self, table, key=None, default=None):
        tbl = (self.data or {}).get(table, {})
        if key is None:
            return tbl
        return tbl.get(key, default)


def initial_state(node: str, env: Env, **extra) -> RoleState:
    data = {"users": {}, "pending": {}, "counters": {}}
    data.update(extra)
    return RoleState(node, env, 0, data)


class _Step:
    """Copy-on-write draft of a role state plus an outbox."""

    def __init__(self, state: RoleState, incoming: Message | None):
        self.state = state
        self.node = state.node
        self.env = state.env
        self.clock = state.clock
        if incoming is not None:
            self.clock = max(self.clock, incoming.logical_time)
        self.clock += 1
        self.data = dict(state.data or {})
        self._copied = set()
        self.out = []

    def table(self, name) -> dict:
        if name not in self._copied:
            self.data[name] = dict(self.data.get(name, {}))
            self._copied.add(name)
        return self.data[name]

    def view(self, name) -> dict:
        return self.data.get(name, {})

    def next_id(self, counter: str) -> int:
        counters = self.table("counters")
        counters[counter] = counters.get(counter, 0) + 1
        return counters[counter]

    def txn(self) -> str:
        return f"{self.node}#{self.next_id('txn')}"

    def send(self, kind, dst, session=None, via=(), **payload):
        self.clock += 1
        self.out.append(Message(0, kind, self.node, dst, tuple(via), session, payload, self.clock))

    def path(self, ap) -> tuple:
        return self.env.topology.path(ap)

    def result(self):
        return RoleState(self.node, self.env, self.clock, self.data), self.out


def _unexpected(state, msg, why=""):
    detail = f" ({why})" if why else ""
    return errors.UnexpectedMessage(f"{state.node} cannot accept {msg.kind.value} from {msg.src}{detail}")


# -- end user ---------------------------------------------------------------

def _eu_record(step) -> EndUserRecord:
    return step.data["record"]


def _eu_set(step, **changes):
    step.data["record"] = replace(step.data["record"], **changes)


def _eu_path(step):
    return step.path(_eu_record(step).attachment_point)


def eu_intent(state: RoleState, intent: str, **args):
    """User-initiated action; returns ``(state', emitted)`` like a transition."""
    step = _Step(state, None)
    rec = _eu_record(step)
    lid = rec.logical_id
    variant = step.env.variant
    step.data["outcome"] = None
    if intent == "attach":
        peer = "NASSF" if variant is Variant.ENGN else "TCF"
        step.table("expect")[peer] = "attach"
        step.send(K.SetupRequest, peer, via=_eu_path(step), op="attach", user=lid,
                  ap=rec.attachment_point)
    elif intent == "mobility-register":
        mode = MobilityMode(args["mode"])
        step.data["requested_mode"] = mode.value
        body = dict(user=lid, mode=mode.value, permanentIp=rec.permanent_ip,
                    temporaryIp=rec.temporary_ip, ap=rec.attachment_point)
        if variant is Variant.ENGN:
            step.table("expect")["MSSF"] = "mobility"
            step.send(K.SetupRequest, "MSSF", via=_eu_path(step), op="mobility", user=lid,
                      ap=rec.attachment_point)
        else:
            sid = step.view("sessions").get("TCF")
            step.send(K.MobilityRegister, "TCF", session=sid, via=_eu_path(step), **body)
    elif intent == "app-setup":
        step.table("expect")["APP"] = "app"
        step.send(K.SetupRequest, "APP", via=_eu_path(step), op="app", user=lid,
                  ap=rec.attachment_point)
    elif intent in ("move", "candidates"):
        peer = "MSSF" if variant is Variant.ENGN else "TCF"
        sid = step.view("sessions").get(peer)
        if intent == "candidates":
            step.data["choice"] = args.get("choice", "first")
        step.send(K.LocationBindingUpdate, peer, session=sid, via=_eu_path(step), op=intent,
                  user=lid, ap=rec.attachment_point, target=args.get("target"))
    else:
        raise ValueError(f"unknown intent {intent!r}")
    return step.result()


def _eu_handle(step, msg):
    rec = _eu_record(step)
    lid = rec.logical_id
    p = msg.payload
    kind = msg.kind
    if kind is K.SetupResponse:
        purpose = step.table("expect").pop(msg.src, None)
        if purpose is None:
            raise _unexpected(step.state, msg, "no setup outstanding")
        if not p.get("ok"):
            step.data["outcome"] = "setup-rejected"
            return
        step.table("sessions")[msg.src] = msg.session_id
        _eu_set(step, active_sessions=rec.active_sessions | {msg.session_id})
        if purpose == "attach":
            _eu_set(step, reg_state=RegState.AUTHENTICATING)
            step.send(K.RegistrationRequest, msg.src, session=msg.session_id, via=_eu_path(step),
                      user=lid, mobility=step.data.get("wants_mobility"))
        elif purpose == "mobility":
            rec = _eu_record(step)
            step.send(K.MobilityRegister, msg.src, session=msg.session_id, via=_eu_path(step),
                      user=lid, mode=step.data["requested_mode"], permanentIp=rec.permanent_ip,
                      temporaryIp=rec.temporary_ip, ap=rec.attachment_point)
        else:
            step.data["outcome"] = "app-session"
    elif kind is K.AuthChallenge:
        step.send(K.AuthResponse, msg.src, session=msg.session_id, via=_eu_path(step),
                  user=lid, nonce=p["nonce"], credential=bool(step.data.get("credential", True)))
    elif kind is K.AuthResult:
        if p.get("ok"):
            _eu_set(step, auth_state=AuthState.AUTHENTICATED)
        else:
            sessions = step.table("sessions")
            sid = sessions.pop(msg.src, None)
            _eu_set(step, reg_state=RegState.DETACHED, auth_state=AuthState.UNAUTHENTICATED,
                    temporary_ip=None, active_sessions=rec.active_sessions - {sid})
            step.data["outcome"] = "auth-failed"
    elif kind is K.IpConfigAssign:
        perm = rec.permanent_ip or p["permanentIp"]
        _eu_set(step, reg_state=RegState.REGISTERED, permanent_ip=perm,
                temporary_ip=p["temporaryIp"])
    elif kind is K.NetworkConfigInfo:
        step.data["netconfig"] = {"dns": p.get("dns"), "serviceContact": p.get("serviceContact")}
        step.data["outcome"] = "attached"
    elif kind is K.LocationBindingAck:
        if not p.get("ok"):
            step.data["outcome"] = "rejected:" + str(p.get("reason"))
        elif p.get("op") == "register":
            _eu_set(step, mobility_mode=MobilityMode(p["mode"]))
            step.data["outcome"] = "mobility-registered"
        else:
            _eu_set(step, temporary_ip=p["temporaryIp"], attachment_point=p["ap"])
    elif kind is K.HandoverComplete:
        step.data["outcome"] = "handover-complete"
    elif kind is K.HandoverPolicyInfo:
        step.data["policy"] = p.get("policy")
    elif kind is K.HandoverDecision:
        step.data["decision"] = p.get("target")
    elif kind is K.CandidateLinkList:
        candidates = list(p.get("candidates") or [])
        choice = step.data.get("choice", "first")
        if choice == "first":
            target = candidates[0] if candidates else None
        else:
            target = choice if choice in candidates else None
        if target is None:
            step.data["outcome"] = "declined"
            return
        step.send(K.HandoverTrigger, msg.src, session=msg.session_id, via=_eu_path(step),
                  user=lid, target=target)
    elif kind is K.DataPayload:
        pass
    else:
        raise _unexpected(step.state, msg)


# -- transport function -------------------------------------------------------

def _tf_handle(step, msg):
    p = msg.payload
    if role_of(msg.src) is not Role.TCF:
        raise _unexpected(step.state, msg, "transport functions take commands only from TCF")
    entries = step.table("entries")
    if msg.kind is K.ResourceAllocCommand:
        entries[msg.session_id] = p.get("qos", 0.0)
        step.send(K.ResourceAllocConfirm, "TCF", session=msg.session_id, op="allocate",
                  txn=p["txn"], ok=True)
    elif msg.kind is K.ResourceReleaseCommand:
        entries.pop(msg.session_id, None)
        step.send(K.ResourceAllocConfirm, "TCF", session=msg.session_id, op="release",
                  txn=p["txn"], ok=True)
    else:
        raise _unexpected(step.state, msg)


# -- transport control ----------------------------------------------------------

def _tf_load(sessions, exclude=()):
    load = {}
    for s in sessions.values():
        if s.state is ResourceState.RELEASED or s.id in exclude:
            continue
        for tf in s.path:
            load[tf] = load.get(tf, 0.0) + s.qos
    return load


def _fits(step, path, demand, load):
    topo = step.env.topology
    return all(load.get(tf, 0.0) + demand <= topo.capacity(tf) + 1e-12 for tf in path)


def _user_sessions(step, lid):
    return [s for s in step.view("sessions").values()
            if s.user == lid and s.state is ResourceState.ALLOCATED]


def _admission(step, lid, candidates):
    """Feasible candidate APs as ``[ap, load]`` pairs, best first."""
    moving = _user_sessions(step, lid)
    demand = sum(s.qos for s in moving)
    load = _tf_load(step.view("sessions"), exclude={s.id for s in moving})
    out = []
    for ap in candidates:
        path = step.path(ap)
        if _fits(step, path, demand, load):
            out.append([ap, max(load.get(tf, 0.0) for tf in path)])
    out.sort(key=lambda item: (item[1], item[0]))
    return out


def _tcf_allocate(step, lid, ap, endpoint, cont):
    path = step.path(ap)
    qos = step.env.qos
    if not _fits(step, path, qos, _tf_load(step.view("sessions"))):
        return False
    sid = step.next_id("session")
    step.table("sessions")[sid] = Session(sid, lid, endpoint, path, qos, ResourceState.REQUESTED)
    txn = step.txn()
    step.table("pending")[txn] = {"kind": "allocate", "sid": sid, "left": len(path), "cont": cont}
    for tf in path:
        step.send(K.ResourceAllocCommand, tf, session=sid, op="allocate", txn=txn, qos=qos)
    return True


def _tcf_release(step, sid, cont):
    sess = step.view("sessions")[sid]
    txn = step.txn()
    step.table("pending")[txn] = {"kind": "release", "sid": sid, "left": len(sess.path), "cont": cont}
    for tf in sess.path:
        step.send(K.ResourceReleaseCommand, tf, session=sid, op="release", txn=txn)


def _tcf_handover(step, lid, target, cont):
    """Make-before-break move of all of a user's sessions to ``target``."""
    if not _admission(step, lid, [target]):
        return False
    new_path = step.path(target)
    moves = {}
    adds, drops = [], []
    for s in _user_sessions(step, lid):
        moves[s.id] = (s.path, new_path)
        adds += [(s.id, tf) for tf in new_path if tf not in s.path]
        drops += [(s.id, tf) for tf in s.path if tf not in new_path]
    txn = step.txn()
    step.table("pending")[txn] = {"kind": "handover", "phase": "add", "left": len(adds),
                                  "drops": drops, "moves": moves, "target": target,
                                  "user": lid, "cont": cont}
    for sid, tf in adds:
        step.send(K.ResourceAllocCommand, tf, session=sid, op="allocate", txn=txn, qos=step.env.qos)
    if not adds:
        _tcf_handover_advance(step, txn)
    return True


def _tcf_handover_advance(step, txn):
    pend = dict(step.view("pending")[txn])
    if pend["phase"] == "add":
        pend["phase"], pend["left"] = "drop", len(pend["drops"])
        step.table("pending")[txn] = pend
        for sid, tf in pend["drops"]:
            step.send(K.ResourceReleaseCommand, tf, session=sid, op="release", txn=txn)
        if pend["drops"]:
            return
    # all confirmations in: commit the new paths
    sessions = step.table("sessions")
    history = list(step.data.get("released_paths", ()))
    for sid, (old, new) in pend["moves"].items():
        sessions[sid] = replace(sessions[sid], path=new)
        history.append((sid, old))
    step.data["released_paths"] = tuple(history)
    del step.table("pending")[txn]
    moves = {str(sid): {"old": list(old), "new": list(new)} for sid, (old, new) in pend["moves"].items()}
    _tcf_continue(step, pend["cont"], ok=True, moves=moves, target=pend["target"], user=pend["user"])


def _tcf_continue(step, cont, ok, **info):
    kind = cont["then"]
    if kind == "reply":
        step.send(K.ResourceAllocResponse, cont["to"], session=info.get("sid"), op=cont["op"],
                  txn=cont["txn"], user=cont["user"], ok=ok,
                  **{k: v for k, v in info.items() if k not in ("sid", "user")})
    elif kind == "ngn-setup":
        lid = cont["user"]
        sid = info.get("sid")
        step.send(K.SetupResponse, user_node(lid), session=sid if ok else None,
                  via=step.path(cont["ap"]), op="attach", user=lid, ok=ok, path=info.get("path"))
        if ok:
            users = step.table("users")
            users[lid] = {**users.get(lid, {}), "session": sid, "ap": cont["ap"]}
    elif kind == "ngn-handover":
        _ngn_finish_handover(step, cont["user"], info["target"], ok, info.get("moves"))
    elif kind == "ngn-release":
        pass
    else:  # pragma: no cover - internal bookkeeping error
        raise AssertionError(kind)


def _tcf_handle(step, msg):
    p = msg.payload
    kind = msg.kind
    variant = step.env.variant
    src_role = role_of(msg.src)
    if variant is Variant.ENGN and src_role is Role.EU:
        raise _unexpected(step.state, msg, "transport control does not signal end users")

    if kind is K.ResourceAllocRequest:
        cont = {"then": "reply", "to": msg.src, "op": p["op"], "txn": p["txn"], "user": p["user"]}
        op = p["op"]
        if op == "allocate":
            if not _tcf_allocate(step, p["user"], p["ap"], p["endpoint"], cont):
                _tcf_continue(step, cont, ok=False, reason="admission")
        elif op == "release":
            sid = p["sessionId"]
            if sid not in step.view("sessions"):
                raise _unexpected(step.state, msg, f"unknown session {sid}")
            _tcf_release(step, sid, cont)
        elif op == "admission":
            feasible = _admission(step, p["user"], p["candidates"])
            _tcf_continue(step, cont, ok=True, feasible=feasible)
        elif op == "handover":
            if not _tcf_handover(step, p["user"], p["target"], cont):
                _tcf_continue(step, cont, ok=False, target=p["target"], reason="admission")
        else:
            raise _unexpected(step.state, msg, f"unknown op {op}")
    elif kind is K.ResourceAllocConfirm:
        txn = p.get("txn")
        pend = step.view("pending").get(txn)
        if pend is None:
            raise _unexpected(step.state, msg, "no transaction outstanding")
        pend = {**pend, "left": pend["left"] - 1}
        step.table("pending")[txn] = pend
        if pend["left"] > 0:
            return
        if pend["kind"] == "handover":
            _tcf_handover_advance(step, txn)
            return
        del step.table("pending")[txn]
        sessions = step.table("sessions")
        sid = pend["sid"]
        sess = sessions[sid]
        if pend["kind"] == "allocate":
            sessions[sid] = replace(sess, state=ResourceState.ALLOCATED)
            _tcf_continue(step, pend["cont"], ok=True, sid=sid, path=list(sess.path))
        else:
            sessions[sid] = replace(sess, state=ResourceState.RELEASED)
            _tcf_continue(step, pend["cont"], ok=True, sid=sid)
    elif variant is Variant.NGN and src_role is Role.EU:
        _ngn_user_signaling(step, msg)
    else:
        raise _unexpected(step.state, msg)


# NGN: attachment and mobility control live inside the transport control.

def _ngn_via(step, lid):
    return step.path(step.view("users")[lid]["ap"])


def _ngn_user_signaling(step, msg):
    p = msg.payload
    lid = p["user"]
    eu = msg.src
    users = step.view("users")
    kind = msg.kind
    if kind is K.SetupRequest:
        if users.get(lid, {}).get("reg") == RegState.REGISTERED.value:
            raise _unexpected(step.state, msg, "already registered")
        cont = {"then": "ngn-setup", "user": lid, "ap": p["ap"]}
        if not _tcf_allocate(step, lid, p["ap"], "TCF", cont):
            step.send(K.SetupResponse, eu, via=step.path(p["ap"]), op="attach", user=lid, ok=False)
        return
    if lid not in users:
        raise _unexpected(step.state, msg, "unknown user")
    user = dict(users[lid])
    sid = user.get("session")
    via = _ngn_via(step, lid)
    if kind is K.RegistrationRequest:
        user["reg"] = RegState.AUTHENTICATING.value
        user["nonce"] = f"n{lid}-{step.next_id('nonce')}"
        step.table("users")[lid] = user
        step.send(K.AuthChallenge, eu, session=sid, via=via, user=lid, nonce=user["nonce"])
    elif kind is K.AuthResponse:
        if user.get("nonce") != p.get("nonce"):
            raise _unexpected(step.state, msg, "stale nonce")
        if p.get("credential"):
            _grant(step, user, lid, eu, sid, via)
        else:
            user.update(reg=RegState.DETACHED.value, auth=AuthState.UNAUTHENTICATED.value, session=None)
            step.table("users")[lid] = user
            step.send(K.AuthResult, eu, session=sid, via=via, user=lid, ok=False)
            _tcf_release(step, sid, {"then": "ngn-release"})
    elif kind is K.MobilityRegister:
        if user.get("reg") != RegState.REGISTERED.value:
            step.send(K.LocationBindingAck, eu, session=sid, via=via, op="register", user=lid,
                      ok=False, reason="not-authorized")
            return
        user["mode"] = p["mode"]
        step.table("users")[lid] = user
        binding = _bind(step, user["permanentIp"], user["temporaryIp"], user["ap"])
        if p["mode"] == MobilityMode.HOST_BASED.value:
            step.send(K.HandoverPolicyInfo, eu, session=sid, via=via, user=lid,
                      policy=_policy(step, user["ap"]))
        step.send(K.LocationBindingAck, eu, session=sid, via=via, op="register", user=lid, ok=True,
                  mode=p["mode"], epoch=binding.epoch, temporaryIp=binding.temporary_ip,
                  ap=binding.attachment_point)
    elif kind is K.LocationBindingUpdate:
        mode = user.get("mode")
        if p["op"] == "move":
            if mode != MobilityMode.NETWORK_BASED.value:
                step.send(K.LocationBindingAck, eu, session=sid, via=via, op="handover", user=lid,
                          ok=False, reason="mode-mismatch")
                return
            cands = [p["target"]] if p.get("target") else sorted(step.env.topology.neighbors(user["ap"]))
            feasible = _admission(step, lid, cands)
            if not feasible:
                step.send(K.LocationBindingAck, eu, session=sid, via=via, op="handover", user=lid,
                          ok=False, reason="no-feasible-target")
                return
            target = feasible[0][0]
            step.send(K.HandoverDecision, eu, session=sid, via=via, user=lid, target=target)
            _tcf_handover(step, lid, target, {"then": "ngn-handover", "user": lid})
        else:
            if mode != MobilityMode.HOST_BASED.value:
                step.send(K.LocationBindingAck, eu, session=sid, via=via, op="handover", user=lid,
                          ok=False, reason="mode-mismatch")
                return
            feasible = _admission(step, lid, sorted(step.env.topology.neighbors(user["ap"])))
            if not feasible:
                step.send(K.LocationBindingAck, eu, session=sid, via=via, op="handover", user=lid,
                          ok=False, reason="no-candidates")
                return
            user["offered"] = [ap for ap, _ in feasible]
            step.table("users")[lid] = user
            step.send(K.CandidateLinkList, eu, session=sid, via=via, user=lid, candidates=user["offered"])
    elif kind is K.HandoverTrigger:
        if p.get("target") not in (user.get("offered") or ()):
            raise _unexpected(step.state, msg, "target was not offered")
        user["offered"] = None
        step.table("users")[lid] = user
        if not _tcf_handover(step, lid, p["target"], {"then": "ngn-handover", "user": lid}):
            step.send(K.LocationBindingAck, eu, session=sid, via=via, op="handover", user=lid,
                      ok=False, reason="no-feasible-target")
    else:
        raise _unexpected(step.state, msg)


def _ngn_finish_handover(step, lid, target, ok, moves=None):
    users = step.table("users")
    user = dict(users[lid])
    sid = user.get("session")
    if not ok:
        step.send(K.LocationBindingAck, user_node(lid), session=sid, via=_ngn_via(step, lid),
                  op="handover", user=lid, ok=False, reason="no-feasible-target")
        return
    tmp = temporary_ip(step.env.topology.ap_index(target), lid)
    user.update(ap=target, temporaryIp=tmp)
    users[lid] = user
    binding = _bind(step, user["permanentIp"], tmp, target)
    via = step.path(target)
    step.send(K.LocationBindingAck, user_node(lid), session=sid, via=via, op="handover", user=lid,
              ok=True, permanentIp=user["permanentIp"], temporaryIp=tmp, ap=target, epoch=binding.epoch)
    step.send(K.HandoverComplete, user_node(lid), session=sid, via=via, user=lid, ap=target,
              moves=moves or {})


# -- shared attachment and mobility logic ------------------------------------

def _grant(step, user, lid, eu, sid, via):
    """Successful authentication: registration plus IP configuration."""
    idx = step.env.topology.ap_index(user["ap"])
    perm = user.get("permanentIp") or permanent_ip(lid)
    tmp = temporary_ip(idx, lid)
    user.update(reg=RegState.REGISTERED.value, auth=AuthState.AUTHENTICATED.value,
                permanentIp=perm, temporaryIp=tmp, nonce=None)
    step.table("users")[lid] = user
    step.send(K.AuthResult, eu, session=sid, via=via, user=lid, ok=True)
    step.send(K.IpConfigAssign, eu, session=sid, via=via, user=lid, logicalId=lid,
              permanentIp=perm, temporaryIp=tmp)
    step.send(K.NetworkConfigInfo, eu, session=sid, via=via, user=lid, dns=DNS_SERVER,
              serviceContact="sip:services.example.net")


def location_binding_update(table: dict, perm_ip: str, new_temporary_ip: str, new_ap: str) -> dict:
    """Return a new binding table with ``perm_ip`` rebound and its epoch bumped."""
    if perm_ip not in table:
        raise errors.UnknownPermanentIp(f"no binding for {perm_ip}")
    out = dict(table)
    out[perm_ip] = Binding(new_temporary_ip, new_ap, table[perm_ip].epoch + 1)
    return out


def _bind(step, perm, tmp, ap) -> Binding:
    table = step.view("bindings")
    if perm in table:
        step.data["bindings"] = location_binding_update(table, perm, tmp, ap)
    else:
        step.table("bindings")[perm] = Binding(tmp, ap, 1)
    return step.data["bindings"][perm]


def _policy(step, ap):
    return {"prefer": "lowest-load", "neighbors": sorted(step.env.topology.neighbors(ap))}


def _nassf_handle(step, msg):
    p = msg.payload
    kind = msg.kind
    users = step.view("users")
    if kind is K.SetupRequest:
        lid = p["user"]
        if users.get(lid, {}).get("reg") == RegState.REGISTERED.value:
            raise _unexpected(step.state, msg, "already registered")
        step.table("users")[lid] = {"ap": p["ap"], "reg": RegState.DETACHED.value,
                                    "permanentIp": users.get(lid, {}).get("permanentIp")}
        step.send(K.ResourceAllocRequest, "NASSSuF", op="allocate", user=lid, ap=p["ap"],
                  endpoint="NASSF", txn=step.txn())
    elif kind is K.ResourceAllocResponse:
        lid = p["user"]
        user = dict(users[lid])
        if p["op"] == "allocate":
            eu = user_node(lid)
            via = step.path(user["ap"])
            if p.get("ok"):
                user["session"] = msg.session_id
                step.table("users")[lid] = user
                step.send(K.SetupResponse, eu, session=msg.session_id, via=via, op="attach",
                          user=lid, ok=True, accessInfo={"ap": user["ap"]})
            else:
                step.send(K.SetupResponse, eu, via=via, op="attach", user=lid, ok=False,
                          reason=p.get("reason"))
        elif p["op"] == "release":
            user["session"] = None
            step.table("users")[lid] = user
    elif kind is K.RegistrationRequest:
        lid = p["user"]
        user = dict(users.get(lid, {}))
        if user.get("session") != msg.session_id or msg.session_id is None:
            raise _unexpected(step.state, msg, "not on the user's attachment session")
        user["reg"] = RegState.AUTHENTICATING.value
        user["nonce"] = f"n{lid}-{step.next_id('nonce')}"
        step.table("users")[lid] = user
        step.send(K.AuthChallenge, msg.src, session=msg.session_id, via=step.path(user["ap"]),
                  user=lid, nonce=user["nonce"])
    elif kind is K.AuthResponse:
        lid = p["user"]
        user = dict(users.get(lid, {}))
        if user.get("nonce") is None or user.get("nonce") != p.get("nonce"):
            raise _unexpected(step.state, msg, "stale nonce")
        via = step.path(user["ap"])
        if p.get("credential"):
            _grant(step, user, lid, msg.src, msg.session_id, via)
        else:
            user.update(reg=RegState.DETACHED.value, auth=AuthState.UNAUTHENTICATED.value, nonce=None)
            step.table("users")[lid] = user
            step.send(K.AuthResult, msg.src, session=msg.session_id, via=via, user=lid, ok=False)
            step.send(K.ResourceAllocRequest, "NASSSuF", op="release", user=lid,
                      sessionId=msg.session_id, txn=step.txn())
    elif kind is K.GenericSignaling and msg.src == "MSSF" and p.get("op") == "authorize":
        lid = p["user"]
        user = users.get(lid, {})
        ok = (user.get("reg") == RegState.REGISTERED.value
              and user.get("auth") == AuthState.AUTHENTICATED.value)
        step.send(K.GenericSignaling, "MSSF", op="authorized", user=lid, ok=ok,
                  permanentIp=user.get("permanentIp"))
    else:
        raise _unexpected(step.state, msg)


def _support_handle(step, msg):
    """NASSSuF and MSSSuF: mediate resource control for their signaling function."""
    p = msg.payload
    kind = msg.kind
    src_role = role_of(msg.src)
    mssf_side = step.node == "MSSSuF"
    if kind is K.ResourceAllocRequest and src_role in (Role.NASSF, Role.MSSF):
        txn = step.txn()
        step.table("pending")[txn] = {"to": msg.src, "txn": p["txn"]}
        body = {k: v for k, v in p.items() if k != "txn"}
        step.send(K.ResourceAllocRequest, "TCF", txn=txn, **body)
    elif kind is K.ResourceAllocResponse and src_role is Role.TCF:
        pend = step.view("pending").get(p["txn"])
        if pend is None:
            raise _unexpected(step.state, msg, "no transaction outstanding")
        del step.table("pending")[p["txn"]]
        if "decide" in pend or "offer" in pend:
            _msssuf_admission_result(step, pend, p)
            return
        body = {k: v for k, v in p.items() if k != "txn"}
        if p["op"] == "allocate" and p.get("ok") and "path" in p:
            body["accessInfo"] = {"path": p["path"]}
        step.send(K.ResourceAllocResponse, pend["to"], session=msg.session_id, txn=pend["txn"], **body)
    elif kind is K.ProfileUpdate and src_role is Role.MSSF and not mssf_side:
        lid = p["user"]
        step.table("users")[lid] = {"mode": p["mode"]}
        step.send(K.ProfileUpdate, "MSSF", op="ack", user=lid, identities={"logicalId": lid})
    elif mssf_side and kind is K.HandoverRequest and src_role is Role.MSSF:
        lid = p["user"]
        op = p["op"]
        if op == "execute":
            txn = step.txn()
            step.table("pending")[txn] = {"to": "MSSF", "txn": None}
            step.send(K.ResourceAllocRequest, "TCF", op="handover", user=lid, target=p["target"], txn=txn)
            return
        if op == "decide" and p.get("target"):
            cands = [p["target"]]
        else:
            cands = sorted(step.env.topology.neighbors(p["ap"]))
        txn = step.txn()
        step.table("pending")[txn] = {("decide" if op == "decide" else "offer"): True, "user": lid}
        step.send(K.ResourceAllocRequest, "TCF", op="admission", user=lid, candidates=cands, txn=txn)
    elif mssf_side and kind is K.GenericSignaling and p.get("op") == "policy":
        lid = p["user"]
        step.send(K.HandoverPolicyInfo, user_node(lid), session=p["sessionId"],
                  via=step.path(p["ap"]), user=lid, policy=_policy(step, p["ap"]))
    else:
        raise _unexpected(step.state, msg)


def _msssuf_admission_result(step, pend, p):
    lid = pend["user"]
    feasible = p.get("feasible") or []
    if "offer" in pend:
        step.send(K.GenericSignaling, "MSSF", op="candidates", user=lid,
                  candidates=[ap for ap, _ in feasible])
        return
    target = feasible[0][0] if feasible else None
    step.send(K.HandoverDecision, "MSSF", user=lid, target=target)
    if target is not None:
        txn = step.txn()
        step.table("pending")[txn] = {"to": "MSSF", "txn": None}
        step.send(K.ResourceAllocRequest, "TCF", op="handover", user=lid, target=target, txn=txn)


def _mssf_handle(step, msg):
    p = msg.payload
    kind = msg.kind
    users = step.view("users")
    lid = p.get("user")
    user = dict(users.get(lid, {}))
    eu = user_node(lid) if lid is not None else None

    def ack(ok, op, via=None, **extra):
        step.send(K.LocationBindingAck, eu, session=user.get("session"),
                  via=via or step.path(user["ap"]), op=op, user=lid, ok=ok, **extra)

    if kind is K.SetupRequest:
        user.update(ap=p["ap"], pendingSetup=True)
        step.table("users")[lid] = user
        step.send(K.ResourceAllocRequest, "MSSSuF", op="allocate", user=lid, ap=p["ap"],
                  endpoint="MSSF", txn=step.txn())
    elif kind is K.ResourceAllocResponse and p["op"] == "allocate":
        via = step.path(user["ap"])
        user["pendingSetup"] = False
        if p.get("ok"):
            user["session"] = msg.session_id
            step.table("users")[lid] = user
            step.send(K.SetupResponse, eu, session=msg.session_id, via=via, op="mobility",
                      user=lid, ok=True)
        else:
            step.table("users")[lid] = user
            step.send(K.SetupResponse, eu, via=via, op="mobility", user=lid, ok=False,
                      reason=p.get("reason"))
    elif kind is K.MobilityRegister:
        if user.get("session") is None or user["session"] != msg.session_id:
            raise _unexpected(step.state, msg, "not on the user's mobility session")
        user.update(requested=p["mode"], permanentIp=p["permanentIp"],
                    temporaryIp=p["temporaryIp"], ap=p["ap"])
        step.table("users")[lid] = user
        step.send(K.GenericSignaling, "NASSF", op="authorize", user=lid)
    elif kind is K.GenericSignaling and msg.src == "NASSF":
        if not p.get("ok"):
            ack(False, "register", reason="not-authorized")
            return
        step.send(K.ProfileUpdate, "NASSSuF", op="update", user=lid, mode=user["requested"])
    elif kind is K.ProfileUpdate and msg.src == "NASSSuF":
        mode = user.pop("requested")
        user["mode"] = mode
        step.table("users")[lid] = user
        binding = _bind(step, user["permanentIp"], user["temporaryIp"], user["ap"])
        if mode == MobilityMode.HOST_BASED.value:
            step.send(K.GenericSignaling, "MSSSuF", op="policy", user=lid, ap=user["ap"],
                      sessionId=user["session"])
        ack(True, "register", mode=mode, epoch=binding.epoch, temporaryIp=binding.temporary_ip,
            ap=binding.attachment_point)
    elif kind is K.LocationBindingUpdate:
        if user.get("session") != msg.session_id or msg.session_id is None:
            raise _unexpected(step.state, msg, "not on the user's mobility session")
        mode = user.get("mode")
        want = MobilityMode.NETWORK_BASED.value if p["op"] == "move" else MobilityMode.HOST_BASED.value
        if mode != want:
            ack(False, "handover", reason="mode-mismatch")
            return
        op = "decide" if p["op"] == "move" else "candidates"
        step.send(K.HandoverRequest, "MSSSuF", op=op, user=lid, ap=user["ap"], target=p.get("target"))
    elif kind is K.HandoverDecision and msg.src == "MSSSuF":
        if p.get("target") is None:
            ack(False, "handover", reason="no-feasible-target")
    elif kind is K.GenericSignaling and msg.src == "MSSSuF" and p.get("op") == "candidates":
        cands = list(p.get("candidates") or [])
        if not cands:
            ack(False, "handover", reason="no-candidates")
            return
        user["offered"] = cands
        step.table("users")[lid] = user
        step.send(K.CandidateLinkList, eu, session=user["session"], via=step.path(user["ap"]),
                  user=lid, candidates=cands)
    elif kind is K.HandoverTrigger:
        if p.get("target") not in (user.get("offered") or ()):
            raise _unexpected(step.state, msg, "target was not offered")
        user["offered"] = None
        step.table("users")[lid] = user
        step.send(K.HandoverRequest, "MSSSuF", op="execute", user=lid, ap=user["ap"], target=p["target"])
    elif kind is K.ResourceAllocResponse and p["op"] == "handover":
        if not p.get("ok"):
            ack(False, "handover", reason="no-feasible-target")
            return
        target = p["target"]
        tmp = temporary_ip(step.env.topology.ap_index(target), lid)
        user.update(ap=target, temporaryIp=tmp)
        step.table("users")[lid] = user
        binding = _bind(step, user["permanentIp"], tmp, target)
        via = step.path(target)
        ack(True, "handover", via=via, permanentIp=user["permanentIp"], temporaryIp=tmp, ap=target,
            epoch=binding.epoch)
        step.send(K.HandoverComplete, eu, session=user["session"], via=via, user=lid, ap=target)
    else:
        raise _unexpected(step.state, msg)


def _app_handle(step, msg):
    p = msg.payload
    lid = p.get("user")
    if msg.kind is K.SetupRequest and role_of(msg.src) is Role.EU:
        step.table("users")[lid] = {"ap": p["ap"]}
        step.send(K.ResourceAllocRequest, "TCF", op="allocate", user=lid, ap=p["ap"],
                  endpoint="APP", txn=step.txn())
    elif msg.kind is K.ResourceAllocResponse and p["op"] == "allocate":
        via = step.path(step.view("users")[lid]["ap"])
        if p.get("ok"):
            step.send(K.SetupResponse, user_node(lid), session=msg.session_id, via=via, op="app",
                      user=lid, ok=True)
        else:
            step.send(K.SetupResponse, user_node(lid), via=via, op="app", user=lid, ok=False,
                      reason=p.get("reason"))
    elif msg.kind is K.DataPayload:
        pass
    else:
        raise _unexpected(step.state, msg)


_HANDLERS = {
    Role.EU: _eu_handle,
    Role.TF: _tf_handle,
    Role.TCF: _tcf_handle,
    Role.NASSF: _nassf_handle,
    Role.NASSSUF: _support_handle,
    Role.MSSSUF: _support_handle,
    Role.MSSF: _mssf_handle,
    Role.APP: _app_handle,
}


def handle_message(state: RoleState, msg: Message, variant=None):
    """Pure transition of one node on receipt of ``msg``.

    Returns ``(state', emitted)``.  Raises UnexpectedMessage when the
    message is not valid for the node in its current state; the input
    state is untouched in that case.
    """
    if msg.dst != state.node:
        raise errors.UnexpectedMessage(f"{msg.kind.value} addressed to {msg.dst}, not {state.node}")
    if variant is not None and Variant.parse(variant) is not state.env.variant:
        raise errors.UnexpectedMessage(f"{state.node} runs {state.env.variant.value}, not {variant}")
    step = _Step(state, msg)
    try:
        _HANDLERS[state.role](step, msg)
    except KeyError as exc:
        raise _unexpected(state, msg, f"missing field {exc}") from None
    return step.result()
