"""Worlds, the message-driving loop and the built-in service procedures."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

from engn import errors
from engn.model import EndUserRecord, MobilityMode, RegState, Topology, Variant
from engn.protocol.messages import Message, MessageKind as K, user_node
from engn.protocol.roles import Env, RoleState, eu_intent, handle_message, initial_state

FLOWS = ("attach", "mobility-register", "handover-network", "handover-host", "coordination")
MOBILITY_FLOWS = ("mobility-register", "handover-network", "handover-host", "coordination")


@dataclass(frozen=True)
class World:
    """Every node's state plus the global message counter.  A plain value."""

    env: Env
    nodes: dict
    seq: int = 0

    @classmethod
    def create(cls, variant, topology: Topology | None = None, qos: float = 1.0) -> "World":
        variant = Variant.parse(variant)
        env = Env(variant, topology or Topology.default(), qos)
        nodes = {tf: initial_state(tf, env, entries={}) for tf in sorted(env.topology.tf_nodes)}
        nodes["TCF"] = initial_state("TCF", env, sessions={}, bindings={})
        nodes["APP"] = initial_state("APP", env)
        if variant is Variant.ENGN:
            nodes["NASSF"] = initial_state("NASSF", env)
            nodes["NASSSuF"] = initial_state("NASSSuF", env)
            nodes["MSSF"] = initial_state("MSSF", env, bindings={})
            nodes["MSSSuF"] = initial_state("MSSSuF", env)
        return cls(env, nodes, 0)

    @property
    def variant(self) -> Variant:
        return self.env.variant

    @property
    def topology(self) -> Topology:
        return self.env.topology

    def with_user(self, lid: int, ap: str | None = None, credential: bool = True) -> "World":
        node = user_node(lid)
        ap = ap or self.topology.first_ap()
        if ap not in self.topology.access_points:
            raise errors.InvalidTopology(f"unknown access point {ap}")
        if node in self.nodes:
            state = self.nodes[node]
            if state.data["record"].reg_state is not RegState.DETACHED:
                raise errors.AlreadyRegistered(f"user {lid} is already attached")
            data = dict(state.data, credential=credential)
            data["record"] = replace(data["record"], attachment_point=ap)
            state = replace(state, data=data)
        else:
            state = initial_state(node, self.env, record=EndUserRecord(lid, attachment_point=ap),
                                  credential=credential, sessions={}, expect={})
        return replace(self, nodes={**self.nodes, node: state})

    def user(self, lid: int) -> EndUserRecord:
        try:
            return self.nodes[user_node(lid)].data["record"]
        except KeyError:
            raise errors.UnknownUser(f"no end user {lid}") from None

    @property
    def users(self) -> dict:
        return {s.data["record"].logical_id: s.data["record"]
                for n, s in self.nodes.items() if n.startswith("EU-")}

    @property
    def sessions(self) -> dict:
        return dict(self.nodes["TCF"].data["sessions"])

    @property
    def bindings(self) -> dict:
        owner = "MSSF" if self.variant is Variant.ENGN else "TCF"
        return dict(self.nodes[owner].data.get("bindings", {}))

    @property
    def released_paths(self) -> tuple:
        return self.nodes["TCF"].data.get("released_paths", ())

    def to_json(self) -> dict:
        users = {}
        for lid, rec in sorted(self.users.items()):
            users[str(lid)] = {
                "permanentIp": rec.permanent_ip,
                "temporaryIp": rec.temporary_ip,
                "attachmentPoint": rec.attachment_point,
                "regState": rec.reg_state.value,
                "authState": rec.auth_state.value,
                "mobilityMode": rec.mobility_mode.value,
                "activeSessions": sorted(rec.active_sessions),
            }
        sessions = {
            str(sid): {"user": s.user, "networkEnd": s.network_end, "path": list(s.path),
                       "qos": s.qos, "resourceState": s.state.value}
            for sid, s in sorted(self.sessions.items())
        }
        bindings = {ip: {"temporaryIp": b.temporary_ip, "attachmentPoint": b.attachment_point,
                         "epoch": b.epoch} for ip, b in sorted(self.bindings.items())}
        return {"variant": self.variant.value, "users": users, "sessions": sessions,
                "bindings": bindings}


@dataclass
class Trace:
    variant: Variant
    messages: list = field(default_factory=list)
    world: World | None = None
    errors: list = field(default_factory=list)

    def kinds(self):
        return [m.kind for m in self.messages]

    def then(self, other: "Trace") -> "Trace":
        """Concatenate a later procedure run on this trace's final world."""
        return Trace(self.variant, self.messages + other.messages, other.world,
                     self.errors + other.errors)


def deliver(world: World, first: list, limit: int = 100000):
    """Process messages FIFO until the network is quiet.

    Returns ``(world', messages, errors)``; messages are numbered from
    ``world.seq + 1`` in emission order.
    """
    nodes = dict(world.nodes)
    seq = world.seq
    log, errs = [], []
    queue = deque()

    def emit(batch):
        nonlocal seq
        for m in batch:
            seq += 1
            m = replace(m, seq=seq)
            log.append(m)
            queue.append(m)

    emit(first)
    steps = 0
    while queue:
        steps += 1
        if steps > limit:
            raise errors.ProtocolError("message storm: delivery limit exceeded")
        msg = queue.popleft()
        state = nodes.get(msg.dst)
        if state is None:
            errs.append({"seq": msg.seq, "node": msg.dst, "error": "no such node"})
            continue
        try:
            new_state, out = handle_message(state, msg)
        except errors.UnexpectedMessage as exc:
            errs.append({"seq": msg.seq, "node": msg.dst, "error": str(exc)})
            continue
        nodes[msg.dst] = new_state
        emit(out)
    return World(world.env, nodes, seq), log, errs


def _run_intent(world: World, lid: int, intent: str, **args) -> Trace:
    node = user_node(lid)
    state, out = eu_intent(world.nodes[node], intent, **args)
    world = replace(world, nodes={**world.nodes, node: state})
    world, log, errs = deliver(world, out)
    return Trace(world.variant, log, world, errs)


def _outcome(trace: Trace, lid: int):
    return trace.world.nodes[user_node(lid)].data.get("outcome")


def _check_variant(world, variant):
    if variant is not None and Variant.parse(variant) is not world.variant:
        raise errors.ConfigError(f"world runs {world.variant.value}, not {variant}")


def attach_flow(user: int, variant=None, world: World | None = None, ap: str | None = None,
                credential: bool = True) -> Trace:
    """Network attachment of ``user``: session setup, authentication, IP configuration."""
    if world is None:
        world = World.create(variant or Variant.ENGN)
    _check_variant(world, variant)
    node = user_node(user)
    if node in world.nodes and world.user(user).reg_state is not RegState.DETACHED:
        raise errors.AlreadyRegistered(f"user {user} is already registered")
    if node not in world.nodes or ap is not None or not credential:
        world = world.with_user(user, ap, credential)
    trace = _run_intent(world, user, "attach")
    outcome = _outcome(trace, user)
    if outcome == "attached":
        return trace
    if outcome == "auth-failed":
        raise errors.AuthFailed(f"user {user} failed authentication", trace)
    if outcome == "setup-rejected":
        raise errors.AdmissionRejected(f"no transport capacity to attach user {user}", trace)
    raise errors.ProtocolError(f"attach of user {user} did not complete ({outcome})", trace)


def _registered(world, user):
    rec = world.user(user)
    if rec.reg_state is not RegState.REGISTERED:
        raise errors.NotAttached(f"user {user} is not registered")
    return rec


def mobility_registration(user: int, mode, world: World) -> Trace:
    """Register an attached user for host- or network-based mobility."""
    mode = MobilityMode(mode)
    if mode is MobilityMode.NONE:
        raise errors.ModeMismatch("mobility registration needs HostBased or NetworkBased")
    rec = _registered(world, user)
    if rec.mobility_mode is not MobilityMode.NONE:
        raise errors.AlreadyRegistered(f"user {user} already uses {rec.mobility_mode.value} mobility")
    trace = _run_intent(world, user, "mobility-register", mode=mode.value)
    outcome = _outcome(trace, user)
    if outcome == "mobility-registered":
        return trace
    if outcome == "setup-rejected":
        raise errors.AdmissionRejected(f"no transport capacity for user {user}'s mobility session", trace)
    raise errors.MobilityRejected(f"mobility registration of user {user} failed ({outcome})", trace)


def handover_network_based(user: int, new_ap: str | None, world: World) -> Trace:
    """Network-decided handover to ``new_ap`` (or the best neighbor when None)."""
    rec = _registered(world, user)
    if rec.mobility_mode is not MobilityMode.NETWORK_BASED:
        raise errors.ModeMismatch(f"user {user} uses {rec.mobility_mode.value} mobility")
    if new_ap is not None and new_ap not in world.topology.neighbors(rec.attachment_point):
        raise errors.NotNeighbor(f"{new_ap} is not a neighbor of {rec.attachment_point}")
    trace = _run_intent(world, user, "move", target=new_ap)
    outcome = _outcome(trace, user)
    if outcome == "handover-complete":
        return trace
    if outcome == "rejected:no-feasible-target":
        raise errors.NoFeasibleTarget(f"no neighbor of {rec.attachment_point} admits user {user}", trace)
    raise errors.ProtocolError(f"handover of user {user} did not complete ({outcome})", trace)


def handover_host_based(user: int, world: World, choice="first") -> Trace:
    """User-decided handover.

    ``choice`` scripts the user's decision: ``"first"`` takes the first
    offered link, an access point id takes that link if offered, and None
    declines (the trace then ends after the candidate list).
    """
    rec = _registered(world, user)
    if rec.mobility_mode is not MobilityMode.HOST_BASED:
        raise errors.ModeMismatch(f"user {user} uses {rec.mobility_mode.value} mobility")
    trace = _run_intent(world, user, "candidates", choice=choice)
    outcome = _outcome(trace, user)
    if outcome in ("handover-complete", "declined"):
        return trace
    if outcome == "rejected:no-candidates":
        raise errors.EmptyCandidateList(f"no feasible link for user {user}", trace)
    if outcome == "rejected:no-feasible-target":
        raise errors.NoFeasibleTarget(f"chosen link no longer admits user {user}", trace)
    raise errors.ProtocolError(f"handover of user {user} did not complete ({outcome})", trace)


def external_app_setup(user: int, world: World) -> Trace:
    """Session setup between an attached user and an external application."""
    _registered(world, user)
    trace = _run_intent(world, user, "app-setup")
    outcome = _outcome(trace, user)
    if outcome == "app-session":
        return trace
    raise errors.AdmissionRejected(f"application session for user {user} rejected", trace)


def canonical_trace(flow: str, variant, topology: Topology | None = None) -> Trace:
    """The reference trace of a named flow, for one user at the first access point."""
    if flow not in FLOWS:
        raise errors.ConfigError(f"unknown flow {flow!r}; expected one of {', '.join(FLOWS)}")
    world = World.create(variant, topology)
    trace = attach_flow(1, world=world)
    if flow == "attach":
        return trace
    mode = MobilityMode.HOST_BASED if flow == "handover-host" else MobilityMode.NETWORK_BASED
    trace = trace.then(mobility_registration(1, mode, trace.world))
    if flow == "mobility-register":
        return trace
    if flow == "coordination":
        trace = trace.then(external_app_setup(1, trace.world))
    if flow == "handover-host":
        return trace.then(handover_host_based(1, trace.world))
    ap = trace.world.user(1).attachment_point
    target = sorted(trace.world.topology.neighbors(ap))[0]
    return trace.then(handover_network_based(1, target, trace.world))


def skeleton(messages) -> list:
    """Kind sequence up to the first SetupResponse, with consecutive repeats collapsed."""
    out = []
    for m in messages:
        if not out or out[-1] != m.kind:
            out.append(m.kind)
        if m.kind is K.SetupResponse:
            break
    return out


def renumber(messages) -> list:
    return [replace(m, seq=i + 1) for i, m in enumerate(messages)]


FAULTS = {
    "tcf-to-user": "ENGN-1",
    "tcf-tf-signaling": "ENGN-2",
    "decision-by-mssf": "MOB-2",
}


def inject_fault(trace: Trace, fault: str) -> Trace:
    """Return a copy of ``trace`` with one deliberate protocol violation."""
    msgs = list(trace.messages)
    if fault == "tcf-to-user":
        i = next(i for i, m in enumerate(msgs) if m.kind is K.AuthChallenge)
        msgs.insert(i + 1, replace(msgs[i], src="TCF"))
    elif fault == "tcf-tf-signaling":
        i = next(i for i, m in enumerate(msgs) if m.kind is K.ResourceAllocCommand)
        msgs.insert(i + 1, replace(msgs[i], kind=K.GenericSignaling, payload={"op": "probe"}))
    elif fault == "decision-by-mssf":
        i = next((i for i, m in enumerate(msgs) if m.kind is K.HandoverDecision), None)
        if i is None:
            raise errors.ConfigError("decision-by-mssf needs a network-based handover trace")
        msgs[i] = replace(msgs[i], src=msgs[i].dst, dst=msgs[i].src)
    else:
        raise errors.ConfigError(f"unknown fault {fault!r}; expected one of {', '.join(FAULTS)}")
    return Trace(trace.variant, renumber(msgs), trace.world, list(trace.errors))
