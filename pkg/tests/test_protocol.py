import random
from dataclasses import replace

import pytest

from engn import errors
from engn.model import (AuthState, MobilityMode, RegState, ResourceState, Role, Variant,
                        parse_topology)
from engn.protocol import (FAULTS, FLOWS, RESOURCE_CONTROL, Binding, MessageKind as K, Trace, World,
                           attach_flow, canonical_trace, check_trace_invariants, dumps_jsonl,
                           external_app_setup, handle_message, handover_host_based,
                           handover_network_based, inject_fault, loads_jsonl,
                           location_binding_update, mobility_registration, role_of, skeleton,
                           violation_ids)
from engn.protocol.messages import read_jsonl
from engn.protocol.roles import eu_intent
from engn.protocol.world import renumber

GOLDEN = [f"{flow}-{variant}" for flow in ("attach", "mobility-register", "handover-network",
                                             "handover-host", "coordination")
          for variant in ("engn", "ngn")]


def _attached(variant="engn", topology=None, lid=1):
    return attach_flow(lid, world=World.create(variant, topology)).world


def _narrow_topology(cap2=1.0, neighbors_of_ap1=("AP2",)):
    # AP2 sits behind a TF that fits only one session
    aps = {"AP1": {"neighbors": list(neighbors_of_ap1), "path": ["TF-1"]},
           "AP2": {"neighbors": ["AP1"], "path": ["TF-2"]}}
    return parse_topology({"accessPoints": aps,
                           "tfNodes": {"TF-1": {"capacity": 10.0}, "TF-2": {"capacity": cap2}}})


# -- handle_message ----------------------------------------------------------

def test_engn_nassf_forwards_setup_to_support_function():
    first = canonical_trace("attach", "engn").messages[0]
    world = World.create("engn")
    _, out = handle_message(world.nodes["NASSF"], first)
    assert [(m.kind, m.dst) for m in out] == [(K.ResourceAllocRequest, "NASSSuF")]


def test_ngn_tcf_commands_transport_on_setup():
    first = canonical_trace("attach", "ngn").messages[0]
    assert (first.src, first.dst, first.via) == ("EU-1", "TCF", ("TF-1",))
    world = World.create("ngn")
    _, out = handle_message(world.nodes["TCF"], first)
    assert [(m.kind, m.dst) for m in out] == [(K.ResourceAllocCommand, "TF-1")]


def test_engn_tcf_rejects_user_signaling():
    msg = next(m for m in canonical_trace("attach", "engn").messages if m.kind is K.AuthResponse)
    tcf = World.create("engn").nodes["TCF"]
    with pytest.raises(errors.UnexpectedMessage):
        handle_message(tcf, replace(msg, dst="TCF"))


def test_handle_message_is_pure():
    trace = canonical_trace("attach", "engn")
    world = World.create("engn")
    state = world.nodes["NASSF"]
    before = repr(state)
    a = handle_message(state, trace.messages[0])
    b = handle_message(state, trace.messages[0])
    assert a == b
    assert repr(state) == before


@pytest.mark.parametrize("variant", ["engn", "ngn"])
def test_replay_reproduces_trace(variant):
    """Feeding a trace's messages back through the handlers regenerates it exactly."""
    golden = canonical_trace("attach", variant).messages
    world = World.create(variant).with_user(1)
    nodes = dict(world.nodes)
    nodes["EU-1"], pending = eu_intent(nodes["EU-1"], "attach")
    emitted = list(pending)
    for msg in golden:
        nodes[msg.dst], out = handle_message(nodes[msg.dst], msg)
        emitted += out
    assert dumps_jsonl(renumber(emitted)) == dumps_jsonl(golden)


# -- attach --------------------------------------------------------------------

def test_engn_attach_sequence():
    msgs = canonical_trace("attach", "engn").messages
    got = [(m.kind, m.src, m.dst) for m in msgs]
    assert got[:8] == [
        (K.SetupRequest, "EU-1", "NASSF"),
        (K.ResourceAllocRequest, "NASSF", "NASSSuF"),
        (K.ResourceAllocRequest, "NASSSuF", "TCF"),
        (K.ResourceAllocCommand, "TCF", "TF-1"),
        (K.ResourceAllocConfirm, "TF-1", "TCF"),
        (K.ResourceAllocResponse, "TCF", "NASSSuF"),
        (K.ResourceAllocResponse, "NASSSuF", "NASSF"),
        (K.SetupResponse, "NASSF", "EU-1"),
    ]
    tail = [m.kind for m in msgs[8:]]
    for k in (K.AuthChallenge, K.AuthResponse, K.AuthResult, K.IpConfigAssign, K.NetworkConfigInfo):
        assert k in tail
    assert tail[-1] is K.NetworkConfigInfo
    sid = msgs[7].session_id
    assert all(m.session_id == sid for m in msgs[8:])


def test_engn_attach_final_state():
    trace = canonical_trace("attach", "engn")
    rec = trace.world.user(1)
    assert rec.reg_state is RegState.REGISTERED and rec.auth_state is AuthState.AUTHENTICATED
    assert rec.permanent_ip and rec.temporary_ip
    (session,) = trace.world.sessions.values()
    assert session.network_end == "NASSF" and session.state is ResourceState.ALLOCATED
    ip = next(m for m in trace.messages if m.kind is K.IpConfigAssign)
    assert ip.payload["logicalId"] == 1


def test_ngn_attach_sequence():
    msgs = canonical_trace("attach", "ngn").messages
    assert [(m.kind, m.src, m.dst) for m in msgs[:4]] == [
        (K.SetupRequest, "EU-1", "TCF"),
        (K.ResourceAllocCommand, "TCF", "TF-1"),
        (K.ResourceAllocConfirm, "TF-1", "TCF"),
        (K.SetupResponse, "TCF", "EU-1"),
    ]
    auth = [m for m in msgs if m.kind in (K.AuthChallenge, K.AuthResponse, K.AuthResult)]
    assert auth and all("TCF" in (m.src, m.dst) and m.via for m in auth)


def test_attach_twice_rejected():
    world = _attached()
    with pytest.raises(errors.AlreadyRegistered):
        attach_flow(1, world=world)


@pytest.mark.parametrize("variant", ["engn", "ngn"])
def test_invalid_credentials(variant):
    with pytest.raises(errors.AuthFailed) as info:
        attach_flow(1, variant, ap="AP1", credential=False)
    trace = info.value.trace
    rec = trace.world.user(1)
    assert rec.reg_state is RegState.DETACHED and rec.temporary_ip is None
    assert all(s.state is ResourceState.RELEASED for s in trace.world.sessions.values())
    assert check_trace_invariants(trace) == []
    # a detached user may try again
    again = attach_flow(1, world=trace.world.with_user(1, credential=True))
    assert again.world.user(1).reg_state is RegState.REGISTERED


def test_attach_admission_rejected():
    topo = parse_topology({"accessPoints": {"AP1": {"neighbors": [], "path": ["TF-1"]}},
                           "tfNodes": {"TF-1": {"capacity": 1.0}}})
    world = _attached(topology=topo)
    with pytest.raises(errors.AdmissionRejected) as info:
        attach_flow(2, world=world)
    assert info.value.trace.world.user(2).reg_state is RegState.DETACHED
    assert check_trace_invariants(info.value.trace) == []


# -- mobility -------------------------------------------------------------------

def test_mobility_register_network_based():
    trace = canonical_trace("mobility-register", "engn")
    kinds = trace.kinds()
    assert K.MobilityRegister in kinds and K.ProfileUpdate in kinds
    pu = [m for m in trace.messages if m.kind is K.ProfileUpdate]
    assert {(m.src, m.dst) for m in pu} == {("MSSF", "NASSSuF"), ("NASSSuF", "MSSF")}
    assert K.HandoverPolicyInfo not in kinds
    assert trace.world.user(1).mobility_mode is MobilityMode.NETWORK_BASED
    assert any(s.network_end == "MSSF" and s.state is ResourceState.ALLOCATED
               for s in trace.world.sessions.values())
    # authorization in coordination with NASSF
    assert any(m.src == "NASSF" and m.dst == "MSSF" for m in trace.messages)


def test_mobility_register_host_based_gets_policy():
    world = _attached()
    trace = mobility_registration(1, "HostBased", world)
    policy = [m for m in trace.messages if m.kind is K.HandoverPolicyInfo]
    assert [(m.src, m.dst) for m in policy] == [("MSSSuF", "EU-1")]


def test_mobility_register_requires_attachment():
    world = World.create("engn").with_user(1)
    with pytest.raises(errors.NotAttached):
        mobility_registration(1, "NetworkBased", world)


def test_network_handover_order_and_state():
    trace = canonical_trace("handover-network", "engn")
    msgs = trace.messages
    start = max(i for i, m in enumerate(msgs) if m.kind is K.LocationBindingUpdate)
    order = [m.kind for m in msgs[start:]]
    idx = {k: order.index(k) for k in (K.LocationBindingUpdate, K.HandoverRequest, K.HandoverDecision,
                                       K.ResourceReleaseCommand, K.LocationBindingAck,
                                       K.HandoverComplete)}
    assert (idx[K.LocationBindingUpdate] < idx[K.HandoverRequest] < idx[K.HandoverDecision]
            < idx[K.ResourceReleaseCommand] < idx[K.LocationBindingAck] < idx[K.HandoverComplete])
    assert msgs[start + idx[K.HandoverRequest]].src == "MSSF"
    assert msgs[start + idx[K.HandoverDecision]].src == "MSSSuF"
    before = canonical_trace("mobility-register", "engn").world
    after = trace.world
    old, new = before.user(1), after.user(1)
    assert new.permanent_ip == old.permanent_ip
    assert new.temporary_ip != old.temporary_ip and new.attachment_point == "AP2"
    assert after.bindings[old.permanent_ip].epoch == before.bindings[old.permanent_ip].epoch + 1
    assert all(s.path == ("TF-2",) for s in after.sessions.values())


def test_network_handover_no_feasible_target():
    world = _attached(topology=_narrow_topology())
    world = mobility_registration(1, "NetworkBased", world).world
    with pytest.raises(errors.NoFeasibleTarget) as info:
        handover_network_based(1, "AP2", world)
    after = info.value.trace.world
    assert after.bindings == world.bindings
    assert after.sessions == world.sessions
    assert after.user(1).attachment_point == "AP1"


def test_network_handover_mode_and_neighbor_checks():
    world = mobility_registration(1, "HostBased", _attached()).world
    with pytest.raises(errors.ModeMismatch):
        handover_network_based(1, "AP2", world)
    world = mobility_registration(1, "NetworkBased", _attached(topology=_narrow_topology(10.0))).world
    with pytest.raises(errors.NotNeighbor):
        handover_network_based(1, "AP9", world)


def test_host_handover_two_candidates():
    trace = canonical_trace("handover-host", "engn")
    cand = next(m for m in trace.messages if m.kind is K.CandidateLinkList)
    assert (cand.src, cand.dst) == ("MSSF", "EU-1")
    assert len(cand.payload["candidates"]) == 2
    trig = next(m for m in trace.messages if m.kind is K.HandoverTrigger)
    assert role_of(trig.src) is Role.EU and trig.seq > cand.seq
    assert trace.kinds()[-1] is K.HandoverComplete


def test_host_handover_empty_candidates():
    world = mobility_registration(1, "HostBased", _attached(topology=_narrow_topology())).world
    with pytest.raises(errors.EmptyCandidateList) as info:
        handover_host_based(1, world)
    kinds = info.value.trace.kinds()
    assert K.HandoverTrigger not in kinds and K.CandidateLinkList not in kinds
    assert info.value.trace.world.user(1) == world.user(1)


def test_host_handover_declined():
    world = mobility_registration(1, "HostBased", _attached()).world
    trace = handover_host_based(1, world, choice=None)
    assert trace.kinds()[-1] is K.CandidateLinkList
    assert trace.world.user(1) == world.user(1)
    assert trace.world.sessions == world.sessions


def test_location_binding_update():
    table = {"100.64.0.1": Binding("10.1.0.1", "AP1", 3)}
    out = location_binding_update(table, "100.64.0.1", "10.2.0.1", "AP2")
    assert out["100.64.0.1"] == Binding("10.2.0.1", "AP2", 4)
    assert table["100.64.0.1"].epoch == 3
    same = location_binding_update(out, "100.64.0.1", "10.2.0.1", "AP2")
    assert same["100.64.0.1"].epoch == 5
    with pytest.raises(errors.UnknownPermanentIp):
        location_binding_update(table, "100.64.0.9", "x", "AP1")


def test_ngn_handover_decided_by_tcf():
    trace = canonical_trace("handover-network", "ngn")
    dec = [m for m in trace.messages if m.kind is K.HandoverDecision]
    assert dec and all(m.src == "TCF" for m in dec)
    assert check_trace_invariants(trace) == []


# -- checker ---------------------------------------------------------------------

@pytest.mark.parametrize("variant", ["engn", "ngn"])
@pytest.mark.parametrize("flow", FLOWS)
def test_canonical_traces_clean(flow, variant):
    trace = canonical_trace(flow, variant)
    assert trace.errors == []
    assert check_trace_invariants(trace) == []


@pytest.mark.parametrize("fault,rule", sorted(FAULTS.items()))
def test_injected_faults(fault, rule):
    flow = "handover-network" if rule == "MOB-2" else "attach"
    trace = inject_fault(canonical_trace(flow, "engn"), fault)
    assert violation_ids(check_trace_invariants(trace)) == {rule}


def test_ngn_trace_fails_engn_rules():
    report = check_trace_invariants(canonical_trace("attach", "ngn"), "engn")
    assert report and "ENGN-1" in violation_ids(report)


def test_checker_trace_rules():
    msgs = canonical_trace("attach", "engn").messages
    swapped = [msgs[1], msgs[0]] + msgs[2:]
    assert "TRACE-1" in violation_ids(check_trace_invariants(swapped, "engn"))
    relayed = [replace(msgs[0], via=("NASSSuF",))] + msgs[1:]
    assert "TRACE-2" in violation_ids(check_trace_invariants(relayed, "engn"))
    no_confirm = [m for m in msgs if m.kind is not K.ResourceAllocConfirm]
    assert "TRACE-3" in violation_ids(check_trace_invariants(no_confirm, "engn"))


def test_checker_mobility_rules():
    msgs = canonical_trace("mobility-register", "engn").messages
    early = [m for m in msgs if m.kind is not K.AuthResult]
    assert "MOB-1" in violation_ids(check_trace_invariants(early, "engn"))
    msgs = canonical_trace("handover-network", "engn").messages
    kept = [m for m in msgs if m.kind is not K.ResourceReleaseCommand]
    assert violation_ids(check_trace_invariants(kept, "engn")) == {"MOB-3"}
    host = canonical_trace("handover-host", "engn").messages
    forged = [replace(m, src="MSSF", dst="EU-1") if m.kind is K.HandoverTrigger else m for m in host]
    assert "MOB-2" in violation_ids(check_trace_invariants(forged, "engn"))


def test_checker_ngn_rule():
    msgs = canonical_trace("attach", "ngn").messages
    direct = [replace(m, via=()) if m.kind is K.AuthChallenge else m for m in msgs]
    assert violation_ids(check_trace_invariants(direct, "ngn")) == {"NGN-1"}


def test_checker_accepts_plain_list_and_never_raises():
    assert check_trace_invariants([], "engn") == []


# -- golden traces ---------------------------------------------------------------

@pytest.mark.parametrize("name", GOLDEN + ["coordination-engn"])
def test_golden_trace_bitwise(name, traces_dir):
    flow, variant = name.rsplit("-", 1)
    golden = (traces_dir / f"{name}.jsonl").read_bytes()
    assert dumps_jsonl(canonical_trace(flow, variant).messages).encode() == golden


@pytest.mark.parametrize("name", GOLDEN)
def test_golden_trace_independent_check(name, traces_dir):
    """Check the frozen files with plain field logic, not the package checker."""
    records = [__import__("json").loads(line)
               for line in (traces_dir / f"{name}.jsonl").read_text().splitlines()]
    seqs = [r["seq"] for r in records]
    assert seqs == sorted(set(seqs))
    assert all(v.startswith("TF-") for r in records for v in r["via"])
    if name.endswith("-engn"):
        for r in records:
            ends = {r["src"].split("-")[0], r["dst"].split("-")[0]}
            assert ends != {"TCF", "EU"}
            if ends == {"TCF", "TF"}:
                assert r["kind"] in {"ResourceAllocCommand", "ResourceAllocConfirm",
                                     "ResourceReleaseCommand"}


def test_jsonl_round_trip(tmp_path, traces_dir):
    msgs = read_jsonl(traces_dir / "handover-host-engn.jsonl")
    assert dumps_jsonl(msgs) == (traces_dir / "handover-host-engn.jsonl").read_text()
    assert loads_jsonl(dumps_jsonl(msgs)) == msgs


# -- uniform treatment and fuzzed scripts ----------------------------------------

def test_attach_and_app_setup_share_skeleton():
    world = _attached()
    app = external_app_setup(1, world)
    attach = canonical_trace("attach", "engn")
    assert skeleton(attach.messages) == skeleton(app.messages)
    assert skeleton(app.messages)[0] is K.SetupRequest
    assert skeleton(app.messages)[-1] is K.SetupResponse


def random_topology(rng):
    n = rng.randint(2, 4)
    aps = [f"AP{i + 1}" for i in range(n)]
    edges = {a: set() for a in aps}
    for i in range(1, n):
        j = rng.randrange(i)
        edges[aps[i]].add(aps[j])
        edges[aps[j]].add(aps[i])
    for _ in range(rng.randint(0, 2)):
        a, b = rng.sample(aps, 2)
        edges[a].add(b)
        edges[b].add(a)
    tfs = [f"TF-{i + 1}" for i in range(rng.randint(1, n))]
    return parse_topology({
        "accessPoints": {a: {"neighbors": sorted(edges[a]), "path": [rng.choice(tfs)]} for a in aps},
        "tfNodes": {t: {"capacity": float(rng.randint(1, 4))} for t in tfs},
    })


def run_script(seed, steps=8, variant="engn"):
    """Random multi-user scenario: attaches (some with bad credentials), mobility, handovers, apps."""
    rng = random.Random(seed)
    topo = random_topology(rng)
    aps = sorted(topo.access_points)
    world = World.create(variant, topo)
    messages = []
    for _ in range(steps):
        lid = rng.randint(1, 3)
        op = rng.choice(["attach", "attach", "mobility", "network", "host", "app"])
        try:
            if op == "attach":
                trace = attach_flow(lid, world=world, ap=rng.choice(aps), credential=rng.random() > 0.2)
            elif op == "mobility":
                trace = mobility_registration(lid, rng.choice(["HostBased", "NetworkBased"]), world)
            elif op == "network":
                nb = sorted(topo.neighbors(world.user(lid).attachment_point))
                trace = handover_network_based(lid, rng.choice(nb + [None]), world)
            elif op == "host":
                trace = handover_host_based(lid, world, rng.choice(["first", None] + aps))
            else:
                trace = external_app_setup(lid, world)
        except errors.ProtocolError as exc:
            trace = exc.trace
        if trace is None:
            continue
        messages += trace.messages
        world = trace.world
    return Trace(Variant.parse(variant), messages, world)


def test_fuzzed_scripts_keep_tcf_tf_interface_resource_only():
    n_msgs = 0
    kinds = set()
    for seed in range(10_000):
        trace = run_script(seed)
        n_msgs += len(trace.messages)
        for m in trace.messages:
            kinds.add(m.kind)
            if {role_of(m.src), role_of(m.dst)} == {Role.TCF, Role.TF}:
                assert m.kind in RESOURCE_CONTROL, (seed, m)
    assert n_msgs > 100_000
    assert {K.HandoverComplete, K.CandidateLinkList, K.AuthResult} <= kinds


def test_fuzzed_scripts_pass_all_rules():
    for seed in range(1_000):
        trace = run_script(seed)
        assert check_trace_invariants(trace) == [], seed


def test_fuzzed_ngn_scripts_pass_all_rules():
    for seed in range(300):
        trace = run_script(seed, variant="ngn")
        assert check_trace_invariants(trace) == [], seed
