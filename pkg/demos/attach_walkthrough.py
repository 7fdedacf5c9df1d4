"""Walk through network attachment in both architectures.

In the legacy NGN every attach message from the user terminates at the
transport control function.  In the evolved NGN the user talks to the
network attachment signaling function (NASSF), which asks its support
function for a session; transport control only sees resource commands.

Run:  python3 demos/attach_walkthrough.py
"""

from engn.protocol import (FAULTS, canonical_trace, check_trace_invariants, inject_fault,
                           violation_ids)


def show(trace):
    for m in trace.messages:
        via = f" via {','.join(m.via)}" if m.via else ""
        sid = f" [session {m.session_id}]" if m.session_id is not None else ""
        print(f"  {m.seq:3d}  {m.kind.value:<22} {m.src:>8} -> {m.dst:<8}{via}{sid}")


for variant in ("ngn", "engn"):
    trace = canonical_trace("attach", variant)
    print(f"\n{variant.upper()} attach, {len(trace.messages)} messages")
    show(trace)
    user = trace.world.user(1)
    print(f"  user 1: {user.reg_state.value}, permanent {user.permanent_ip}, "
          f"temporary {user.temporary_ip} at {user.attachment_point}")
    print(f"  invariant violations: {len(check_trace_invariants(trace))}")

# The NGN trace breaks the eNGN rule that transport control never talks to users.
ngn = canonical_trace("attach", "ngn")
print("\nNGN attach judged by eNGN rules:", sorted(violation_ids(check_trace_invariants(ngn, "engn"))))

# Each fault fixture trips exactly one rule.
print("\ninjected faults:")
for fault, rule in FAULTS.items():
    flow = "handover-network" if rule == "MOB-2" else "attach"
    bad = inject_fault(canonical_trace(flow, "engn"), fault)
    print(f"  {fault:<18} -> {sorted(violation_ids(check_trace_invariants(bad)))}")

# Network-decided handover: the support function decides, transport control
# moves both sessions make-before-break, then the old hops are released.
print("\neNGN network-based handover (tail):")
ho = canonical_trace("handover-network", "engn")
tail = canonical_trace("mobility-register", "engn")
ho.messages = ho.messages[len(tail.messages):]
show(ho)
