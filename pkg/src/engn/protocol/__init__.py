"""Signaling state machines for the built-in services of both variants."""

from engn.protocol.checker import Violation, check_trace_invariants, violation_ids
from engn.protocol.messages import (ACTION_OF_KIND, RESOURCE_CONTROL, Message, MessageKind,
                                    dumps_jsonl, loads_jsonl, read_jsonl, role_of, write_jsonl)
from engn.protocol.roles import Binding, RoleState, handle_message, location_binding_update
from engn.protocol.world import (FAULTS, FLOWS, MOBILITY_FLOWS, Trace, World, attach_flow,
                                 canonical_trace, external_app_setup, handover_host_based,
                                 handover_network_based, inject_fault, mobility_registration,
                                 skeleton)

__all__ = [
    "ACTION_OF_KIND", "RESOURCE_CONTROL", "Message", "MessageKind", "dumps_jsonl", "loads_jsonl",
    "read_jsonl", "role_of", "write_jsonl", "Binding", "RoleState", "handle_message",
    "location_binding_update", "FAULTS", "FLOWS", "MOBILITY_FLOWS", "Trace", "World",
    "attach_flow", "canonical_trace", "external_app_setup", "handover_host_based",
    "handover_network_based", "inject_fault", "mobility_registration", "skeleton",
    "Violation", "check_trace_invariants", "violation_ids",
]
