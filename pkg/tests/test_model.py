import json

import pytest
from hypothesis import given, strategies as st

from engn import errors
from engn.model import (ARCHITECTURE_ROLES, COMPONENTS, PLACEMENT, TCF_CAPABILITIES, Component,
                        EndUserRecord, MobilityMode, RegState, Role, Session, Stratum, Variant,
                        apply_overrides, default_config, equal_budget_split, load_config,
                        parse_topology, shipped_raw, stratum_of, validate_scenario,
                        SHIPPED_CONFIGS)


def test_role_sets():
    assert set(COMPONENTS[Variant.NGN]) == {Component.EU, Component.TF, Component.TCF}
    assert set(ARCHITECTURE_ROLES[Variant.ENGN]) == {Component.EU, Component.TF, Component.TCF,
                                                     Component.SSF, Component.SSSUF}


def test_placement_table():
    expected = {
        (Variant.ENGN, Role.NASSF): Stratum.APPLICATION,
        (Variant.ENGN, Role.MSSF): Stratum.APPLICATION,
        (Variant.ENGN, Role.NASSSUF): Stratum.SERVICE,
        (Variant.ENGN, Role.MSSSUF): Stratum.SERVICE,
        (Variant.ENGN, Role.TCF): Stratum.TRANSPORT,
        (Variant.NGN, Role.TCF): Stratum.TRANSPORT,
        (Variant.NGN, Role.TF): Stratum.TRANSPORT,
        (Variant.NGN, Role.EU): Stratum.USER_SIDE,
    }
    for (v, r), s in expected.items():
        assert stratum_of(r, v) is s
    assert sum(len(t) for t in PLACEMENT.values()) == 12
    with pytest.raises(errors.UnknownRoleForVariant):
        stratum_of(Role.NASSF, "ngn")
    assert {"NACF", "MMCF"} <= TCF_CAPABILITIES[Variant.NGN]
    assert TCF_CAPABILITIES[Variant.ENGN] == {"RACF"}


def test_end_user_record_invariants():
    EndUserRecord(1, "100.64.0.1", "10.1.0.1", "AP1", RegState.REGISTERED)
    with pytest.raises(ValueError):
        EndUserRecord(1, temporary_ip="10.1.0.1")
    with pytest.raises(ValueError):
        EndUserRecord(1, mobility_mode=MobilityMode.HOST_BASED)


def test_session_path_invariants():
    with pytest.raises(ValueError):
        Session(1, 1, "NASSF", ())
    with pytest.raises(ValueError):
        Session(1, 1, "NASSF", ("TF-1", "TF-1"))


def test_engn_config_with_all_roles_accepted():
    raw = shipped_raw("engn")
    raw["processors"] = {"EU": 1, "TF": 2, "TCF": 1, "SSF": 1, "SSSuF": 1}
    cfg = validate_scenario(raw)
    assert cfg.total_processors == 6
    assert list(cfg.processors) == ["EU", "TF", "TCF", "SSF", "SSSuF"]


def test_ngn_config_with_ssf_rejected():
    raw = shipped_raw("ngn")
    raw["processors"]["SSF"] = 2
    with pytest.raises(errors.UnknownRoleForVariant):
        validate_scenario(raw)


@pytest.mark.parametrize("key", ["think", "auth"])
def test_nonpositive_rate_rejected(key):
    raw = shipped_raw("engn")
    raw["rates"][key] = 0
    with pytest.raises(errors.NonPositiveRate):
        validate_scenario(raw)


def test_disconnected_topology_rejected():
    raw = shipped_raw("engn")
    raw["topology"] = {
        "accessPoints": {"AP1": {"neighbors": [], "path": ["TF-1"]},
                         "AP2": {"neighbors": [], "path": ["TF-1"]}},
        "tfNodes": {"TF-1": {"capacity": 1}},
    }
    with pytest.raises(errors.DisconnectedTopology):
        validate_scenario(raw)


def test_asymmetric_neighbors_rejected():
    with pytest.raises(errors.InvalidTopology):
        parse_topology({"accessPoints": {"AP1": {"neighbors": ["AP2"], "path": ["TF-1"]},
                                         "AP2": {"neighbors": [], "path": ["TF-1"]}},
                        "tfNodes": {"TF-1": {"capacity": 1}}})


def test_unknown_top_level_key_rejected():
    raw = shipped_raw("engn")
    raw["thinkRate"] = 1
    with pytest.raises(errors.UnknownKey):
        validate_scenario(raw)


def test_cost_table_role_must_exist():
    raw = shipped_raw("ngn")
    raw["costTable"] = {"NASSF": {"*": 1}}
    with pytest.raises(errors.UnknownRoleForVariant):
        validate_scenario(raw)


@pytest.mark.parametrize("name", SHIPPED_CONFIGS)
def test_validate_idempotent(name):
    cfg = validate_scenario(shipped_raw(name))
    again = validate_scenario(cfg)
    assert again == cfg
    assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(cfg.to_dict(), sort_keys=True)


def test_budget_split_examples():
    assert equal_budget_split(8, "engn") == {"EU": 2, "TF": 2, "TCF": 2, "SSF": 2}
    assert equal_budget_split(6, "ngn") == {"EU": 2, "TF": 2, "TCF": 2}
    assert equal_budget_split(8, "ngn") == {"EU": 2, "TF": 4, "TCF": 2}
    with pytest.raises(errors.BudgetTooSmall):
        equal_budget_split(3, "engn")


def test_budget_split_weights():
    split = equal_budget_split(10, "engn", {"EU": 1, "TF": 2, "TCF": 1, "SSF": 1})
    assert split == {"EU": 2, "TF": 4, "TCF": 2, "SSF": 2}
    with pytest.raises(errors.MissingRole):
        equal_budget_split(10, "engn", {"EU": 1, "TF": 1})


@given(st.integers(4, 10_000), st.sampled_from(["ngn", "engn"]))
def test_budget_split_sums_exactly(total, variant):
    split = equal_budget_split(total, variant)
    assert sum(split.values()) == total
    assert min(split.values()) >= 1


@given(st.integers(5, 500), st.lists(st.floats(0.1, 10), min_size=5, max_size=5))
def test_weighted_split_sums_exactly(total, w):
    weights = dict(zip(["EU", "TF", "TCF", "SSF", "SSSuF"], w))
    try:
        split = equal_budget_split(total, "engn", weights)
    except errors.BudgetTooSmall:
        return
    assert sum(split.values()) == total


def test_overrides():
    raw = apply_overrides(shipped_raw("engn"), ["rates.auth=5", "population=7", "processors.SSSuF=1"])
    cfg = validate_scenario(raw)
    assert cfg.rates["auth"] == 5.0 and cfg.population == 7 and cfg.processors["SSSuF"] == 1
    with pytest.raises(errors.UnknownKey):
        apply_overrides(shipped_raw("engn"), ["seed=1"])
    with pytest.raises(errors.ConfigError):
        apply_overrides(shipped_raw("engn"), ["rates.auth"])


def test_load_config_errors(tmp_path):
    with pytest.raises(errors.ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(errors.ConfigError):
        load_config(bad)


def test_default_config_budget():
    cfg = default_config("engn", budget=16, population=3)
    assert cfg.processors == {"EU": 4, "TF": 4, "TCF": 4, "SSF": 4}
    assert cfg.population == 3


def test_open_population():
    cfg = validate_scenario(shipped_raw("mm1_open"))
    assert cfg.is_open and cfg.arrival_rate == 1.0
    raw = shipped_raw("mm1_open")
    raw["population"] = {"rate": 1}
    with pytest.raises(errors.UnknownKey):
        validate_scenario(raw)
