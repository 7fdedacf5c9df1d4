import json

import numpy as np
import pytest

from oracles import repairman

from engn import errors
from engn.markov import (CtmcModel, analyze, build_ctmc, ctmc_throughput, ctmc_utilization,
                         steady_state)
from engn.model import apply_overrides, shipped_raw, validate_scenario


def two_state():
    return CtmcModel.from_transitions(2, [(0, 1, 2.0, "think"), (1, 0, 1.0, "serve")],
                                      busy=[[0.0], [1.0]], pool_names=("P",), pool_servers=(1,))


def test_two_state_chain():
    ctmc = two_state()
    pi = steady_state(ctmc)
    assert pi == pytest.approx([1 / 3, 2 / 3], abs=1e-12)
    assert ctmc_throughput(ctmc, pi, "serve") == pytest.approx(2 / 3, abs=1e-12)
    assert ctmc_utilization(ctmc, pi, "P") == pytest.approx(2 / 3, abs=1e-12)
    assert ctmc_throughput(ctmc, pi, "auth") == 0.0
    with pytest.raises(errors.UnknownAction):
        ctmc_throughput(ctmc, pi, "teleport")
    with pytest.raises(errors.UnknownRole):
        ctmc_utilization(ctmc, pi, "SSF")


def test_birth_death_truncated():
    ctmc = CtmcModel.from_transitions(3, [(0, 1, 1.0, "up"), (1, 2, 1.0, "up"),
                                          (1, 0, 2.0, "down"), (2, 1, 2.0, "down")])
    for method in ("direct", "power", "gauss-seidel"):
        pi = steady_state(ctmc, method=method)
        assert pi == pytest.approx([4 / 7, 2 / 7, 1 / 7], abs=1e-9)


def test_absorbing_chain_rejected():
    ctmc = CtmcModel.from_transitions(3, [(0, 1, 1.0, "a"), (1, 2, 1.0, "a")])
    with pytest.raises(errors.NotIrreducible):
        steady_state(ctmc)


def test_no_convergence():
    # long cycle with irregular rates mixes slowly from the uniform start
    n = 200
    rates = np.random.default_rng(0).uniform(0.01, 1.0, n)
    ctmc = CtmcModel.from_transitions(n, [(i, (i + 1) % n, rates[i], "a") for i in range(n)])
    with pytest.raises(errors.NoConvergence) as info:
        steady_state(ctmc, tol=1e-14, method="power", max_iter=100)
    assert info.value.iterations >= 100


def test_two_state_from_config(shipped):
    cfg = shipped("repairman", population=1)
    ctmc = build_ctmc(cfg)
    assert ctmc.n_states == 2
    assert ctmc.Q.toarray() == pytest.approx(np.array([[-1.0, 1.0], [2.0, -2.0]]))


def test_repairman_k2_birth_death(shipped):
    ctmc = build_ctmc(shipped("repairman", population=2))
    assert ctmc.n_states == 3
    q = ctmc.Q.toarray()
    # tridiagonal: a user only moves between thinking and the single server
    assert np.count_nonzero(np.triu(q, 2)) == 0 and np.count_nonzero(np.tril(q, -2)) == 0


@pytest.mark.parametrize("k", [1, 3, 10, 20])
def test_repairman_closed_form(shipped, k):
    rep = analyze(shipped("repairman", population=k))
    exact = repairman(k, 1.0, 2.0)
    assert rep.throughput == pytest.approx(exact["throughput"], abs=1e-10)
    assert rep.utilization["TCF"] == pytest.approx(exact["utilization"], abs=1e-10)
    assert rep.mean_response == pytest.approx(exact["mean_response"], abs=1e-10)


def test_multiserver_repairman_closed_form():
    raw = apply_overrides(shipped_raw("repairman"), ["processors.TCF=3", "population=12"])
    rep = analyze(validate_scenario(raw))
    exact = repairman(12, 1.0, 2.0, c=3)
    assert rep.throughput == pytest.approx(exact["throughput"], abs=1e-10)
    assert rep.utilization["TCF"] == pytest.approx(exact["utilization"], abs=1e-10)


def test_generator_properties(shipped):
    ctmc = build_ctmc(shipped("tandem", population=6))
    q = ctmc.Q.toarray()
    assert np.abs(q.sum(axis=1)).max() < 1e-12
    off = q - np.diag(np.diag(q))
    assert off.min() >= 0
    assert ctmc.uniformization_rate() >= ctmc.exit_rates().max()
    pi = steady_state(ctmc)
    assert abs(pi.sum() - 1) < 1e-12 and pi.min() >= 0
    assert np.abs(pi @ ctmc.Q).max() < 1e-10


def test_solvers_agree(shipped):
    ctmc = build_ctmc(shipped("engn", population=2))
    direct = steady_state(ctmc, method="direct")
    gs = steady_state(ctmc, method="gauss-seidel")
    power = steady_state(ctmc, method="power", tol=1e-12)
    assert gs == pytest.approx(direct, abs=1e-10)
    assert power == pytest.approx(direct, abs=1e-9)


def test_state_cap(shipped):
    with pytest.raises(errors.StateSpaceExceeded) as info:
        build_ctmc(shipped("engn", population=50), state_cap=1000)
    assert info.value.cap == 1000


def test_breadth_first_start(shipped):
    ctmc = build_ctmc(shipped("ngn", population=2))
    assert ctmc.states[0].tolist() == [2] + [0] * (ctmc.states.shape[1] - 1)
    assert (ctmc.states.sum(axis=1) == 2).all()


def test_idle_pool_has_zero_utilization(shipped):
    # every EU and TF phase costs nothing in the repairman config
    rep = analyze(shipped("repairman", population=4))
    assert rep.utilization["EU"] == 0.0 and rep.utilization["TF"] == 0.0


def test_open_config_rejected(shipped):
    with pytest.raises(errors.MarkovError):
        build_ctmc(shipped("mm1_open"))


def test_dump_round_trips(shipped):
    ctmc = build_ctmc(shipped("repairman", population=2))
    doc = json.loads(ctmc.dumps())
    assert doc["pools"] == {"EU": 1, "TF": 1, "TCF": 1}
    rebuilt = CtmcModel.from_transitions(len(doc["states"]), doc["transitions"])
    assert np.allclose(rebuilt.Q.toarray(), ctmc.Q.toarray())
    assert ctmc.dumps() == build_ctmc(shipped("repairman", population=2)).dumps()
