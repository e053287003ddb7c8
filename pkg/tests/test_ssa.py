import math

import numpy as np
import pytest

from conftest import STANDARD_X0, pure_death_model
from parasitelab.ode import integrate
from parasitelab.rates import EventKind
from parasitelab.ssa import (CapExceeded, simulate, state_at, sup_l1_error,
                             window_transition_count)
from parasitelab.state import PopulationState


def test_absorbing_state_no_jumps(model61):
    path = simulate(model61, PopulationState.from_dict({0: 10}), 10, 5.0, 0)
    assert path.n_jumps == 0
    assert path.final == path.initial


def test_exponential_no_jump_fraction():
    # single host, unit death rate: no jump by t = 1 with probability e^{-1}
    pd = pure_death_model(1.0)
    xi = PopulationState.from_dict({1: 1})
    runs = 10_000
    none = sum(simulate(pd, xi, 1, 1.0, s).n_jumps == 0 for s in range(runs))
    p = math.exp(-1.0)
    se = math.sqrt(p * (1 - p) / runs)
    assert abs(none / runs - p) <= 3 * se


def test_determinism_across_runs(model61, xi0_100):
    a = simulate(model61, xi0_100, 100, 1.0, 12345)
    b = simulate(model61, xi0_100, 100, 1.0, 12345)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.kinds, b.kinds)
    assert np.array_equal(a.load_from, b.load_from)
    assert np.array_equal(a.load_to, b.load_to)
    c = simulate(model61, xi0_100, 100, 1.0, 12346)
    assert not np.array_equal(a.times, c.times)


def test_host_conservation_exact(model61, xi0_100):
    # closed population: every event preserves the host count
    path = simulate(model61, xi0_100, 100, 2.0, 7)
    for t in np.linspace(0.0, 2.0, 9):
        assert state_at(path, float(t)).total_hosts == 100
    assert path.final.total_hosts == 100


def test_replay_reproduces_final(model61, xi0_100):
    path = simulate(model61, xi0_100, 100, 1.0, 99)
    assert state_at(path, 1.0) == path.final
    assert np.all(np.diff(path.times) > 0)
    assert path.times.size == 0 or path.times[-1] <= 1.0
    kinds = {path.kind(k) for k in range(path.n_jumps)}
    assert kinds <= {EventKind.BASELINE_MOVE, EventKind.INTERACTION_MOVE,
                     EventKind.IMMIGRATION, EventKind.BASELINE_DEATH,
                     EventKind.INTERACTION_DEATH}


def test_state_at_examples(model61, xi0_100):
    path = simulate(model61, xi0_100, 100, 1.0, 4)
    assert state_at(path, 0.0) == path.initial
    assert state_at(path, 1.0) == path.final
    if path.n_jumps >= 2:
        mid = 0.5 * (path.times[0] + path.times[1])
        expected = path.initial.to_dense(60).copy()
        lf, lt = int(path.load_from[0]), int(path.load_to[0])
        if lf >= 0:
            expected[lf] -= 1
        if lt >= 0:
            expected[lt] += 1
        assert state_at(path, float(mid)) == PopulationState.from_dense(expected)
    with pytest.raises(ValueError):
        state_at(path, 1.5)


def test_window_transition_counts(model61, xi0_100):
    path = simulate(model61, xi0_100, 100, 2.0, 11)
    assert window_transition_count(path, 0.7, 0.0) == 0
    assert window_transition_count(path, 0.0, 2.0) == path.n_jumps
    # disjoint windows partition the horizon: counts add up
    edges = np.linspace(0.0, 2.0, 9)
    total = sum(window_transition_count(path, float(a), float(b - a))
                for a, b in zip(edges, edges[1:]))
    assert total == path.n_jumps
    with pytest.raises(ValueError):
        window_transition_count(path, 1.5, 1.0)


def test_immigration_grows_population(model62):
    xi0 = PopulationState.from_dict({1: 45, 2: 5})
    path = simulate(model62, xi0, 50, 1.0, 21)
    kinds = [path.kind(k) for k in range(path.n_jumps)]
    assert EventKind.IMMIGRATION in kinds


def test_first_moment_vs_pure_birth_bound(model62):
    # mean host count stays under the pure-birth comparison bound
    N, T, runs = 50, 1.0, 300
    xi0 = PopulationState.from_dict({1: 45, 2: 5})
    e = model62.interaction.envelopes
    bound = N * (1.0 + e.b10 / e.b01(0.0)) * math.exp(T * e.b01(0.0))
    finals = [simulate(model62, xi0, N, T, s).final.total_hosts
              for s in range(runs)]
    mean = float(np.mean(finals))
    se = float(np.std(finals, ddof=1)) / math.sqrt(runs)
    assert mean <= bound + 3 * se


def test_cap_exceeded_carries_partial_path(model61, xi0_100):
    with pytest.raises(CapExceeded) as exc:
        simulate(model61, xi0_100, 100, 2.0, 3, event_cap=5)
    partial = exc.value.partial
    assert partial.n_jumps == 5
    assert partial.times[-1] < 2.0


def test_sup_l1_error_zero_rate_exact():
    # absorbing state and constant trajectory: the error is exactly the gap
    pd = pure_death_model(1.0)
    sol = integrate(pd, np.array([1.0, 0.0]), 1.0, J=1)
    path = simulate(pd, PopulationState.from_dict({0: 4}), 4, 1.0, 0)
    err = sup_l1_error(path, sol, 4)
    assert err.value == pytest.approx(0.0, abs=1e-12)
    assert float(err) == err.value


def test_sup_l1_error_zero_jump_moving_ode(model61):
    # all-healthy population is absorbing but a seeded trajectory moves
    sol = integrate(model61, STANDARD_X0, 1.0, J=54)
    path = simulate(model61, PopulationState.from_dict({0: 10}), 10, 1.0, 0)
    assert path.n_jumps == 0
    err = sup_l1_error(path, sol, 10)
    brute = max(float(np.abs(np.pad(np.array([1.0]), (0, 54)) - sol.density(t)).sum())
                for t in np.linspace(0, 1, 2001))
    assert err.value == pytest.approx(brute, abs=err.slack + 1e-9)


def test_sup_l1_error_self_refinement(model61, xi0_100, sol61_T1):
    path = simulate(model61, xi0_100, 100, 1.0, 42)
    coarse = sup_l1_error(path, sol61_T1, 100, refine=64)
    fine = sup_l1_error(path, sol61_T1, 100, refine=640)
    assert fine.value >= coarse.value - 1e-12
    assert fine.value - coarse.value <= coarse.slack + 1e-12
    assert fine.slack < coarse.slack


def test_sup_l1_error_horizon_mismatch(model61, xi0_100, sol61):
    path = simulate(model61, xi0_100, 100, 1.0, 1)
    with pytest.raises(ValueError, match="horizon"):
        sup_l1_error(path, sol61, 100)


def test_path_csv_dump(tmp_path, model61, xi0_100):
    path = simulate(model61, xi0_100, 100, 0.5, 8)
    f = tmp_path / "path.csv"
    path.write_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == f"# model=luchsinger_nonlinear N=100 T=0.5 seed=8"
    assert lines[1] == "jump_index,time,event_kind,load_from,load_to"
    assert len(lines) == 2 + path.n_jumps
