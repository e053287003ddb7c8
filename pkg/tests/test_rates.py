import math

import numpy as np
import pytest

from conftest import empty_interaction, pure_death_model
from parasitelab import OffspringLaw, luchsinger_nonlinear
from parasitelab.rates import (BaselineGenerator, EventKind,
                               LipschitzSampleConfig, ModelSpec,
                               bound_constants, check_growth,
                               check_lipschitz_sampled, enumerate_events,
                               lipschitz_F, semigroup_moment, total_rate)
from parasitelab.state import PopulationState


def test_enumerate_events_empty_state(model61):
    assert enumerate_events(model61, PopulationState.empty(), 5) == []
    assert total_rate(model61, PopulationState.empty(), 5) == 0.0


def test_enumerate_events_single_pure_death():
    pd = pure_death_model(mu=0.7)
    chans = enumerate_events(pd, PopulationState.from_dict({1: 1}), 1)
    assert len(chans) == 1
    c = chans[0]
    assert c.kind is EventKind.BASELINE_MOVE and c.load == 1 and c.target == 0
    assert c.rate == pytest.approx(0.7)


def test_enumerate_events_nonlinear_example():
    # one healthy host and one 2-host at N = 2, point-mass transmission:
    # the 2-host moves 2->1 at 2 mu and catastrophes at kappa, the healthy
    # host is infected at lam x^2 (1 - p_{20})
    lam, mu, kappa = 0.5, 1.0, 0.5
    m = luchsinger_nonlinear(lam, mu, kappa, OffspringLaw.point_mass(1))
    xi = PopulationState.from_dict({0: 1, 2: 1})
    chans = enumerate_events(m, xi, 2)
    rates = {(c.kind, c.load, c.target): c.rate for c in chans}
    assert rates[(EventKind.BASELINE_MOVE, 2, 1)] == pytest.approx(2 * mu)
    assert rates[(EventKind.BASELINE_MOVE, 2, 0)] == pytest.approx(kappa)
    assert rates[(EventKind.INTERACTION_MOVE, 0, None)] == pytest.approx(lam * 0.5)
    assert len(chans) == 3
    assert total_rate(m, xi, 2) == pytest.approx(2 * mu + kappa + lam * 0.5)


def test_total_rate_linear_in_counts(model61):
    # doubling counts and N keeps the density fixed and doubles every channel
    xi = PopulationState.from_dict({0: 3, 1: 2, 3: 1})
    xi2 = PopulationState.from_dict({0: 6, 1: 4, 3: 2})
    assert total_rate(model61, xi2, 12) == pytest.approx(
        2 * total_rate(model61, xi, 6))


def test_total_rate_pure_death_k_hosts():
    pd = pure_death_model(mu=1.0)
    assert total_rate(pd, PopulationState.from_dict({1: 7}), 7) == pytest.approx(7.0)


def test_interaction_target_sampling(model_tiny):
    xi = PopulationState.from_dict({0: 1, 2: 1})
    chans = enumerate_events(model_tiny, xi, 2)
    move = [c for c in chans if c.kind is EventKind.INTERACTION_MOVE][0]
    rng = np.random.default_rng(0)
    # point-mass transmission from the only infected host (load 2) is always 2
    assert all(move.resolve_target(rng) == 2 for _ in range(20))


def test_lipschitz_F_examples():
    zero = ModelSpec("none", pure_death_model().baseline, empty_interaction())
    assert lipschitz_F(zero, 1.0) == 0.0
    m = luchsinger_nonlinear(1.0, 1.0, 1.0, OffspringLaw.point_mass(2))
    assert lipschitz_F(m, 1.0) == pytest.approx(6.0)
    vals = [lipschitz_F(m, M) for M in (0.0, 1.0, 2.0, 4.0)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_lipschitz_F_matches_term_by_term(model61):
    # independent recomputation, term by term in a different order
    e = model61.interaction.envelopes
    for M in (0.5, 1.0, 3.0):
        terms = [
            e.a10, e.a00, e.d0, e.b11(M),
            M * (e.a11(0.0) + e.a01(0.0) + e.d1(0.0)),
            M * (e.a11(M) + e.a01(M) + e.d1(M)),
        ]
        acc = 0.0
        for t in sorted(terms):
            acc += t
        assert lipschitz_F(model61, M) == pytest.approx(acc, rel=1e-12)


def test_bound_constants_frozen_values():
    # lam = mu = kappa = 1, theta = 0.8, M_T = G_T = 2, N = 100
    m = luchsinger_nonlinear(1.0, 1.0, 1.0, OffspringLaw.poisson(0.8))
    bc = bound_constants(m, 2.0, 2.0, 100)
    assert bc.F_M == pytest.approx(8.0)
    assert bc.a0_star == 0.0
    assert bc.a1_star == 0.0          # lam (max(theta,1) - 1) with theta < 1
    assert bc.chi == pytest.approx(2.0)
    assert bc.a3 == pytest.approx(1.0)
    assert bc.H_T == pytest.approx(4.0)
    assert bc.H1 == pytest.approx(2.0)
    assert bc.H2 == pytest.approx(1.0)


def test_bound_constants_a1_star_supercritical(model61_heavy):
    e = model61_heavy.interaction.envelopes
    bc = bound_constants(model61_heavy, 1.5, 1.0, 50)
    assert bc.a1_star == pytest.approx(e.a11(0.0) - e.a01(0.0))
    assert bc.a1_star == pytest.approx(1.0 * (1.5 - 1.0))


def test_bound_constants_baseline_only():
    m = ModelSpec("plain", pure_death_model().baseline, empty_interaction())
    bc = bound_constants(m, 1.0, 1.0, 10)
    assert bc.H_T == pytest.approx(1.0)      # 2^{m2-1} m1 with m1 = m2 = 1
    assert bc.H1 == 0.0 and bc.H2 == 0.0
    assert math.isnan(bc.a3)
    assert bc.H_T >= 1.0


def test_check_growth_examples(model61):
    rep = check_growth(model61, 1000)
    assert rep.ok and rep.max_ratio <= 1.0
    # catastrophe column: rate kappa from every load >= 2, finite max
    assert rep.column_max[0] == pytest.approx(2.0)  # mu + kappa at load 1

    def bad_death(i):
        return float(i * i)

    bad = BaselineGenerator(lambda i: (), bad_death, m1=3.0, m2=1.0)
    rep = check_growth(ModelSpec("bad", bad, empty_interaction()), 50)
    assert not rep.ok
    i, lhs, rhs = rep.first_violation
    assert lhs > rhs and i * i > 3.0 * (i + 1)

    empty = BaselineGenerator(lambda i: (), lambda i: 0.0, m1=1.0, m2=1.0)
    assert check_growth(ModelSpec("empty", empty, empty_interaction()), 20).ok


def test_check_lipschitz_sampled(model61):
    rep = check_lipschitz_sampled(model61, LipschitzSampleConfig(n_pairs=200, seed=3))
    assert rep.ok, rep.ratios
    assert all(r <= 1.0 + 1e-9 for r in rep.ratios.values())


def test_check_lipschitz_constant_rates():
    # constant interaction rates have zero differences for any pair
    inter = empty_interaction()
    m = ModelSpec("const", pure_death_model().baseline, inter)
    rep = check_lipschitz_sampled(m, LipschitzSampleConfig(n_pairs=30, seed=1))
    assert rep.ok
    assert all(r == 0.0 for r in rep.ratios.values())


def test_semigroup_moment_identity_at_zero(model61):
    for i in (0, 2, 7):
        assert semigroup_moment(model61.baseline, i, 0.0, 20) == pytest.approx(i + 1)


def test_semigroup_moment_pure_death_closed_form():
    pd = pure_death_model(mu=1.0)
    for t in (0.3, 1.0, 2.5):
        assert semigroup_moment(pd.baseline, 1, t, 5) == pytest.approx(
            1.0 + math.exp(-t), abs=1e-10)


def test_semigroup_moment_bounded_by_drift(model61):
    # with w = 0 the (load + 1) moment never exceeds i + 1
    for i in (0, 1, 5, 20):
        for t in (0.1, 1.0, 2.0):
            val = semigroup_moment(model61.baseline, i, t, 80)
            assert val <= (i + 1) * (1 + 1e-9)
    with pytest.raises(ValueError):
        semigroup_moment(model61.baseline, 10, 1.0, 5)


def test_nonfinite_rate_reported_with_load_and_kind():
    import dataclasses

    from parasitelab.rates import ModelEvaluationError
    pd = pure_death_model()
    inter = dataclasses.replace(
        empty_interaction(), delta=lambda i, x: math.nan, delta_zero=False,
        alpha_loads=frozenset())
    m = ModelSpec("nan-delta", pd.baseline, inter)
    with pytest.raises(ModelEvaluationError) as exc:
        enumerate_events(m, PopulationState.from_dict({2: 1}), 1)
    assert exc.value.kind == "delta" and exc.value.load == 2


def test_misdeclared_envelope_is_detected():
    # halving the declared Lipschitz envelope must show up as ratio > 1
    lam = 1.0
    m = luchsinger_nonlinear(lam, 1.0, 1.0, OffspringLaw.poisson(0.8))
    corrupt = type(m.interaction.envelopes)(
        a01=lambda z: lam / 2.0,
        a11=m.interaction.envelopes.a11,
    )
    import dataclasses
    bad = dataclasses.replace(m.interaction, envelopes=corrupt)
    rep = check_lipschitz_sampled(ModelSpec("bad", m.baseline, bad),
                                  LipschitzSampleConfig(n_pairs=100, seed=5))
    assert not rep.ok
    assert rep.ratios["alpha-lipschitz-l1"] > 1.0
