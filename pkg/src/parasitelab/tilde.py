"""Auxiliary process of independent individuals driven by the limit flow.

Each individual follows the within-host baseline plus interaction rates
frozen at the deterministic trajectory (so individuals never see each
other), and immigrants arrive by an inhomogeneous Poisson process whose
rate is the immigration evaluator along the same trajectory.  The mean
of the aggregate process is exactly N times the limit solution, which
is what the moment and concentration checks certify empirically.

Time-varying rates are simulated by thinning: candidates are proposed
at the declared dominating rate (envelope constants evaluated at the
trajectory's sup host norm) and accepted with actual/dominating
evaluated at the candidate time.  An actual rate above its dominator is
a hard error: it means the model's envelope declarations are wrong.

Per-individual draw order: one exponential per candidate, one uniform
for the candidate class (baseline moves consume it fully, including the
target choice), then one acceptance uniform plus the model's target
draws for interaction candidates.  Individuals get independent child
seeds in a fixed order (initial hosts ascending by load then index, the
immigration clock, then immigrants in arrival order), so permuting
hosts never changes the aggregate law and the merged path is
reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ode import OdeSolution
from .rates import EventKind, ModelSpec, bound_constants
from .ssa import PathRecord, _KIND_INDEX, _apply_event
from .state import PopulationState, l11_norm

_SOUNDNESS_TOL = 1e-9


class DominatingRateError(RuntimeError):
    """An evaluated rate exceeded its declared dominator (broken envelopes)."""

    def __init__(self, kind: str, load: int, actual: float, dominator: float, t: float):
        super().__init__(
            f"{kind} rate {actual:.6g} exceeds dominator {dominator:.6g} "
            f"at load {load}, t = {t:.6g}")


@dataclass
class TildeRates:
    """Interaction rates frozen at the limit trajectory, plus dominators.

    The dominating constants come from the declared envelopes evaluated
    at zero and scaled by the trajectory's sup host norm; structural
    zeros (loads without interaction moves, models without excess death
    or immigration) get zero dominators, which keeps thinning free for
    those channels.
    """

    model: ModelSpec
    ode: OdeSolution
    N: int

    def __post_init__(self):
        e = self.model.interaction.envelopes
        g = self.ode.G_T
        self.alpha_dom = e.alpha_dominator(g)
        self.delta_dom = 0.0 if self.model.interaction.delta_zero else e.delta_dominator(g)
        self.beta_dom = 0.0 if self.model.interaction.beta_zero else e.beta_dominator(g)

    def alpha_dom_at(self, i: int) -> float:
        loads = self.model.interaction.alpha_loads
        if loads is not None and i not in loads:
            return 0.0
        return self.alpha_dom

    def density(self, t: float) -> np.ndarray:
        return self.ode.density(t)

    def alpha_total_at(self, i: int, t: float) -> float:
        a = self.model.interaction.alpha_total_at(i, self.density(t))
        dom = self.alpha_dom_at(i)
        if a > dom * (1.0 + _SOUNDNESS_TOL):
            raise DominatingRateError("interaction-move", i, a, dom, t)
        return a

    def delta_at(self, i: int, t: float) -> float:
        d = self.model.interaction.delta_at(i, self.density(t))
        if d > self.delta_dom * (1.0 + _SOUNDNESS_TOL):
            raise DominatingRateError("interaction-death", i, d, self.delta_dom, t)
        return d

    def beta_total_at(self, t: float) -> float:
        b = self.model.interaction.beta_total_at(self.density(t))
        if b > self.beta_dom * (1.0 + _SOUNDNESS_TOL):
            raise DominatingRateError("immigration", -1, b, self.beta_dom, t)
        return b


@dataclass
class IndividualPath:
    """One individual's trajectory: jump list and survival status."""

    start_load: int
    start_time: float
    events: list[tuple[float, int, int, int]] = field(default_factory=list)
    alive: bool = True
    final_load: Optional[int] = None


def simulate_individual(rates: TildeRates, i0: int, t0: float, T: float,
                        seed) -> IndividualPath:
    """Exact thinned realization of one individual from (i0, t0) to T.

    Baseline moves and death are time-homogeneous and drawn exactly;
    the trajectory-frozen interaction move and excess-death rates are
    thinned against their dominators.  Death ends the trajectory (the
    cemetery never appears in any count).
    """
    if t0 > T:
        raise ValueError("t0 must be <= T")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    base = rates.model.baseline
    inter = rates.model.interaction
    path = IndividualPath(i0, t0)
    i = i0
    t = t0
    while True:
        astar = base.alpha_star(i)
        dbar = base.dbar(i)
        a_dom = rates.alpha_dom_at(i)
        dom = astar + dbar + a_dom + rates.delta_dom
        if dom <= 0.0:
            break
        t += rng.exponential(1.0 / dom)
        if t > T:
            break
        u = rng.random() * dom
        if u < astar:
            targets, mrates = base.move_table(i)
            acc = 0.0
            chosen = None
            for jt, r in zip(targets, mrates):
                acc += float(r)
                if u < acc:
                    chosen = int(jt)
                    break
            if chosen is None:
                chosen = int(targets[-1])  # guards the last-ulp rounding gap
            path.events.append((t, _KIND_INDEX[EventKind.BASELINE_MOVE], i, chosen))
            i = chosen
        elif u < astar + dbar:
            path.events.append((t, _KIND_INDEX[EventKind.BASELINE_DEATH], i, -1))
            path.alive = False
            return path
        elif u < astar + dbar + a_dom:
            a = rates.alpha_total_at(i, t)
            if rng.random() * a_dom < a:
                target = int(inter.alpha_sample(i, rates.density(t), rng))
                path.events.append((t, _KIND_INDEX[EventKind.INTERACTION_MOVE], i, target))
                i = target
        else:
            d = rates.delta_at(i, t)
            if rng.random() * rates.delta_dom < d:
                path.events.append((t, _KIND_INDEX[EventKind.INTERACTION_DEATH], i, -1))
                path.alive = False
                return path
    path.final_load = i
    return path


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def simulate_tilde(model: ModelSpec, xi0: PopulationState, N: int, T: float,
                   ode: OdeSolution, seed) -> PathRecord:
    """Superposed independent-individuals path as an aggregate record.

    One individual per initial host plus Poisson immigrants (rate N
    times the frozen immigration evaluator, realized by thinning).
    Events are merged by time with ties broken by individual index.
    """
    if ode.blow_up or ode.t_end < T - 1e-12:
        raise ValueError("the limit solution must span [0, T] without blow-up")
    rates = TildeRates(model, ode, N)
    ss = _seed_sequence(seed)
    n_init = xi0.total_hosts
    children = ss.spawn(n_init + 1)

    events: list[tuple[float, int, int, int, int]] = []
    idx = 0
    for load, count in xi0:
        for _ in range(count):
            ind = simulate_individual(rates, load, 0.0, T, np.random.default_rng(children[idx]))
            events.extend((t, idx, k, lf, lt) for t, k, lf, lt in ind.events)
            idx += 1

    imm_rng = np.random.default_rng(children[n_init])
    total_dom = N * rates.beta_dom
    t = 0.0
    while total_dom > 0.0:
        t += imm_rng.exponential(1.0 / total_dom)
        if t > T:
            break
        b = rates.beta_total_at(t)
        if imm_rng.random() * rates.beta_dom < b:
            load = int(model.interaction.beta_sample(rates.density(t), imm_rng))
            events.append((t, idx, _KIND_INDEX[EventKind.IMMIGRATION], -1, load))
            ind = simulate_individual(rates, load, t, T, np.random.default_rng(ss.spawn(1)[0]))
            events.extend((te, idx, k, lf, lt) for te, k, lf, lt in ind.events)
            idx += 1

    events.sort(key=lambda e: (e[0], e[1]))
    times = np.array([e[0] for e in events])
    kinds = np.array([e[2] for e in events], dtype=np.int8)
    lfrom = np.array([e[3] for e in events], dtype=np.int64)
    lto = np.array([e[4] for e in events], dtype=np.int64)

    counts = xi0.to_dense(max(xi0.max_load + 1, 1)).copy()
    for k in range(times.size):
        counts = _apply_event(counts, int(kinds[k]), int(lfrom[k]), int(lto[k]))
    seed_repr = seed if isinstance(seed, int) else -1
    return PathRecord(model.name + "~", N, T, seed_repr, xi0,
                      times, kinds, lfrom, lto, PopulationState.from_dense(counts))


def _counts_at_times(path: PathRecord, ts: Sequence[float], width: int) -> np.ndarray:
    """Aggregate counts at the query times (rows) by one replay sweep."""
    out = np.zeros((len(ts), width), dtype=np.float64)
    counts = np.zeros(width, dtype=np.int64)
    dense0 = path.initial.to_dense()
    counts[: dense0.size] = dense0
    k = 0
    order = np.argsort(ts)
    for row in order:
        t = ts[row]
        while k < path.n_jumps and path.times[k] <= t:
            lf, lt = int(path.load_from[k]), int(path.load_to[k])
            if lf >= 0:
                counts[lf] -= 1
            if lt >= 0:
                if lt >= counts.size:
                    counts = np.concatenate(
                        [counts, np.zeros(lt + 1 - counts.size, dtype=np.int64)])
                    out = np.hstack([out, np.zeros((out.shape[0], counts.size - width))])
                    width = counts.size
                counts[lt] += 1
            k += 1
        out[row, : counts.size] = counts
    return out


@dataclass
class MomentBoundReport:
    """Empirical l11 moment of the aggregate vs the exponential bound."""

    bound: float
    empirical_sup: float
    margin: float
    grid: np.ndarray
    empirical: np.ndarray
    replicas: int

    @property
    def ok(self) -> bool:
        # the bound is attained exactly at t = 0 when the growth
        # exponent vanishes; don't fail on roundoff at equality
        return self.empirical_sup <= self.bound * (1.0 + 1e-12) + 1e-12


def moment_bound_check(model: ModelSpec, xi0: PopulationState, N: int, T: float,
                       ode: OdeSolution, replicas: int, seed,
                       n_grid: int = 9) -> MomentBoundReport:
    """Estimate sup_t N^{-1} sum_l (l+1) E X~^l(t) against its bound.

    The bound is (N^{-1} ||X(0)||_11 + T (b10 + b11(0) M_T)) exponentially
    amplified at rate w + a0* + a1* M_T.
    """
    e = model.interaction.envelopes
    bc = bound_constants(model, max(ode.M_T, 1.0), max(ode.G_T, 1.0), N)
    M = max(ode.M_T, 1.0)
    bound = (l11_norm(xi0.to_dense()) / N + T * (e.b10 + e.b11(0.0) * M)) \
        * math.exp((model.baseline.w + bc.a0_star + bc.a1_star * M) * T)
    grid = np.linspace(0.0, T, n_grid)
    ss = _seed_sequence(seed)
    acc = np.zeros(n_grid)
    width = 1
    for child in ss.spawn(replicas):
        path = simulate_tilde(model, xi0, N, T, ode, child)
        width = max(width, int(path.load_to.max(initial=0)) + 1,
                    path.initial.max_load + 1)
        counts = _counts_at_times(path, grid, width)
        w = np.arange(1, counts.shape[1] + 1, dtype=np.float64)
        acc += (counts @ w) / N
    emp = acc / replicas
    sup = float(emp.max())
    return MomentBoundReport(bound, sup, bound - sup, grid, emp, replicas)


@dataclass
class MeanIdentityRow:
    t: float
    load: int
    empirical: float
    target: float           # N x^j(t)
    std_err: float
    z: float


@dataclass
class MeanIdentityReport:
    """Per-load aggregate means against N x(t) at the check times."""

    rows: list[MeanIdentityRow]
    replicas: int
    worst_z: float

    @property
    def ok(self) -> bool:
        return self.worst_z <= 3.0


def mean_identity_check(model: ModelSpec, xi0: PopulationState, N: int, T: float,
                        ode: OdeSolution, replicas: int, seed,
                        ts: Sequence[float] = (), max_load: int = 12) -> MeanIdentityReport:
    """Per-load empirical means of the aggregate against N x(t).

    The standard error gets a model floor sqrt(N x^j / R): the per-load
    count is a sum of independent indicators plus a Poisson term, so its
    variance never exceeds its mean, which keeps the z-score meaningful
    at loads too rare for a stable sample variance.
    """
    ts = list(ts) if len(list(ts)) else [T / 2, T]
    width = max(xi0.max_load + 1, ode.J + 1, max_load + 1)
    sums = np.zeros((len(ts), width))
    sumsq = np.zeros((len(ts), width))
    ss = _seed_sequence(seed)
    for child in ss.spawn(replicas):
        path = simulate_tilde(model, xi0, N, T, ode, child)
        counts = _counts_at_times(path, ts, width)
        sums[:, : counts.shape[1]] += counts
        sumsq[:, : counts.shape[1]] += counts ** 2
    rows: list[MeanIdentityRow] = []
    worst = 0.0
    for g, t in enumerate(ts):
        x = ode.density(float(t))
        for j in range(max_load + 1):
            mean = sums[g, j] / replicas
            var = max(sumsq[g, j] / replicas - mean ** 2, 0.0)
            target = N * (x[j] if j < x.size else 0.0)
            se = max(math.sqrt(var / replicas),
                     math.sqrt(max(target, 1e-12) / replicas))
            z = abs(mean - target) / se
            worst = max(worst, z)
            rows.append(MeanIdentityRow(float(t), j, mean, target, se, z))
    return MeanIdentityReport(rows, replicas, worst)


@dataclass
class ConcentrationReport:
    """Mean l1 distance of the aggregate from N x(t) vs the sqrt(N log N) bound."""

    grid: np.ndarray
    empirical_mean: np.ndarray
    std_err: np.ndarray
    bound: float
    tail_thresholds: dict[float, float]
    tail_frequency: dict[float, float]
    replicas: int

    @property
    def ok(self) -> bool:
        return bool(np.all(self.empirical_mean <= self.bound))


def concentration_check(model: ModelSpec, xi0: PopulationState, N: int, T: float,
                        ode: OdeSolution, replicas: int, seed,
                        n_grid: int = 9,
                        tail_K: Sequence[float] = (0.5, 1.0)) -> ConcentrationReport:
    """Empirical E || X~(t) - N x(t) ||_1 at grid times against its bound.

    Also records, for each configured K, the frequency of the distance
    exceeding K (M_T + 1) sqrt(N) log^{3/2} N at any grid time.
    """
    if N < 9:
        raise ValueError("the concentration bound needs N >= 9")
    grid = np.linspace(0.0, T, n_grid)
    M = max(ode.M_T, 1.0)
    bound = 3.0 * (M + 1.0) * math.sqrt(N * math.log(N))
    thresholds = {K: K * (M + 1.0) * math.sqrt(N) * math.log(N) ** 1.5 for K in tail_K}
    ss = _seed_sequence(seed)
    dists = np.zeros((replicas, n_grid))
    exceed = {K: 0 for K in tail_K}
    for r, child in enumerate(ss.spawn(replicas)):
        path = simulate_tilde(model, xi0, N, T, ode, child)
        width = max(ode.J + 1, int(path.load_to.max(initial=0)) + 1,
                    path.initial.max_load + 1)
        counts = _counts_at_times(path, grid, width)
        for g, t in enumerate(grid):
            x = ode.density(float(t))
            diff = counts[g].copy()
            diff[: x.size] -= N * x
            dists[r, g] = np.abs(diff).sum()
        worst = dists[r].max()
        for K, thr in thresholds.items():
            exceed[K] += worst > thr
    mean = dists.mean(axis=0)
    se = dists.std(axis=0, ddof=1) / math.sqrt(replicas)
    freq = {K: exceed[K] / replicas for K in tail_K}
    return ConcentrationReport(grid, mean, se, bound, thresholds, freq, replicas)


@dataclass
class WindowFluctuationReport:
    """Short-window jump counts conditioned on starting near N x(t)."""

    h: float
    threshold_jumps: float
    windows_checked: int
    exceedances: int

    @property
    def frequency(self) -> float:
        return self.exceedances / self.windows_checked if self.windows_checked else 0.0


def window_fluctuation_check(model: ModelSpec, xi0: PopulationState, N: int,
                             T: float, ode: OdeSolution, replicas: int, seed,
                             K: float = 1.0, a: float = 2.0,
                             starts: int = 8) -> WindowFluctuationReport:
    """Count jumps of the aggregate in windows of the admissible length.

    Windows start at grid times where the aggregate sits within
    K sqrt(N) log^{3/2} N of N x(t); the admissible window length is
    1 / (2 ceil(N M_T)^{m2} H_T) and the jump count is compared to
    K sqrt(N) log^{3/2} N + a log N.  K and a are free parameters of
    the statement and exposed as configuration.
    """
    M = max(ode.M_T, 1.0)
    bc = bound_constants(model, M, max(ode.G_T, 1.0), N)
    m2 = model.baseline.m2
    h = 1.0 / (2.0 * math.ceil(N * M) ** m2 * bc.H_T)
    near = K * math.sqrt(N) * math.log(N) ** 1.5
    threshold = near + a * math.log(N)
    ss = _seed_sequence(seed)
    checked = 0
    exceed = 0
    start_ts = np.linspace(0.0, T - h, starts)
    for child in ss.spawn(replicas):
        path = simulate_tilde(model, xi0, N, T, ode, child)
        width = max(ode.J + 1, int(path.load_to.max(initial=0)) + 1,
                    path.initial.max_load + 1)
        counts = _counts_at_times(path, start_ts, width)
        for g, t in enumerate(start_ts):
            x = ode.density(float(t))
            diff = counts[g].copy()
            diff[: x.size] -= N * x
            if np.abs(diff).sum() > near:
                continue
            checked += 1
            lo = int(np.searchsorted(path.times, t, side="right"))
            hi = int(np.searchsorted(path.times, t + h, side="right"))
            if hi - lo > threshold:
                exceed += 1
    return WindowFluctuationReport(h, threshold, checked, exceed)
