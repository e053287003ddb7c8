"""Simulation and verification lab for countable-type host-parasite models.

Layers, from the bottom up:

  - ``state``: population states, density vectors, the host/parasite norms.
  - ``rates``: model specification, event channels, computable constants,
    sampled hypothesis certificates.
  - ``models``: the example model constructors and offspring laws.
  - ``ode``: the deterministic limit system and its certified solver.
  - ``ssa``: exact event-driven simulation of the interacting process.
  - ``tilde``: the independent-individuals auxiliary process.
  - ``coupling``: the joint construction of both processes on one
    probability space, with pathwise decoupling accounting.
  - ``harness``: experiment orchestration, convergence studies and CSV
    emission; ``cli`` exposes it all as subcommands.
  - ``oracle``: brute-force transient analysis of tiny instances
    (test support only; nothing else imports it).
"""

from .state import (
    BoundM,
    DensityVector,
    PopulationState,
    l1_norm,
    l11_norm,
    lemma_a1_sides,
    scale,
)
from .rates import (
    BaselineGenerator,
    BoundConstants,
    Channel,
    Envelopes,
    EventKind,
    InteractionSpec,
    ModelSpec,
    bound_constants,
    check_growth,
    check_lipschitz_sampled,
    enumerate_events,
    lipschitz_F,
    semigroup_moment,
    total_rate,
)
from .models import (
    OffspringLaw,
    kretzschmar_modified,
    luchsinger_linear,
    luchsinger_nonlinear,
)
from .ode import (
    BlowUpError,
    OdeSolution,
    drift,
    ic_continuity_probe,
    integrate,
    mild_residual,
    semigroup_apply,
)
from .ssa import (
    CapExceeded,
    PathRecord,
    SupL1Error,
    simulate,
    state_at,
    sup_l1_error,
    window_transition_count,
)
from .tilde import (
    DominatingRateError,
    TildeRates,
    concentration_check,
    mean_identity_check,
    moment_bound_check,
    simulate_individual,
    simulate_tilde,
    window_fluctuation_check,
)
from .coupling import (
    CoupledRun,
    CouplingInvariantError,
    CouplingState,
    compensator_intensity,
    martingale_balance_check,
    simulate_coupled,
)
from .harness import (
    ExperimentConfig,
    build_model,
    replica_seed,
    round_initial,
    run_certificates,
    run_convergence,
)

__all__ = [name for name in dir() if not name.startswith("_")]
