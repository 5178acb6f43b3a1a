"""Particle filter driver with adaptive, forest-structured interaction.

One step ``n-1 -> n`` of `step`:

1. form per-particle masses ``c[i] = W[i] * g(n-1, state[i])``,
2. rebuild the topology tree, store ``(1, c[i])`` on the leaves, populate,
3. pick a forest with `forestsmc.selection.choose_forest` at threshold tau,
4. set ``W_new[i]`` to the mass mean of particle ``i``'s tree, draw an
   ancestor from that tree, and propagate through the model transition.

The recorded ESS of the new weights is then guaranteed to be at least
``tau * N``.

Reproducibility.  All randomness flows through `numpy.random.Generator`
instances derived with `rng_for(seed, *path)`, where ``path`` is a tuple of
integers naming the stream; the scheme is
``SeedSequence((seed, *path)) -> default_rng``.  `run_filter` uses
``(seed, *stream, step, channel)`` with the channels `CH_INIT`, `CH_PERM`
and `CH_STEP`; inside `step` the per-step generator is split once with
``rng.spawn(2)`` into the ancestor stream (consumed in particle-index
order) and the propagation stream (consumed as one batched draw).  Equal
seeds therefore reproduce runs bit for bit, independently of how grid
points are scheduled.

Models are duck-typed and vectorized over the particle axis:

    sample_initial(n, rng)    -> array of n initial states
    sample_transition(x, rng) -> array of next states given parent states x
    potential(n, x)           -> positive weights g_n(x), elementwise
    log_potential(n, x)       -> optional, used in log-space mode

Weights are kept linear by default.  With ``log_space=True`` the system
stores log-weights and every step runs the tree machinery on
max-stabilized masses ``exp(log c - max(log c))``, which leaves the ESS,
the chosen forest and the ancestor distributions unchanged (all are
scale-invariant in c) while surviving potentials that would underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np

from .ess import ess_weights
from .sampling import assign_ancestors, generate_u, weight_update_all
from .selection import choose_forest
from .tree import BranchingSpec, build_tree, default_branching

__all__ = [
    "CH_INIT",
    "CH_PERM",
    "CH_STEP",
    "CH_VERIFY",
    "RESAMPLE_MODES",
    "Model",
    "ParticleSystem",
    "StepRecord",
    "rng_for",
    "init",
    "step",
    "run_filter",
    "ess_current",
    "estimate_z",
    "estimate_pi",
]

CH_INIT = 0
CH_PERM = 1
CH_STEP = 2
CH_VERIFY = 3

RESAMPLE_MODES = (
    "categorical",
    "inverse-iid",
    "inverse-systematic",
    "inverse-stratified",
)


class Model(Protocol):
    """State-space model interface; all methods vectorized over particles."""

    def sample_initial(self, n: int, rng: np.random.Generator) -> np.ndarray: ...

    def sample_transition(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...

    def potential(self, n: int, x: np.ndarray) -> np.ndarray: ...


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Named random stream: ``default_rng(SeedSequence((seed, *path)))``."""
    return np.random.default_rng(np.random.SeedSequence(tuple(int(v) for v in (seed, *path))))


@dataclass
class ParticleSystem:
    """States and weights of an N-particle system at step ``n``.

    Exactly one of ``weights`` (linear) and ``log_weights`` is set, fixed at
    initialization.  ``ancestors`` holds the indices drawn by the most
    recent step (None before the first step).
    """

    states: np.ndarray
    n: int
    weights: np.ndarray | None = None
    log_weights: np.ndarray | None = None
    ancestors: np.ndarray | None = None

    def __post_init__(self):
        if (self.weights is None) == (self.log_weights is None):
            raise ValueError("set exactly one of weights and log_weights")

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def log_space(self) -> bool:
        return self.log_weights is not None


@dataclass(frozen=True)
class StepRecord:
    """Per-step diagnostics: ESS of the new weights, interaction cost, and
    the running normalizing-constant estimate."""

    n: int
    ess: float
    degree: float
    z_estimate: float
    strategy: str
    tau: float


def init(model: Model, n: int, rng: np.random.Generator, *, log_space: bool = False) -> ParticleSystem:
    """Fresh system: ``n`` independent initial states and unit weights."""
    if n < 1:
        raise ValueError("need at least one particle")
    states = np.asarray(model.sample_initial(n, rng))
    if states.shape[0] != n:
        raise ValueError("model.sample_initial returned the wrong number of states")
    if log_space:
        return ParticleSystem(states=states, n=0, log_weights=np.zeros(n))
    return ParticleSystem(states=states, n=0, weights=np.ones(n))


def ess_current(sys: ParticleSystem) -> float:
    """ESS of the current weights, ``(sum W)^2 / sum W^2``."""
    if sys.log_space:
        w = np.exp(sys.log_weights - sys.log_weights.max())
        return ess_weights(w)
    return ess_weights(sys.weights)


def estimate_z(sys: ParticleSystem) -> float:
    """Normalizing-constant estimate ``mean(W)``; exactly 1 at step 0."""
    if sys.log_space:
        m = sys.log_weights.max()
        return float(math.exp(m + math.log(np.exp(sys.log_weights - m).sum()) - math.log(sys.n_particles)))
    return float(sys.weights.mean())


def estimate_pi(sys: ParticleSystem, phi) -> float:
    """Self-normalized estimate ``sum(W * phi(state)) / sum(W)``."""
    vals = np.asarray(phi(sys.states), dtype=np.float64)
    if sys.log_space:
        w = np.exp(sys.log_weights - sys.log_weights.max())
    else:
        w = sys.weights
    return float(np.dot(w, vals) / w.sum())


def _log_potential(model, n, x) -> np.ndarray:
    lg = getattr(model, "log_potential", None)
    if lg is not None:
        return np.asarray(lg(n, x), dtype=np.float64)
    return np.log(np.asarray(model.potential(n, x), dtype=np.float64))


def step(
    sys: ParticleSystem,
    model: Model,
    tau: float,
    strategy,
    spec: BranchingSpec,
    rng: np.random.Generator,
    resample_mode: str = "categorical",
    instrument=None,
) -> StepRecord:
    """Advance the system by one step in place and return its diagnostics.

    ``rng`` is this step's generator; it is split once into the ancestor and
    propagation streams.  ``resample_mode`` selects independent tree-descent
    draws (``categorical``) or inverse-transform selection driven by an iid,
    systematic or stratified u-sequence.
    """
    if resample_mode not in RESAMPLE_MODES:
        raise ValueError(f"unknown resample mode {resample_mode!r}")
    n_part = sys.n_particles
    if spec.n_leaves != n_part:
        raise ValueError("branching spec does not match the particle count")
    a_rng, p_rng = rng.spawn(2)

    if sys.log_space:
        log_c = sys.log_weights + _log_potential(model, sys.n, sys.states)
        if not np.all(np.isfinite(log_c)):
            raise ValueError("non-finite log mass; check the model potential")
        shift = float(log_c.max())
        c = np.exp(log_c - shift)
    else:
        g = np.asarray(model.potential(sys.n, sys.states), dtype=np.float64)
        c = sys.weights * g
        if not np.all(np.isfinite(c)) or np.any(c <= 0.0):
            raise ValueError(
                "particle mass underflowed or is not finite; "
                "rerun with log_space=True or rescale the potential"
            )
        shift = 0.0

    tree = build_tree(spec)
    tree.set_leaf_values(c)
    tree.populate()
    forest = choose_forest(tree, tree.root, tau, strategy, c=c, instrument=instrument)

    w_new = weight_update_all(forest)
    if resample_mode == "categorical":
        ancestors = assign_ancestors(forest, rng=a_rng)
    else:
        u = generate_u(resample_mode.removeprefix("inverse-"), n_part, a_rng)
        ancestors = assign_ancestors(forest, u=u)

    sys.states = np.asarray(model.sample_transition(sys.states[ancestors], p_rng))
    sys.ancestors = ancestors
    if sys.log_space:
        sys.log_weights = np.log(w_new) + shift
    else:
        sys.weights = w_new
    sys.n += 1

    return StepRecord(
        n=sys.n,
        ess=ess_current(sys),
        degree=forest.avg_degree(),
        z_estimate=estimate_z(sys),
        strategy=_strategy_name(strategy),
        tau=tau,
    )


def _strategy_name(strategy) -> str:
    return strategy if isinstance(strategy, str) else strategy.kind


def run_filter(
    model: Model,
    n_particles: int,
    n_steps: int,
    tau: float,
    strategy,
    *,
    branching=None,
    seed: int = 0,
    stream: tuple[int, ...] = (0,),
    resample_mode: str = "categorical",
    log_space: bool = False,
    permute: bool = True,
) -> tuple[ParticleSystem, list[StepRecord]]:
    """Run the filter for ``n_steps`` steps and return the final system and
    one `StepRecord` per step.

    ``branching`` gives the per-level child counts (derived from the particle
    count when omitted).  With ``permute=True`` the particle-to-leaf
    assignment is redrawn each step from the `CH_PERM` stream, so which
    particles share a device subtree changes over time.  ``stream`` namespaces
    all random draws of this run, e.g. a replicate index.
    """
    levels = tuple(branching) if branching is not None else default_branching(n_particles)
    base = BranchingSpec(levels=levels)
    if base.n_leaves != n_particles:
        raise ValueError("product of branching factors must equal the particle count")
    stream = tuple(int(v) for v in stream)
    sys = init(model, n_particles, rng_for(seed, *stream, 0, CH_INIT), log_space=log_space)
    records: list[StepRecord] = []
    for n in range(1, n_steps + 1):
        if permute:
            perm = rng_for(seed, *stream, n, CH_PERM).permutation(n_particles)
            spec = replace(base, permutation=tuple(int(i) for i in perm))
        else:
            spec = base
        rec = step(
            sys,
            model,
            tau,
            strategy,
            spec,
            rng_for(seed, *stream, n, CH_STEP),
            resample_mode=resample_mode,
        )
        records.append(rec)
    return sys, records
