"""Parallel Glauber dynamics over feasible schedules.

Each slot a random decision schedule (an independent set) is drawn; every
link in it that hears no active neighbor from the previous slot turns on
with probability lam/(1+lam), otherwise turns off; links outside the
decision schedule keep their state.  The chain is reversible with a
product-form stationary law proportional to prod_{active} lam_v.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import (
    ContractViolationError,
    DimensionError,
    EnumerationLimitError,
    ParameterError,
)
from .graph import InterferenceGraph, Schedule, ScheduleSpace, mask_is_feasible

# Above this value of n * max|log lam| the product-form weights are
# computed in the log domain to dodge overflow/underflow.
LOG_DOMAIN_THRESHOLD = 600.0


@dataclass(frozen=True)
class FugacityVector:
    """Per-link fugacities lam_v > 0; activation odds of a free link."""

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise DimensionError("fugacities must be a 1-d vector")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
            raise ParameterError("fugacities must be finite and > 0")
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, n: int, lam: float) -> "FugacityVector":
        return cls(np.full(n, float(lam)))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def activation(self) -> np.ndarray:
        """On-probability lam/(1+lam) of a link with an idle neighborhood."""
        return self.values / (1.0 + self.values)


@dataclass(frozen=True)
class IntentRule:
    """Contention by INTENT messages: link v announces with probability
    a_v and enters the decision schedule iff no neighbor announced."""

    a: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 1:
            raise DimensionError("intent probabilities must be a 1-d vector")
        if np.any(a <= 0.0) or np.any(a >= 1.0):
            raise ParameterError("intent probabilities must lie strictly in (0, 1)")
        object.__setattr__(self, "a", a)

    @classmethod
    def uniform(cls, n: int, a: float = 0.5) -> "IntentRule":
        return cls(np.full(n, float(a)))


@dataclass(frozen=True)
class ExplicitRule:
    """Decision schedules drawn from an explicit finite distribution."""

    masks: tuple[int, ...]
    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.shape[0] != len(self.masks):
            raise DimensionError("one probability per decision schedule required")
        if np.any(probs < 0.0):
            raise ParameterError("decision schedule probabilities must be >= 0")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ParameterError(
                f"decision schedule probabilities sum to {probs.sum():.12g}, expected 1"
            )
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "masks", tuple(int(m) for m in self.masks))

    def validate_for(self, g: InterferenceGraph) -> None:
        for m in self.masks:
            if m >> g.n:
                raise DimensionError(f"decision schedule {m:#x} does not fit n={g.n}")
            if not mask_is_feasible(g, m):
                raise ContractViolationError(
                    f"decision schedule {m:#x} is not an independent set"
                )

    def cumulative(self) -> np.ndarray:
        cache = self.__dict__.get("_cum_cache")
        if cache is None:
            cache = np.cumsum(self.probs)
            self.__dict__["_cum_cache"] = cache
        return cache


DecisionRule = Union[IntentRule, ExplicitRule]


@dataclass(frozen=True)
class ChainState:
    schedule: Schedule
    slot: int = 0


def _check_rule(g: InterferenceGraph, rule: DecisionRule) -> None:
    if isinstance(rule, IntentRule):
        if rule.a.shape[0] != g.n:
            raise DimensionError(f"intent vector has {rule.a.shape[0]} entries, graph has {g.n}")
    elif isinstance(rule, ExplicitRule):
        rule.validate_for(g)
    else:
        raise ContractViolationError(f"unknown decision rule type {type(rule).__name__}")


def link_inclusion_probabilities(g: InterferenceGraph, rule: DecisionRule) -> np.ndarray:
    """q_v = probability that link v lands in the decision schedule.

    For the intent rule this is the closed form a_v * prod_{w~v}(1-a_w),
    so it stays exact at any n.
    """
    _check_rule(g, rule)
    if isinstance(rule, IntentRule):
        q = np.empty(g.n)
        for v in range(g.n):
            prod = 1.0
            for w in g.neighbors(v):
                prod *= 1.0 - rule.a[w]
            q[v] = rule.a[v] * prod
        return q
    q = np.zeros(g.n)
    for m, p in zip(rule.masks, rule.probs):
        for v in _mask_bits(m):
            q[v] += p
    return q


def check_irreducible(g: InterferenceGraph, rule: DecisionRule) -> bool:
    """The chain reaches every feasible schedule iff every q_v > 0."""
    return bool(np.all(link_inclusion_probabilities(g, rule) > 0.0))


def sample_decision_schedule(
    g: InterferenceGraph, rule: DecisionRule, rng: np.random.Generator
) -> Schedule:
    """Draw one decision schedule.

    RNG consumption is fixed per rule kind (intent: n uniforms in link
    order; explicit: one uniform), so runs are replayable.
    """
    _check_rule(g, rule)
    if isinstance(rule, IntentRule):
        u = rng.random(g.n)
        sent = 0
        for v in range(g.n):
            if u[v] < rule.a[v]:
                sent |= 1 << v
        mask = 0
        for v in range(g.n):
            bit = 1 << v
            if (sent & bit) and not (g.neighbor_masks[v] & sent):
                mask |= bit
        return Schedule(g.n, mask)
    u = rng.random()
    idx = int(np.searchsorted(rule.cumulative(), u, side="right"))
    idx = min(idx, len(rule.masks) - 1)
    return Schedule(g.n, rule.masks[idx])


def pgd_step(
    g: InterferenceGraph,
    state: ChainState,
    fug: FugacityVector,
    rule: DecisionRule,
    decision_rng: np.random.Generator,
    coin_rng: np.random.Generator,
) -> ChainState:
    """Advance the chain one slot.

    Coin consumption is one uniform per link per slot (in link order)
    whether or not the link gets to act, which keeps coupled runs and
    the compiled simulators bit-compatible with this reference step.
    """
    if fug.n != g.n:
        raise DimensionError(f"fugacity vector has {fug.n} entries, graph has {g.n}")
    sigma = state.schedule.mask
    if state.schedule.n != g.n or not mask_is_feasible(g, sigma):
        raise ContractViolationError(f"input schedule {sigma:#x} is not feasible")
    m = sample_decision_schedule(g, rule, decision_rng).mask
    coins = coin_rng.random(g.n)
    p = fug.activation
    new = sigma & ~m
    for v in _mask_bits(m):
        if not (g.neighbor_masks[v] & sigma) and coins[v] < p[v]:
            new |= 1 << v
    return ChainState(Schedule(g.n, new), state.slot + 1)


def decision_distribution(
    g: InterferenceGraph, rule: DecisionRule, max_patterns: int = 1 << 20
) -> list[tuple[int, float]]:
    """Exact law of the decision schedule as (mask, prob) pairs, sorted.

    The intent rule is expanded over all 2^n announcement patterns,
    guarded by ``max_patterns``.
    """
    _check_rule(g, rule)
    if isinstance(rule, ExplicitRule):
        acc: dict[int, float] = {}
        for m, p in zip(rule.masks, rule.probs):
            acc[m] = acc.get(m, 0.0) + float(p)
        return sorted(acc.items())
    if (1 << g.n) > max_patterns:
        raise EnumerationLimitError(
            f"intent expansion needs 2^{g.n} patterns, limit is {max_patterns}"
        )
    a = rule.a
    # Probability of each announcement pattern, then strip collisions.
    acc = {}
    for sent in range(1 << g.n):
        prob = 1.0
        for v in range(g.n):
            prob *= a[v] if (sent >> v) & 1 else 1.0 - a[v]
        mask = 0
        for v in _mask_bits(sent):
            if not (g.neighbor_masks[v] & sent):
                mask |= 1 << v
        acc[mask] = acc.get(mask, 0.0) + prob
    return sorted(acc.items())


def transition_matrix(
    g: InterferenceGraph,
    space: ScheduleSpace,
    fug: FugacityVector,
    rule: DecisionRule,
) -> np.ndarray:
    """Exact one-slot transition matrix on the feasible schedule space.

    Rows/columns follow the space ordering.  Built by conditioning on the
    decision schedule and expanding the independent link updates, so no
    Monte Carlo is involved.
    """
    if fug.n != g.n or space.n != g.n:
        raise DimensionError("graph, space and fugacities must agree on n")
    p = fug.activation
    dist = decision_distribution(g, rule)
    K = space.size
    P = np.zeros((K, K))
    idx = {m: i for i, m in enumerate(space.masks)}
    for m, qm in dist:
        if qm == 0.0:
            continue
        for row, sigma in enumerate(space.masks):
            base = sigma & ~m
            free = [v for v in _mask_bits(m) if not (g.neighbor_masks[v] & sigma)]
            # Expand the 2^|free| outcomes of the independent coin flips.
            outcomes = [(base, qm)]
            for v in free:
                bit = 1 << v
                pv = p[v]
                outcomes = [
                    out
                    for mask_, pr in outcomes
                    for out in ((mask_, pr * (1.0 - pv)), (mask_ | bit, pr * pv))
                ]
            for mask_, pr in outcomes:
                j = idx.get(mask_)
                if j is None:
                    raise ContractViolationError(
                        f"update produced infeasible schedule {mask_:#x}"
                    )
                P[row, j] += pr
    return P


def product_form_stationary(space: ScheduleSpace, fug: FugacityVector) -> np.ndarray:
    """Stationary law pi(sigma) = prod_{v in sigma} lam_v / Z.

    Switches to log-domain accumulation when n * max|log lam| passes
    LOG_DOMAIN_THRESHOLD so extreme fugacities cannot overflow.
    """
    if fug.n != space.n:
        raise DimensionError(f"fugacity vector has {fug.n} entries, space has {space.n}")
    log_lam = np.log(fug.values)
    if space.n * float(np.max(np.abs(log_lam))) > LOG_DOMAIN_THRESHOLD:
        logw = np.array(
            [sum(log_lam[v] for v in _mask_bits(m)) for m in space.masks]
        )
        logw -= logw.max()
        w = np.exp(logw)
    else:
        lam = fug.values
        w = np.empty(space.size)
        for i, m in enumerate(space.masks):
            prod = 1.0
            for v in _mask_bits(m):
                prod *= lam[v]
            w[i] = prod
    return w / w.sum()


def matrix_stationary(P: np.ndarray) -> np.ndarray:
    """Stationary vector of a stochastic matrix via a dense linear solve.

    Independent of the product form; used to cross-check it.
    """
    K = P.shape[0]
    A = P.T - np.eye(K)
    A[-1, :] = 1.0
    b = np.zeros(K)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def detailed_balance_residual(pi: np.ndarray, P: np.ndarray) -> float:
    """max_{s,s'} |pi(s) P(s,s') - pi(s') P(s',s)|; 0 for reversible chains."""
    flow = pi[:, None] * P
    return float(np.max(np.abs(flow - flow.T)))


def _mask_bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low
