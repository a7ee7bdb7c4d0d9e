"""Total-variation mixing analysis for the schedule chain.

Exact distribution evolution and empirical mixing times for enumerable
instances, weighted-Hamming contraction margins with the resulting
geometric TV envelopes, a coupled-chain coalescence estimator for larger
graphs, and the specialised complete-graph bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .dynamics import (
    DecisionRule,
    FugacityVector,
    link_inclusion_probabilities,
    sample_decision_schedule,
)
from .errors import (
    ContractViolationError,
    DimensionError,
    HorizonError,
    InapplicableError,
)
from .graph import InterferenceGraph, Schedule, ScheduleSpace, mask_is_feasible

# Conservative floor of (1-1/n)^(n-1) over n >= 2; the sequence decreases
# from 1/2 toward 1/e, so 0.2 under-cuts every n.
SINGLETON_PROB_FLOOR = 0.2

MIXING_THRESHOLD = 1.0 / math.e


def tv_distance(mu: np.ndarray, nu: np.ndarray) -> float:
    """Total variation distance between two laws on the same state list."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise DimensionError(f"distribution shapes differ: {mu.shape} vs {nu.shape}")
    return 0.5 * float(np.abs(mu - nu).sum())


def evolve_distribution(P: np.ndarray, start: int, t_max: int) -> np.ndarray:
    """Rows 0..t_max are the chain law after t slots from the point mass
    at state index ``start``."""
    K = P.shape[0]
    if not 0 <= start < K:
        raise DimensionError(f"start index {start} out of range for {K} states")
    out = np.empty((t_max + 1, K))
    mu = np.zeros(K)
    mu[start] = 1.0
    out[0] = mu
    for t in range(1, t_max + 1):
        mu = mu @ P
        out[t] = mu
    return out


def empirical_mixing_time(P: np.ndarray, pi: np.ndarray, horizon: int = 10_000) -> int:
    """Smallest t with max_start TV(mu_{x,t}, pi) <= 1/e.

    Returns 0 only in the degenerate case where every point mass already
    sits within the threshold; otherwise the first t >= 1.  Raises
    HorizonError (reporting the last worst-start TV) if the threshold is
    not reached within ``horizon`` slots.
    """
    K = P.shape[0]
    if pi.shape != (K,):
        raise DimensionError("stationary vector does not match the matrix")
    mu = np.eye(K)
    first_hit = np.full(K, -1, dtype=int)
    last_worst = 1.0
    for t in range(horizon + 1):
        tvs = 0.5 * np.abs(mu - pi).sum(axis=1)
        fresh = (first_hit < 0) & (tvs <= MIXING_THRESHOLD)
        first_hit[fresh] = t
        last_worst = float(tvs.max())
        if np.all(first_hit >= 0):
            return int(first_hit.max())
        mu = mu @ P
    raise HorizonError(
        f"mixing threshold 1/e not reached within {horizon} slots; "
        f"worst-start TV is {last_worst:.6g}"
    )


@dataclass(frozen=True)
class WeightFunction:
    """Positive per-link weights for the weighted-Hamming metric."""

    values: np.ndarray
    name: str = "custom"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise DimensionError("weights must be a 1-d vector")
        if np.any(vals <= 0.0) or not np.all(np.isfinite(vals)):
            raise ContractViolationError("weights must be finite and > 0")
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, n: int) -> "WeightFunction":
        return cls(np.ones(n), name="uniform")

    @classmethod
    def degree_over_q(cls, g: InterferenceGraph, q: np.ndarray) -> "WeightFunction":
        """d_v / q_v, with isolated vertices lifted to 1/q_v to keep the
        weight positive (their contraction term is then q_v * w_v = 1)."""
        d = np.maximum(np.array(g.degrees, dtype=float), 1.0)
        return cls(d / q, name="degree_over_q")

    @classmethod
    def fugacity_over_q(cls, fug: FugacityVector, q: np.ndarray) -> "WeightFunction":
        return cls((1.0 + fug.values) / q, name="fugacity_over_q")

    @classmethod
    def inverse_q(cls, q: np.ndarray) -> "WeightFunction":
        return cls(1.0 / q, name="inverse_q")

    @property
    def w_min(self) -> float:
        return float(self.values.min())

    @property
    def w_max(self) -> float:
        return float(self.values.max())

    @property
    def spread(self) -> float:
        """xi = w_max / w_min."""
        return self.w_max / self.w_min


def contraction_margin(
    g: InterferenceGraph,
    fug: FugacityVector,
    rule: DecisionRule,
    w: WeightFunction,
) -> float:
    """theta = min_v [ q_v w_v - sum_{u~v} q_u (lam_u/(1+lam_u)) w_u ].

    Positive theta certifies one-step contraction of the coupled chain in
    the weighted-Hamming metric; isolated vertices contribute q_v w_v.
    """
    if fug.n != g.n or w.values.shape[0] != g.n:
        raise DimensionError("graph, fugacities and weights must agree on n")
    q = link_inclusion_probabilities(g, rule)
    p = fug.activation
    vals = w.values
    margins = np.empty(g.n)
    for v in range(g.n):
        gain = q[v] * vals[v]
        loss = sum(q[u] * p[u] * vals[u] for u in g.neighbors(v))
        margins[v] = gain - loss
    return float(margins.min())


@dataclass(frozen=True)
class MixingBoundReport:
    """Geometric TV envelope min(1, beta^t * prefactor) plus the implied
    mixing-time bound; ``applicable`` is False when the margin fails."""

    name: str
    theta: float
    w_min: float
    w_max: float
    spread: float
    prefactor: float
    beta: float | None
    bound_tmix: int | None
    applicable: bool
    condition: str = ""
    condition_holds: bool | None = None
    extra: dict = field(default_factory=dict)

    def envelope(self, t) -> np.ndarray:
        if not self.applicable:
            raise InapplicableError(f"bound {self.name!r} is not applicable here")
        t = np.asarray(t, dtype=float)
        return np.minimum(1.0, self.prefactor * self.beta**t)


def contraction_bound(
    g: InterferenceGraph,
    fug: FugacityVector,
    rule: DecisionRule,
    w: WeightFunction,
    condition: str = "",
    condition_holds: bool | None = None,
    extra: dict | None = None,
) -> MixingBoundReport:
    """Envelope and mixing-time bound from the contraction margin of w.

    With theta > 0 the coupled chain contracts by beta = 1 - theta/w_max
    per slot, giving TV <= min(1, beta^t * n*xi) and a mixing-time bound
    ceil((w_max/theta) * log(n * xi * e)).
    """
    theta = contraction_margin(g, fug, rule, w)
    prefactor = g.n * w.spread
    applicable = theta > 0.0
    if applicable:
        beta = 1.0 - theta / w.w_max
        bound = math.ceil((w.w_max / theta) * math.log(g.n * w.spread * math.e))
    else:
        beta = None
        bound = None
    return MixingBoundReport(
        name=w.name,
        theta=theta,
        w_min=w.w_min,
        w_max=w.w_max,
        spread=w.spread,
        prefactor=prefactor,
        beta=beta,
        bound_tmix=bound,
        applicable=applicable,
        condition=condition,
        condition_holds=condition_holds,
        extra=dict(extra or {}),
    )


def standard_weight_bounds(
    g: InterferenceGraph, fug: FugacityVector, rule: DecisionRule
) -> dict[str, MixingBoundReport]:
    """The three stock weight choices with their applicability conditions.

    degree_over_q   w = d/q, sufficient condition lam_v < 1/(d_v - 1)
    fugacity_over_q w = (1+lam)/q, margin min_v(1 + lam_v - sum_{u~v} lam_u)
    inverse_q       w = 1/q, condition b = max_v sum_{u~v} lam_u/(1+lam_u) < 1
    """
    q = link_inclusion_probabilities(g, rule)
    lam = fug.values
    p = fug.activation
    d = np.array(g.degrees, dtype=float)

    out: dict[str, MixingBoundReport] = {}

    cap = np.where(d > 1.0, 1.0 / np.maximum(d - 1.0, 1e-300), np.inf)
    deg_cond = bool(np.all(lam < cap))
    out["degree_over_q"] = contraction_bound(
        g, fug, rule, WeightFunction.degree_over_q(g, q),
        condition="lam_v < 1/(d_v - 1) for every link",
        condition_holds=deg_cond,
    )

    margin = min(
        1.0 + lam[v] - sum(lam[u] for u in g.neighbors(v)) for v in range(g.n)
    )
    out["fugacity_over_q"] = contraction_bound(
        g, fug, rule, WeightFunction.fugacity_over_q(fug, q),
        condition="min_v (1 + lam_v - sum_{u~v} lam_u) > 0",
        condition_holds=bool(margin > 0.0),
        extra={"margin": float(margin)},
    )

    b = max(float(sum(p[u] for u in g.neighbors(v))) for v in range(g.n))
    out["inverse_q"] = contraction_bound(
        g, fug, rule, WeightFunction.inverse_q(q),
        condition="b = max_v sum_{u~v} lam_u/(1+lam_u) < 1",
        condition_holds=bool(b < 1.0),
        extra={"b": b, "q_min": float(q.min()), "q_max": float(q.max())},
    )
    return out


def best_bound_tmix(
    g: InterferenceGraph, fug: FugacityVector, rule: DecisionRule
) -> int | None:
    """Smallest mixing-time bound among the applicable stock weights."""
    reports = standard_weight_bounds(g, fug, rule)
    vals = [r.bound_tmix for r in reports.values() if r.applicable]
    return min(vals) if vals else None


@dataclass(frozen=True)
class ContractionCheck:
    """Exact expected one-step change of the weighted-Hamming distance for
    one adjacent schedule pair, next to its analytic upper bound."""

    exact: float
    bound: float
    vertex: int

    @property
    def holds(self) -> bool:
        return self.exact <= self.bound + 1e-12


def contraction_check(
    g: InterferenceGraph,
    fug: FugacityVector,
    rule: DecisionRule,
    w: WeightFunction,
    sigma: Schedule,
    eta: Schedule,
) -> ContractionCheck:
    """Exact E[delta Phi] for schedules differing at one link, vs the bound.

    Under the coupling (same decision schedule, shared coin wherever both
    chains can act) the per-link contributions add up exactly:

      E[delta Phi] = -q_v w_v + sum over neighbors u of v that are
                     unblocked in the smaller schedule of q_u p_u w_u

    while the bound keeps every neighbor term.  Blocked neighbors (case
    with another active neighbor) contribute zero, hence exact <= bound.
    """
    if sigma.n != g.n or eta.n != g.n:
        raise DimensionError("schedules must match the graph size")
    if not (mask_is_feasible(g, sigma.mask) and mask_is_feasible(g, eta.mask)):
        raise ContractViolationError("both schedules must be feasible")
    diff = sigma.mask ^ eta.mask
    if diff == 0 or diff & (diff - 1):
        raise ContractViolationError(
            "schedules must differ at exactly one link "
            f"(got difference {diff:#x})"
        )
    v = diff.bit_length() - 1
    lo = sigma.mask if not (sigma.mask >> v) & 1 else eta.mask  # v-off side
    q = link_inclusion_probabilities(g, rule)
    p = fug.activation
    vals = w.values
    exact = -q[v] * vals[v]
    bound = -q[v] * vals[v]
    for u in g.neighbors(v):
        term = q[u] * p[u] * vals[u]
        bound += term
        if not (g.neighbor_masks[u] & lo):
            exact += term
    return ContractionCheck(exact=float(exact), bound=float(bound), vertex=v)


def adjacent_pairs(space: ScheduleSpace) -> Iterator[tuple[Schedule, Schedule, int]]:
    """All feasible pairs (sigma, sigma + link v) of a schedule space."""
    index = {m: i for i, m in enumerate(space.masks)}
    for m in space.masks:
        for v in range(space.n):
            bit = 1 << v
            if m & bit:
                continue
            if (m | bit) in index:
                yield Schedule(space.n, m), Schedule(space.n, m | bit), v


@dataclass(frozen=True)
class CoalescenceResult:
    """Monte Carlo coupling times; trials that never met are excluded
    from ``times`` and counted in ``uncoalesced``."""

    times: np.ndarray
    uncoalesced: int
    trials: int
    horizon: int

    @property
    def fraction_uncoalesced(self) -> float:
        return self.uncoalesced / self.trials

    @property
    def median(self) -> float:
        if self.times.size == 0:
            return math.nan
        return float(np.median(self.times))

    @property
    def mean(self) -> float:
        if self.times.size == 0:
            return math.nan
        return float(self.times.mean())


def _greedy_max_schedule(g: InterferenceGraph) -> int:
    """Deterministic far-from-empty start: greedy independent set, lowest
    degree first."""
    order = sorted(range(g.n), key=lambda v: (g.degrees[v], v))
    mask = 0
    for v in order:
        if not (g.neighbor_masks[v] & mask):
            mask |= 1 << v
    return mask


def coalescence_estimate(
    g: InterferenceGraph,
    fug: FugacityVector,
    rule: DecisionRule,
    trials: int,
    horizon: int,
    rng: np.random.Generator,
    start_pair: tuple[Schedule, Schedule] | None = None,
) -> CoalescenceResult:
    """Coupling time of two chains sharing decision schedules and coins.

    Both chains see the same decision schedule and the same per-link
    uniform each slot; a link both chains may act on therefore lands in
    the same state, and with unequal on-probabilities the shared uniform
    realises the monotone coupling (the lower-odds 'off' draw forces the
    other chain's 'off' as well).  Trials that fail to meet within
    ``horizon`` are reported, not raised.
    """
    if start_pair is None:
        x0, y0 = 0, _greedy_max_schedule(g)
    else:
        x0, y0 = start_pair[0].mask, start_pair[1].mask
        for m in (x0, y0):
            if not mask_is_feasible(g, m):
                raise ContractViolationError(f"start schedule {m:#x} is not feasible")
    p = fug.activation
    nbr = g.neighbor_masks
    times = []
    uncoalesced = 0
    for _ in range(trials):
        x, y = x0, y0
        met = x == y
        if met:
            times.append(0)
            continue
        for t in range(1, horizon + 1):
            m = sample_decision_schedule(g, rule, rng).mask
            u = rng.random(g.n)
            xn = x & ~m
            yn = y & ~m
            mm = m
            while mm:
                low = mm & -mm
                v = low.bit_length() - 1
                if u[v] < p[v]:
                    if not (nbr[v] & x):
                        xn |= low
                    if not (nbr[v] & y):
                        yn |= low
                mm ^= low
            x, y = xn, yn
            if x == y:
                times.append(t)
                met = True
                break
        if not met:
            uncoalesced += 1
    return CoalescenceResult(
        times=np.array(times, dtype=int),
        uncoalesced=uncoalesced,
        trials=trials,
        horizon=horizon,
    )


def complete_graph_bound(g: InterferenceGraph, fug: FugacityVector) -> MixingBoundReport:
    """Mixing bound for the complete graph under intent probability 1/n.

    The one-live-link chain admits a coupling that meets with probability
    at least c_min/(n(1+lam_max)) per slot, where c_min = 0.2 undercuts
    the singleton-schedule probability factor c_n = (1-1/n)^(n-1) for all
    n, giving TV <= gamma^t and a mixing-time bound n(1+lam_max)/c_min.
    """
    if fug.n != g.n:
        raise DimensionError(f"fugacity vector has {fug.n} entries, graph has {g.n}")
    if not g.is_complete():
        raise InapplicableError("bound requires a complete interference graph")
    n = g.n
    lam_max = float(fug.values.max())
    meet = SINGLETON_PROB_FLOOR / (n * (1.0 + lam_max))
    gamma = 1.0 - meet
    c_n = (1.0 - 1.0 / n) ** (n - 1) if n > 1 else 1.0
    return MixingBoundReport(
        name="complete_graph",
        theta=meet,
        w_min=1.0,
        w_max=1.0,
        spread=1.0,
        prefactor=1.0,
        beta=gamma,
        bound_tmix=math.ceil(n * (1.0 + lam_max) / SINGLETON_PROB_FLOOR),
        applicable=True,
        condition="complete graph, intent probability 1/n",
        condition_holds=True,
        extra={"c_n": c_n, "c_min": SINGLETON_PROB_FLOOR, "intent_prob": 1.0 / n},
    )
