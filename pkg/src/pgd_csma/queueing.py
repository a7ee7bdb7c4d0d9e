"""Discrete-time queueing on top of the schedule dynamics.

Per-link queues see Bernoulli arrivals and unit service when the link is
scheduled; an arrival can be served in its own slot.  The fixed-fugacity
simulator estimates long-run queue behaviour; the adaptive simulator
re-tunes fugacities from queue lengths on a fixed frame clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import t as student_t

from . import _kernels
from .dynamics import (
    ChainState,
    DecisionRule,
    ExplicitRule,
    FugacityVector,
    IntentRule,
    pgd_step,
    sample_decision_schedule,
)
from .errors import DimensionError, InapplicableError, ParameterError
from .graph import InterferenceGraph, Schedule, enumerate_feasible
from .mixing import best_bound_tmix
from .rng import SimStreams

# Full per-slot traces are only kept for runs short enough to hold in
# memory without a second thought.
MAX_TRACE_SLOTS = 1 << 22

DEFAULT_WARMUP_FALLBACK = 10_000
_BLOCK = 1 << 18


def queue_step(q: np.ndarray, arrivals: np.ndarray, served: np.ndarray) -> np.ndarray:
    """One joint queue update: q' = max(q + arrivals - served, 0)."""
    return np.maximum(np.asarray(q) + np.asarray(arrivals) - np.asarray(served), 0)


def sample_arrivals(nu: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(nu_v) arrival indicators, one uniform per link."""
    nu = np.asarray(nu, dtype=float)
    return (rng.random(nu.shape[0]) < nu).astype(np.int8)


def per_queue_bound(bound_tmix: int, s, nu):
    """Steady-state mean queue bound 4 (T+1) / (s - nu)^2 per link.

    Valid only when the service rate strictly exceeds the arrival rate;
    raises InapplicableError otherwise.
    """
    s = np.asarray(s, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if bound_tmix < 1:
        raise ParameterError(f"mixing-time bound must be >= 1, got {bound_tmix}")
    if np.any(s <= nu):
        raise InapplicableError("per-queue bound needs s > nu componentwise")
    out = 4.0 * (bound_tmix + 1.0) / (s - nu) ** 2
    return float(out) if out.ndim == 0 else out


def _rule_arrays(g: InterferenceGraph, rule: DecisionRule):
    """Kernel-ready encoding of the decision rule."""
    if isinstance(rule, IntentRule):
        if rule.a.shape[0] != g.n:
            raise DimensionError("intent vector does not match graph")
        return 0, rule.a.astype(np.float64), np.zeros(1), np.zeros(1, dtype=np.uint64)
    rule.validate_for(g)
    cum = rule.cumulative().astype(np.float64)
    masks = np.array(rule.masks, dtype=np.uint64)
    return 1, np.zeros(g.n), cum, masks


@dataclass(frozen=True)
class FixedRunTrace:
    """Summary of one fixed-fugacity run (per-slot traces optional)."""

    n: int
    horizon: int
    warmup: int
    window_size: int
    mean_queue: np.ndarray
    service_rate: np.ndarray
    arrival_rate: np.ndarray
    max_queue: int
    window_means: np.ndarray            # (n_windows, n), post-warmup
    final_queue: np.ndarray
    final_schedule: int
    sigma_trace: np.ndarray | None = None
    queue_trace: np.ndarray | None = None
    arrival_trace: np.ndarray | None = None

    @property
    def total_window_means(self) -> np.ndarray:
        return self.window_means.sum(axis=1)


def default_warmup(g: InterferenceGraph, fug: FugacityVector, rule: DecisionRule) -> int:
    """10x the best applicable mixing bound, or a flat fallback."""
    bound = best_bound_tmix(g, fug, rule)
    return 10 * bound if bound is not None else DEFAULT_WARMUP_FALLBACK


def simulate_fixed(
    g: InterferenceGraph,
    fug: FugacityVector,
    rule: DecisionRule,
    nu: np.ndarray,
    horizon: int,
    streams: SimStreams,
    warmup: int | None = None,
    window_count: int = 100,
    record_trace: bool = False,
    engine: str = "kernel",
) -> FixedRunTrace:
    """Simulate ``horizon`` slots of queues under fixed fugacities.

    Statistics (mean queue, service/arrival rates, window means) cover
    slots after ``warmup``; the max queue covers the whole run.  The
    compiled engine requires n <= 64; engine="python" runs the reference
    step for cross-checking.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (g.n,):
        raise DimensionError("arrival rates must have one entry per link")
    if np.any(nu < 0.0) or np.any(nu >= 1.0):
        raise ParameterError("arrival rates must lie in [0, 1)")
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    if warmup is None:
        warmup = min(default_warmup(g, fug, rule), horizon // 2)
    if not 0 <= warmup < horizon:
        raise ParameterError(f"warmup must lie in [0, horizon), got {warmup}")
    if record_trace and horizon > MAX_TRACE_SLOTS:
        raise ParameterError(f"per-slot traces limited to {MAX_TRACE_SLOTS} slots")

    span = horizon - warmup
    win_size = max(1, span // window_count)
    n_win = span // win_size

    if engine == "python" or g.n > 64:
        return _simulate_fixed_python(
            g, fug, rule, nu, horizon, streams, warmup, win_size, n_win, record_trace
        )
    if engine != "kernel":
        raise ParameterError(f"unknown engine {engine!r}")

    rule_kind, a_arr, cum, rule_masks = _rule_arrays(g, rule)
    nbr = np.array(g.neighbor_masks, dtype=np.uint64)
    p = fug.activation.astype(np.float64)

    sigma = np.uint64(0)
    q = np.zeros(g.n, dtype=np.int64)
    q_sum = np.zeros(g.n)
    srv_cnt = np.zeros(g.n, dtype=np.int64)
    arr_cnt = np.zeros(g.n, dtype=np.int64)
    max_q = np.zeros(1, dtype=np.int64)
    win_sum = np.zeros((max(n_win, 1), g.n))
    if record_trace:
        sig_trace = np.zeros(horizon, dtype=np.uint64)
        q_trace = np.zeros((horizon, g.n), dtype=np.int64)
        arr_trace = np.zeros((horizon, g.n), dtype=np.int8)
    else:
        sig_trace = np.zeros(1, dtype=np.uint64)
        q_trace = np.zeros((1, g.n), dtype=np.int64)
        arr_trace = np.zeros((1, g.n), dtype=np.int8)

    done = 0
    while done < horizon:
        lsize = min(_BLOCK, horizon - done)
        if rule_kind == 0:
            u_dec = streams.intent.random((lsize, g.n))
        else:
            u_dec = streams.intent.random(lsize).reshape(lsize, 1)
        u_coin = streams.coins.random((lsize, g.n))
        u_arr = streams.arrivals.random((lsize, g.n))
        sigma = _kernels.run_block(
            sigma, q, nbr, p, nu,
            rule_kind, a_arr, cum, rule_masks,
            u_dec, u_coin, u_arr,
            done, warmup, win_size, n_win,
            win_sum, q_sum, srv_cnt, arr_cnt, max_q,
            record_trace, sig_trace, q_trace, arr_trace,
        )
        done += lsize

    return FixedRunTrace(
        n=g.n,
        horizon=horizon,
        warmup=warmup,
        window_size=win_size,
        mean_queue=q_sum / span,
        service_rate=srv_cnt / span,
        arrival_rate=arr_cnt / span,
        max_queue=int(max_q[0]),
        window_means=win_sum[:n_win] / win_size,
        final_queue=q.copy(),
        final_schedule=int(sigma),
        sigma_trace=sig_trace if record_trace else None,
        queue_trace=q_trace if record_trace else None,
        arrival_trace=arr_trace if record_trace else None,
    )


def _simulate_fixed_python(
    g, fug, rule, nu, horizon, streams, warmup, win_size, n_win, record_trace
):
    """Reference implementation with identical stream consumption."""
    state = ChainState(Schedule(g.n, 0), 0)
    q = np.zeros(g.n, dtype=np.int64)
    q_sum = np.zeros(g.n)
    srv_cnt = np.zeros(g.n, dtype=np.int64)
    arr_cnt = np.zeros(g.n, dtype=np.int64)
    win_sum = np.zeros((max(n_win, 1), g.n))
    max_q = 0
    sig_trace = np.zeros(horizon, dtype=np.uint64) if record_trace else None
    q_trace = np.zeros((horizon, g.n), dtype=np.int64) if record_trace else None
    arr_trace = np.zeros((horizon, g.n), dtype=np.int8) if record_trace else None
    span = horizon - warmup
    for t in range(1, horizon + 1):
        state = pgd_step(g, state, fug, rule, streams.intent, streams.coins)
        arr = sample_arrivals(nu, streams.arrivals)
        srv = state.schedule.as_array()
        q = queue_step(q, arr, srv)
        max_q = max(max_q, int(q.max()))
        if t > warmup:
            q_sum += q
            srv_cnt += srv
            arr_cnt += arr
            w = (t - warmup - 1) // win_size
            if w < n_win:
                win_sum[w] += q
        if record_trace:
            sig_trace[t - 1] = state.schedule.mask
            q_trace[t - 1] = q
            arr_trace[t - 1] = arr
    return FixedRunTrace(
        n=g.n,
        horizon=horizon,
        warmup=warmup,
        window_size=win_size,
        mean_queue=q_sum / span,
        service_rate=srv_cnt / span,
        arrival_rate=arr_cnt / span,
        max_queue=max_q,
        window_means=win_sum[:n_win] / win_size,
        final_queue=q.copy(),
        final_schedule=state.schedule.mask,
        sigma_trace=sig_trace,
        queue_trace=q_trace,
        arrival_trace=arr_trace,
    )


# ---------------------------------------------------------------------------
# adaptive fugacity control


def fugacity_band_area(B: float, B_eps: float) -> float:
    """Closed-form area between the activation curve and its value at B_eps:

        integral over [B_eps, B] of (sigmoid(r) - sigmoid(B_eps)) dr
          = [log(1+e^B) - log(1+e^B_eps)] - (B - B_eps) sigmoid(B_eps)

    Strictly positive whenever B_eps < B.
    """
    if not B_eps < B:
        raise ParameterError(f"need B_eps < B, got B_eps={B_eps}, B={B}")
    return float(
        (np.logaddexp(0.0, B) - np.logaddexp(0.0, B_eps))
        - (B - B_eps) * expit(B_eps)
    )


@dataclass(frozen=True)
class AdaptiveConfig:
    """Frame-clock controller parameters.

    Fugacities are capped at exp(B); r_min = log(nu_min) anchors the
    queue-to-log-fugacity map r = (alpha/T) Q + r_min - alpha, whose
    slope alpha = delta/n and frame length T are sized from the band
    area delta so the control drifts slower than the chain mixes.
    """

    B: float
    B_eps: float
    nu_min: float
    r_min: float
    delta: float
    alpha: float
    T: int
    bound_tmix: int


def adaptive_params(
    n: int,
    B: float,
    B_eps: float,
    nu_min: float,
    bound_tmix: int,
    T_override: int | None = None,
) -> AdaptiveConfig:
    """Size the adaptive controller for an n-link system.

    T = ceil(bound_tmix * 4 n (B - r_min + alpha) / delta) unless
    overridden.  Requires B_eps < B, 0 < nu_min < 1, log(nu_min) < B.
    """
    if not 0.0 < nu_min < 1.0:
        raise ParameterError(f"nu_min must lie in (0, 1), got {nu_min}")
    if bound_tmix < 1:
        raise ParameterError(f"bound_tmix must be >= 1, got {bound_tmix}")
    delta = fugacity_band_area(B, B_eps)
    alpha = delta / n
    r_min = math.log(nu_min)
    if not r_min < B:
        raise ParameterError(
            f"nu_min={nu_min} puts r_min={r_min:.4g} at or above the cap B={B:.4g}"
        )
    if T_override is not None:
        if T_override < 1:
            raise ParameterError("frame length override must be >= 1")
        T = int(T_override)
    else:
        T = math.ceil(bound_tmix * 4.0 * n * (B - r_min + alpha) / delta)
    return AdaptiveConfig(
        B=B, B_eps=B_eps, nu_min=nu_min, r_min=r_min,
        delta=delta, alpha=alpha, T=T, bound_tmix=bound_tmix,
    )


def adaptive_equilibrium_queue(space, nu: np.ndarray, cfg: AdaptiveConfig) -> np.ndarray:
    """Queue vector Q* the frame controller is attracted to.

    Inverting r = (alpha/T) Q + r_min - alpha at the log-fugacities r*
    that serve nu exactly gives Q* = (T/alpha)(r* - r_min + alpha),
    rounded to integers.  Starting a run at Q* puts the controller at
    its operating point from frame 0.
    """
    from .fugacity import solve_fugacities

    r_star = solve_fugacities(space, nu).r
    q_star = (cfg.T / cfg.alpha) * (r_star - cfg.r_min + cfg.alpha)
    if np.any(q_star < -0.5):
        raise InapplicableError(
            "equilibrium queue is negative: nu is served below nu_min's fugacity"
        )
    return np.round(np.maximum(q_star, 0.0)).astype(np.int64)


@dataclass(frozen=True)
class AdaptiveRunTrace:
    """Frame-level record of one adaptive run."""

    n: int
    frames: int
    T: int
    cfg: AdaptiveConfig
    r_traj: np.ndarray              # (frames, n), r used during frame j
    lam_traj: np.ndarray            # (frames, n)
    frame_end_queue: np.ndarray     # (frames + 1, n), entry 0 is Q(0)
    frame_mean_queue: np.ndarray    # (frames, n)
    mean_queue: np.ndarray
    service_rate: np.ndarray
    arrival_rate: np.ndarray
    max_queue: int
    capacity_interior: bool | None
    capacity_margin: float | None
    nu_min_ok: bool

    @property
    def total_frame_means(self) -> np.ndarray:
        return self.frame_mean_queue.sum(axis=1)

    @property
    def caps_respected(self) -> bool:
        """lam <= exp(B) and r >= r_min - alpha on every frame."""
        tol = 1e-12
        return bool(
            np.all(self.lam_traj <= math.exp(self.cfg.B) + tol)
            and np.all(self.r_traj >= self.cfg.r_min - self.cfg.alpha - tol)
        )


def simulate_adaptive(
    g: InterferenceGraph,
    rule: DecisionRule,
    nu: np.ndarray,
    cfg: AdaptiveConfig,
    frames: int,
    streams: SimStreams,
    initial_queue: np.ndarray | None = None,
) -> AdaptiveRunTrace:
    """Run ``frames`` frames of T slots with queue-driven fugacities.

    At each frame boundary jT the controller reads Q(jT) and sets
    r_j = (alpha/T) Q(jT) + r_min - alpha, lam_j = exp(min(r_j, B));
    frame j then runs slots jT+1 .. (j+1)T under lam_j.  Whether nu fits
    the design band (nu in sigmoid(B_eps) * capacity interior, nu >=
    nu_min) is reported, not enforced.

    ``initial_queue`` sets Q(0) (default empty).  The controller's
    equilibrium queue Q* = (T/alpha)(r* - r_min + alpha), with r* the
    log-fugacities serving nu exactly, is the natural start for
    stationarity checks: from an empty system the queue must first climb
    to Q* at rate <= nu per slot, a transient of order 1/(alpha nu)
    frames that dwarfs any run of practical length.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (g.n,):
        raise DimensionError("arrival rates must have one entry per link")
    if np.any(nu < 0.0) or np.any(nu >= 1.0):
        raise ParameterError("arrival rates must lie in [0, 1)")
    if frames < 1:
        raise ParameterError("need at least one frame")
    if g.n > 64:
        raise ParameterError("adaptive simulator requires n <= 64")

    capacity_interior: bool | None = None
    capacity_margin: float | None = None
    if g.n <= 20:
        from .fugacity import capacity_check

        space = enumerate_feasible(g)
        cap = capacity_check(space, nu, rho=float(expit(cfg.B_eps)))
        capacity_interior = cap.interior
        capacity_margin = cap.margin
    nu_min_ok = bool(np.all(nu >= cfg.nu_min))

    rule_kind, a_arr, cum, rule_masks = _rule_arrays(g, rule)
    nbr = np.array(g.neighbor_masks, dtype=np.uint64)
    T = cfg.T

    sigma = np.uint64(0)
    if initial_queue is None:
        q = np.zeros(g.n, dtype=np.int64)
    else:
        q = np.asarray(initial_queue, dtype=np.int64).copy()
        if q.shape != (g.n,):
            raise DimensionError("initial queue must have one entry per link")
        if np.any(q < 0):
            raise ParameterError("initial queue lengths must be nonnegative")
    max_q = np.array([q.max(initial=0)], dtype=np.int64)
    srv_cnt = np.zeros(g.n, dtype=np.int64)
    arr_cnt = np.zeros(g.n, dtype=np.int64)
    dummy_sig = np.zeros(1, dtype=np.uint64)
    dummy_q = np.zeros((1, g.n), dtype=np.int64)
    dummy_arr = np.zeros((1, g.n), dtype=np.int8)
    dummy_win = np.zeros((1, g.n))

    r_traj = np.empty((frames, g.n))
    lam_traj = np.empty((frames, g.n))
    frame_end_q = np.empty((frames + 1, g.n), dtype=np.int64)
    frame_mean_q = np.empty((frames, g.n))
    frame_end_q[0] = q

    for j in range(frames):
        r_j = (cfg.alpha / T) * q + (cfg.r_min - cfg.alpha)
        lam_j = np.exp(np.minimum(r_j, cfg.B))
        r_traj[j] = r_j
        lam_traj[j] = lam_j
        p = lam_j / (1.0 + lam_j)
        frame_q_sum = np.zeros(g.n)
        frame_srv = np.zeros(g.n, dtype=np.int64)
        frame_arr = np.zeros(g.n, dtype=np.int64)
        done = 0
        while done < T:
            lsize = min(_BLOCK, T - done)
            if rule_kind == 0:
                u_dec = streams.intent.random((lsize, g.n))
            else:
                u_dec = streams.intent.random(lsize).reshape(lsize, 1)
            u_coin = streams.coins.random((lsize, g.n))
            u_arr = streams.arrivals.random((lsize, g.n))
            # warmup=0 and win_size=T disable window accumulation here;
            # per-frame sums land in frame_q_sum via q_sum.
            sigma = _kernels.run_block(
                sigma, q, nbr, p, nu,
                rule_kind, a_arr, cum, rule_masks,
                u_dec, u_coin, u_arr,
                done, 0, T, 0,
                dummy_win, frame_q_sum, frame_srv, frame_arr, max_q,
                False, dummy_sig, dummy_q, dummy_arr,
            )
            done += lsize
        frame_end_q[j + 1] = q
        frame_mean_q[j] = frame_q_sum / T
        srv_cnt += frame_srv
        arr_cnt += frame_arr

    total = frames * T
    return AdaptiveRunTrace(
        n=g.n,
        frames=frames,
        T=T,
        cfg=cfg,
        r_traj=r_traj,
        lam_traj=lam_traj,
        frame_end_queue=frame_end_q,
        frame_mean_queue=frame_mean_q,
        mean_queue=frame_mean_q.mean(axis=0),
        service_rate=srv_cnt / total,
        arrival_rate=arr_cnt / total,
        max_queue=int(max_q[0]),
        capacity_interior=capacity_interior,
        capacity_margin=capacity_margin,
        nu_min_ok=nu_min_ok,
    )


# ---------------------------------------------------------------------------
# stability diagnostics


@dataclass(frozen=True)
class StabilityReport:
    """OLS trend of windowed mean queue series.

    Positive recurrence is not directly certifiable from a finite run;
    the proxy is the 95% confidence interval of the fitted slope of the
    total-queue window means, stable iff it contains zero.
    """

    slope: float
    ci_low: float
    ci_high: float
    stable: bool
    per_link_slope: np.ndarray
    windows: int
    proxy: str = "OLS slope CI of windowed total-queue means; stable iff 0 in CI"


def _ols_slope_ci(y: np.ndarray) -> tuple[float, float, float]:
    w = y.shape[0]
    x = np.arange(w, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ yc) / sxx
    resid = yc - slope * xc
    dof = w - 2
    var = float(resid @ resid) / dof if dof > 0 else 0.0
    se = math.sqrt(var / sxx) if var > 0 else 0.0
    if se == 0.0:
        return slope, slope, slope
    half = float(student_t.ppf(0.975, dof)) * se
    return slope, slope - half, slope + half


def stability_diagnostic(window_means: np.ndarray) -> StabilityReport:
    """Trend analysis of a (windows, links) or (windows,) mean-queue series."""
    y = np.asarray(window_means, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] < 3:
        raise ParameterError("need a (windows >= 3, links) series")
    total = y.sum(axis=1)
    slope, lo, hi = _ols_slope_ci(total)
    per_link = np.array([_ols_slope_ci(y[:, v])[0] for v in range(y.shape[1])])
    return StabilityReport(
        slope=slope,
        ci_low=lo,
        ci_high=hi,
        stable=bool(lo <= 0.0 <= hi),
        per_link_slope=per_link,
        windows=y.shape[0],
    )
