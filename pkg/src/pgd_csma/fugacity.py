"""Service rates of the product-form law and fugacity selection.

Given target per-link rates nu strictly inside the capacity region, the
log-fugacities r maximising the concave objective

    F(r) = sum_i nu_i r_i - log sum_sigma exp(sum_{i in sigma} r_i)

satisfy s(r) = nu, because grad F = nu - s(r).  A damped fixed-point
iteration on the idle-neighborhood identity s_i = (lam_i/(1+lam_i)) p0_i
provides an independent route to the same fugacities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .dynamics import FugacityVector
from .errors import (
    DimensionError,
    HorizonError,
    InapplicableError,
    ParameterError,
)
from .graph import ScheduleSpace, max_interference_degree

# Projection box for log-fugacities inside the gradient solver; wide
# enough for any desk-scale target, tight enough to keep exp() finite.
R_BOX = 60.0

# LP margins: membership tolerates solver noise at the boundary, strict
# interiority demands a real gap.
MEMBER_TOL = 1e-9
INTERIOR_MARGIN = 1e-9


@dataclass(frozen=True)
class RateVector:
    """Per-link service rates s and idle-neighborhood probabilities p0
    under a product-form law; ``nu`` carries the target when one exists."""

    s: np.ndarray
    p0: np.ndarray
    nu: np.ndarray | None = None


def _gibbs_law(space: ScheduleSpace, r: np.ndarray) -> tuple[np.ndarray, float]:
    """Distribution over schedules for log-fugacities r, plus log Z."""
    energies = space.member_matrix() @ r
    log_z = float(logsumexp(energies))
    return np.exp(energies - log_z), log_z


def service_rates(space: ScheduleSpace, fug: FugacityVector) -> RateVector:
    """Stationary on-fraction s_i and idle-neighborhood mass p0_i per link.

    p0_i sums the stationary law over schedules in which every neighbor of
    link i is silent (link i itself may be on or off).
    """
    if fug.n != space.n:
        raise DimensionError(f"fugacity vector has {fug.n} entries, space has {space.n}")
    pi, _ = _gibbs_law(space, np.log(fug.values))
    s = pi @ space.member_matrix()
    nbr = space.graph.neighbor_masks
    p0 = np.zeros(space.n)
    for k, mask in enumerate(space.masks):
        w = pi[k]
        for v in range(space.n):
            if not (nbr[v] & mask):
                p0[v] += w
    return RateVector(s=s, p0=p0, nu=None)


def service_rate_identity_residual(space: ScheduleSpace, fug: FugacityVector) -> float:
    """max_i |s_i - (lam_i/(1+lam_i)) p0_i|; zero up to rounding.

    The identity holds because schedules containing link i biject with
    idle-neighborhood schedules not containing i at weight ratio lam_i.
    """
    rates = service_rates(space, fug)
    return float(np.max(np.abs(rates.s - fug.activation * rates.p0)))


def gibbs_objective(space: ScheduleSpace, r: np.ndarray, nu: np.ndarray) -> float:
    """F(r) = nu . r - log Z(r); concave with gradient nu - s(r)."""
    r = np.asarray(r, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if r.shape != (space.n,) or nu.shape != (space.n,):
        raise DimensionError("r and nu must have one entry per link")
    _, log_z = _gibbs_law(space, r)
    return float(nu @ r - log_z)


def gibbs_gradient(space: ScheduleSpace, r: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """grad F(r) = nu - s(r)."""
    pi, _ = _gibbs_law(space, np.asarray(r, dtype=float))
    return np.asarray(nu, dtype=float) - pi @ space.member_matrix()


@dataclass(frozen=True)
class CapacityResult:
    """LP verdict on nu in rho * (convex hull of schedules).

    ``margin`` is the best uniform slack z with sum_sigma t_sigma sigma_i
    >= nu_i/rho + z; membership needs z >= 0 (up to solver noise), strict
    interiority needs z > INTERIOR_MARGIN.
    """

    member: bool
    interior: bool
    margin: float

    def __bool__(self) -> bool:
        return self.member


def capacity_check(
    space: ScheduleSpace, nu: np.ndarray, rho: float = 1.0, strict: bool = False
) -> CapacityResult:
    """Decide nu in rho*Lambda (or its interior) by a dense feasibility LP.

    Maximises the uniform slack of a schedule mixture dominating nu/rho;
    the slack sign settles membership.  ``strict`` only affects which
    verdict __bool__ reflects via the returned flags; both are filled in.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (space.n,):
        raise DimensionError("nu must have one entry per link")
    if np.any(nu < 0.0):
        raise ParameterError("target rates must be >= 0")
    if not 0.0 < rho <= 1.0:
        raise ParameterError(f"scaling rho must lie in (0, 1], got {rho}")
    member = space.member_matrix()
    K = space.size
    # variables: t_0..t_{K-1}, z ; maximise z
    c = np.zeros(K + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-member.T, np.ones((space.n, 1))])
    b_ub = -nu / rho
    a_eq = np.ones((1, K + 1))
    a_eq[0, -1] = 0.0
    bounds = [(0.0, None)] * K + [(None, None)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if not res.success:
        raise HorizonError(f"capacity LP failed: {res.message}")
    margin = float(res.x[-1])
    result = CapacityResult(
        member=margin >= -MEMBER_TOL,
        interior=margin > INTERIOR_MARGIN,
        margin=margin,
    )
    if strict:
        return CapacityResult(member=result.interior, interior=result.interior, margin=margin)
    return result


@dataclass(frozen=True)
class FugacitySolution:
    fug: FugacityVector
    r: np.ndarray
    nu: np.ndarray
    iterations: int
    grad_norm: float
    objective: float
    converged: bool
    method: str


def solve_fugacities(
    space: ScheduleSpace,
    nu: np.ndarray,
    tol: float = 1e-8,
    max_iters: int = 100_000,
) -> FugacitySolution:
    """Fugacities achieving service rates nu, by projected gradient ascent.

    Checks nu strictly inside the capacity region first (InapplicableError
    otherwise), starts from r = log(nu/(1-nu)), and backtracks along
    grad F = nu - s(r) until the sup-norm residual drops below ``tol``.
    Iterates are projected onto the box |r_i| <= R_BOX.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (space.n,):
        raise DimensionError("nu must have one entry per link")
    if np.any(nu <= 0.0) or np.any(nu >= 1.0):
        raise InapplicableError("target rates must lie strictly in (0, 1)")
    cap = capacity_check(space, nu, rho=1.0)
    if not cap.interior:
        raise InapplicableError(
            f"target rates are not strictly inside the capacity region "
            f"(LP margin {cap.margin:.3g})"
        )
    r = np.clip(np.log(nu / (1.0 - nu)), -R_BOX, R_BOX)
    f_cur = gibbs_objective(space, r, nu)
    step = 1.0
    iterations = 0
    grad = gibbs_gradient(space, r, nu)
    gnorm = float(np.max(np.abs(grad)))
    while gnorm > tol:
        if iterations >= max_iters:
            raise HorizonError(
                f"gradient solver did not reach tol={tol} within {max_iters} "
                f"iterations (residual {gnorm:.3g})"
            )
        # Armijo backtracking on the projected step.
        while True:
            r_new = np.clip(r + step * grad, -R_BOX, R_BOX)
            f_new = gibbs_objective(space, r_new, nu)
            if f_new >= f_cur + 1e-4 * float(grad @ (r_new - r)):
                break
            step *= 0.5
            if step < 1e-18:
                raise HorizonError("line search stalled; step size underflow")
        r, f_cur = r_new, f_new
        step = min(step * 2.0, 64.0)
        iterations += 1
        grad = gibbs_gradient(space, r, nu)
        gnorm = float(np.max(np.abs(grad)))
    return FugacitySolution(
        fug=FugacityVector(np.exp(r)),
        r=r,
        nu=nu,
        iterations=iterations,
        grad_norm=gnorm,
        objective=f_cur,
        converged=True,
        method="projected_gradient_ascent",
    )


def fixed_point_fugacities(
    space: ScheduleSpace,
    nu: np.ndarray,
    tol: float = 1e-8,
    max_iters: int = 100_000,
    damping: float = 0.5,
) -> FugacitySolution:
    """Independent fugacity route: damped iteration of the rate identity.

    Inverting s_i = (lam_i/(1+lam_i)) p0_i at s_i = nu_i gives the update
    lam_i <- nu_i / (p0_i(lam) - nu_i); damping stabilises it.  Serves as
    a cross-check oracle for the gradient solver.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (space.n,):
        raise DimensionError("nu must have one entry per link")
    if np.any(nu <= 0.0) or np.any(nu >= 1.0):
        raise InapplicableError("target rates must lie strictly in (0, 1)")
    if not 0.0 < damping <= 1.0:
        raise ParameterError(f"damping must lie in (0, 1], got {damping}")
    lam = nu / (1.0 - nu)
    for it in range(1, max_iters + 1):
        rates = service_rates(space, FugacityVector(lam))
        resid = float(np.max(np.abs(rates.s - nu)))
        if resid <= tol:
            return FugacitySolution(
                fug=FugacityVector(lam),
                r=np.log(lam),
                nu=nu,
                iterations=it - 1,
                grad_norm=resid,
                objective=gibbs_objective(space, np.log(lam), nu),
                converged=True,
                method="damped_fixed_point",
            )
        gap = rates.p0 - nu
        # When p0 has been squeezed below nu the update is undefined;
        # push the fugacity up and let damping sort it out.
        target = np.where(gap > 1e-12, nu / np.maximum(gap, 1e-12), lam * 2.0)
        lam = np.maximum((1.0 - damping) * lam + damping * target, 1e-12)
    raise HorizonError(
        f"fixed-point iteration did not reach tol={tol} within {max_iters} iterations"
    )


@dataclass(frozen=True)
class FugacityBoundsReport:
    """Solved fugacities against their load-dependent a-priori bounds."""

    chi: int
    rho: float
    rho_ok: bool
    capacity_margin: float
    interior: bool
    lam: np.ndarray
    upper_bound: float
    upper_ok: bool
    nu_min: float | None
    lower_ok: bool | None


def fugacity_bounds_report(
    space: ScheduleSpace,
    nu: np.ndarray,
    rho: float,
    nu_min: float | None = None,
    tol: float = 1e-8,
) -> FugacityBoundsReport:
    """Solve for fugacities at nu in rho*Lambda-interior and check bounds.

    With rho <= 1/chi (chi = max interference degree) the solved
    fugacities obey lam_i <= rho/(1-rho); when additionally every
    nu_i >= nu_min they obey lam_i >= nu_min.
    """
    nu = np.asarray(nu, dtype=float)
    g = space.graph
    chi = max_interference_degree(g)
    rho_ok = rho <= 1.0 / chi + 1e-12
    cap = capacity_check(space, nu, rho=rho)
    sol = solve_fugacities(space, nu, tol=tol)
    lam = sol.fug.values
    upper = math.inf if rho >= 1.0 else rho / (1.0 - rho)
    upper_ok = bool(np.all(lam <= upper * (1.0 + 1e-9)))
    lower_ok: bool | None = None
    if nu_min is not None:
        if np.any(nu < nu_min):
            raise ParameterError("every target rate must be >= nu_min")
        lower_ok = bool(np.all(lam >= nu_min * (1.0 - 1e-9)))
    return FugacityBoundsReport(
        chi=chi,
        rho=rho,
        rho_ok=rho_ok,
        capacity_margin=cap.margin,
        interior=cap.interior,
        lam=lam,
        upper_bound=upper,
        upper_ok=upper_ok,
        nu_min=nu_min,
        lower_ok=lower_ok,
    )
