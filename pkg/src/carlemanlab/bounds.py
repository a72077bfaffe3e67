"""Truncation-error bounds for the linearised dynamics.

The tightening factor ``f_{j,k,M}`` is evaluated two independent ways: a
closed form built from log-gamma differences and a compensated alternating
sum, and a quadrature route that integrates the defining nested-integral
recurrence.  The closed form self-checks against a verification band and
callers fall back to quadrature when binomial cancellation bites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gammaln

from .errors import NumericFailure, ValidationError
from .nonlinear_ode import (
    NonlinearODE,
    RescaledODE,
    fm_spectral_norm,
    lambda0,
    r_ratio,
)

if TYPE_CHECKING:  # pragma: no cover
    from .pde import ReactionDiffusionProblem

#: closed-form results must land in [0,1] up to this slack before clamping
_VERIFY_BAND = 1e-8

#: recursion depth guard for the quadrature route
_MAX_QUAD_DEPTH = 20


def _validate_fjk(j: int, k: int, M: int) -> None:
    if j < 1 or k < 1 or M < 2:
        raise ValidationError(f"need j >= 1, k >= 1, M >= 2; got j={j}, k={k}, M={M}")


def f_closed(j: int, k: int, M: int, tau: float | np.ndarray) -> float | np.ndarray:
    """Closed-form error factor; monotone in ``tau``, saturating at 1.

    ``1 - (M-1) Gamma(k + j/(M-1)) / ((k-1)! Gamma(j/(M-1)))
    * sum_l (-1)^l C(k-1, l) exp(-(l(M-1)+j) tau) / (l(M-1)+j)``.

    The alternating sum is accumulated exactly (sorted, then ``math.fsum``);
    if the raw value leaves ``[-1e-8, 1 + 1e-8]`` the cancellation has
    destroyed the result and a :class:`NumericFailure` asks the caller to use
    :func:`f_quadrature` instead.
    """
    _validate_fjk(j, k, M)
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(taus < 0):
        raise ValidationError("tau must be non-negative")
    a = j / (M - 1)
    log_coef = math.log(M - 1) + gammaln(k + a) - gammaln(a) - gammaln(k)
    denoms = np.array([ell * (M - 1) + j for ell in range(k)], dtype=float)
    log_binom = np.array(
        [gammaln(k) - gammaln(ell + 1) - gammaln(k - ell) for ell in range(k)]
    )
    signs = np.array([(-1.0) ** ell for ell in range(k)])
    log_mag = log_coef + log_binom - np.log(denoms)

    out = np.empty_like(taus)
    for idx, t in enumerate(taus):
        terms = signs * np.exp(log_mag - denoms * t)
        order = np.argsort(np.abs(terms))
        raw = 1.0 - math.fsum(terms[order])
        if raw < -_VERIFY_BAND or raw > 1.0 + _VERIFY_BAND:
            raise NumericFailure(
                f"closed-form factor left the verification band: "
                f"f({j},{k},{M})({t}) = {raw}"
            )
        out[idx] = min(1.0, max(0.0, raw))
    return out if np.ndim(tau) else float(out[0])


def f_quadrature(
    j: int, k: int, M: int, tau: float | np.ndarray, abs_tol: float = 1e-10
) -> float | np.ndarray:
    """Error factor via the nested-integral recurrence, integrated adaptively.

    The recurrence ``f_{j,k} (tau) = j int_0^tau exp(-j (tau - s))
    f_{j+M-1, k-1}(s) ds`` with base ``1 - exp(-j tau)`` is the derivative
    relation ``f_k' = j_k (f_{k-1} - f_k)`` for the whole tower, which is
    integrated to well below ``abs_tol``.  Independent of the closed form.
    """
    _validate_fjk(j, k, M)
    if k > _MAX_QUAD_DEPTH:
        raise ValidationError(f"quadrature depth {k} exceeds guard {_MAX_QUAD_DEPTH}")
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(taus < 0):
        raise ValidationError("tau must be non-negative")
    base_rate = j + (k - 1) * (M - 1)
    if k == 1:
        vals = 1.0 - np.exp(-base_rate * taus)
        return vals if np.ndim(tau) else float(vals[0])

    # level kappa carries f at index j + (k - kappa)(M - 1)
    rates = np.array([j + (k - kappa) * (M - 1) for kappa in range(1, k + 1)], dtype=float)

    def tower(t: float, f: np.ndarray) -> np.ndarray:
        prev = np.concatenate(([1.0], f[:-1]))
        return rates * (prev - f)

    order = np.argsort(taus)
    sorted_taus = taus[order]
    t_end = float(sorted_taus[-1])
    if t_end == 0.0:
        vals = np.zeros_like(taus)
        return vals if np.ndim(tau) else 0.0
    positive = sorted_taus[sorted_taus > 0]
    sol = solve_ivp(
        tower,
        (0.0, t_end),
        np.zeros(k),
        method="DOP853",
        rtol=1e-12,
        atol=min(abs_tol * 1e-3, 1e-13),
        t_eval=positive,
    )
    if not sol.success:
        raise NumericFailure(f"quadrature recurrence failed: {sol.message}")
    vals = np.zeros_like(sorted_taus)
    vals[sorted_taus > 0] = sol.y[-1]
    undo = np.empty_like(vals)
    undo[order] = vals
    return undo if np.ndim(tau) else float(undo[0])


def f_value(j: int, k: int, M: int, tau: float | np.ndarray) -> float | np.ndarray:
    """Closed form with automatic fallback to quadrature on cancellation."""
    try:
        return f_closed(j, k, M, tau)
    except NumericFailure:
        return f_quadrature(j, k, M, tau)


# ---------------------------------------------------------------------------
# index bookkeeping
# ---------------------------------------------------------------------------

def omega_set(N: int, M: int, k: int) -> range:
    """Levels sharing exponent ``k``: ``{N - k(M-1) + 1, ..., N - (k-1)(M-1)}``."""
    return range(N - k * (M - 1) + 1, N - (k - 1) * (M - 1) + 1)


def omega_index(N: int, M: int, j: int) -> int:
    """Exponent ``k`` with ``j`` in the k-th level set."""
    if not 1 <= j <= N:
        raise ValidationError(f"level {j} outside 1..{N}")
    k = math.ceil((N - j + 1) / (M - 1))
    assert j in omega_set(N, M, k), (N, M, j, k)
    return k


# ---------------------------------------------------------------------------
# error bounds
# ---------------------------------------------------------------------------

def _base_quantities(ode: NonlinearODE | RescaledODE) -> tuple[NonlinearODE, float, float, float]:
    base = ode.base if isinstance(ode, RescaledODE) else ode
    lam = lambda0(base.F1)
    fm = fm_spectral_norm(base)
    unorm = float(np.linalg.norm(base.u_in))
    return base, lam, fm, unorm


def global_error_bound(
    ode: NonlinearODE | RescaledODE,
    gamma: float | None,
    N: int,
    t: float | np.ndarray,
    allow_nondefault_gamma: bool = False,
) -> float | np.ndarray:
    """Bound on the norm of the whole stacked error vector.

    ``(M-1) |FM| |u_in|^(M-1) (1 - exp(N (lambda0 + gamma^(M-1) |FM|) t))
    / |lambda0 + gamma^(M-1) |FM||``.  Stated for ``gamma = |u_in|``; any
    other value must be opted into explicitly.
    """
    base, lam, fm, unorm = _base_quantities(ode)
    M = base.M
    if lam >= 0:
        raise ValidationError(f"not dissipative: lambda0 = {lam} >= 0")
    if abs(lam) <= unorm ** (M - 1) * fm:
        raise ValidationError(
            "bound requires |lambda0| > |u_in|^(M-1) |FM| (nonlinearity too strong)"
        )
    if gamma is None:
        gamma = unorm
    elif abs(gamma - unorm) > 1e-12 * max(unorm, 1.0) and not allow_nondefault_gamma:
        raise ValidationError(
            "the global bound is stated for gamma = |u_in|; pass "
            "allow_nondefault_gamma=True to evaluate it anyway"
        )
    decay = lam + gamma ** (M - 1) * fm
    if decay >= 0:
        raise ValidationError(
            f"exponent argument lambda0 + gamma^(M-1) |FM| = {decay} must be negative"
        )
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("time must be non-negative")
    vals = (M - 1) * fm * unorm ** (M - 1) * (1.0 - np.exp(N * decay * t)) / abs(decay)
    return vals if vals.ndim else float(vals)


def component_error_bound(
    ode: NonlinearODE | RescaledODE,
    N: int,
    j: int,
    t: float | np.ndarray,
    gamma: float | None = None,
) -> float | np.ndarray:
    """Per-level truncation bound ``(|u_in|/gamma)^j R^k f_{j,k,M}(|lambda0| t)``.

    ``k`` is the level-set exponent for ``j``; at ``j = 1`` this is the
    end-to-end bound on the extracted solution.  ``gamma`` defaults to
    ``|u_in|``; the value of the bound is scale-invariant apart from the
    explicit ``(|u_in|/gamma)^j`` prefactor.
    """
    if isinstance(ode, RescaledODE) and gamma is None:
        gamma = ode.gamma
    base, lam, _, unorm = _base_quantities(ode)
    M = base.M
    if lam >= 0:
        raise ValidationError(f"not dissipative: lambda0 = {lam} >= 0")
    R = r_ratio(base)
    if R >= 1:
        raise ValidationError(f"bound requires R < 1, got R = {R}")
    k = omega_index(N, M, j)
    if gamma is None:
        gamma = unorm
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("time must be non-negative")
    f = f_value(j, k, M, abs(lam) * t)
    vals = (unorm / gamma) ** j * R**k * np.asarray(f)
    return vals if vals.ndim else float(vals)


def required_carleman_order(R: float, M: int, eps: float) -> int:
    """Truncation order making the dominant factor ``R^(ceil(N/(M-1)))`` <= eps.

    ``N = (M-1) ceil(log(1/eps) / log(1/R)) - (M-2)``, clamped to the minimum
    admissible order ``M + 1``.
    """
    if not 0 < R < 1:
        raise ValidationError(f"not dissipative enough: requires 0 < R < 1, got {R}")
    if not 0 < eps < 1:
        raise ValidationError(f"target error must be in (0, 1), got {eps}")
    if M < 2:
        raise ValidationError(f"nonlinearity order must be >= 2, got {M}")
    ratio = math.log(1.0 / eps) / math.log(1.0 / R)
    nearest = round(ratio)
    if abs(ratio - nearest) < 1e-9:
        ratio = nearest
    N = (M - 1) * math.ceil(ratio) - (M - 2)
    return max(N, M + 1)


def refined_carleman_order(
    R: float, M: int, eps: float, lam0: float, T: float
) -> int:
    """Smallest order whose exact factor ``R^k f_{1,k,M}(|lambda0| T)`` meets eps.

    Never larger than the closed-form order, since the scan includes it.
    """
    closed = required_carleman_order(R, M, eps)
    if lam0 >= 0:
        raise ValidationError(f"not dissipative: lambda0 = {lam0} >= 0")
    if T < 0:
        raise ValidationError("horizon must be non-negative")
    tau = abs(lam0) * T
    for N in range(M + 1, closed):
        k = omega_index(N, M, 1)
        if R**k * f_value(1, k, M, tau) <= eps:
            return N
    return closed


def maxnorm_error_bound(
    pde: "ReactionDiffusionProblem",
    N: int,
    j: int,
    t: float | np.ndarray,
    g_value: float,
) -> float | np.ndarray:
    """Max-norm variant of the per-level bound for discretised diffusion.

    ``G^(d j) ((|FM|_inf / |c|) |u_in|_max^(M-1) G^(d M))^k f_{j,k,M}(|c| t)``
    with ``G`` the semigroup infinity-norm peak.  Heuristic: it presumes the
    max-norm of the solution does not grow, which high-order stencils only
    approximately satisfy, so this value is reported but never hard-asserted.
    Returns ``inf`` when the bracketed base reaches 1 (no convergence in N).
    """
    if pde.c >= 0:
        raise ValidationError(f"decay coefficient must be negative, got {pde.c}")
    if g_value < 1.0:
        raise ValidationError(f"semigroup peak must be >= 1, got {g_value}")
    M, d = pde.M, pde.d
    k = omega_index(N, M, j)
    u_max = pde.initial_max_norm()
    bracket = (abs(pde.b) / abs(pde.c)) * u_max ** (M - 1) * g_value ** (d * M)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("time must be non-negative")
    if bracket >= 1.0:
        vals = np.full(t.shape, np.inf)
        return vals if vals.ndim else float("inf")
    f = f_value(j, k, M, abs(pde.c) * t)
    vals = g_value ** (d * j) * bracket**k * np.asarray(f)
    return vals if vals.ndim else float(vals)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    """Everything the truncation analysis says about one problem instance."""

    R: float
    lam0: float
    gamma: float
    N: int
    times: np.ndarray
    eta_bounds: dict[int, np.ndarray]
    stability: dict[str, bool]
    required_N: int | None = None
    refined_N: int | None = None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "R": self.R,
            "lambda0": self.lam0,
            "gamma": self.gamma,
            "N": self.N,
            "times": self.times.tolist(),
            "eta_bounds": {str(j): v.tolist() for j, v in self.eta_bounds.items()},
            "stability": self.stability,
            "required_N": self.required_N,
            "refined_N": self.refined_N,
            "notes": self.notes,
        }


def make_bound_report(
    ode: NonlinearODE,
    gamma: float | None = None,
    N: int | None = None,
    eps: float | None = None,
    times: np.ndarray | None = None,
) -> BoundReport:
    """Assemble verdicts, required order, and per-level bound curves."""
    from .nonlinear_ode import max_stable_gamma

    lam = lambda0(ode.F1)
    R = r_ratio(ode)
    unorm = float(np.linalg.norm(ode.u_in))
    gamma = unorm if gamma is None else float(gamma)
    gamma_max = max_stable_gamma(ode)
    required = refined = None
    if eps is not None:
        required = required_carleman_order(R, ode.M, eps)
        refined = refined_carleman_order(R, ode.M, eps, lam, ode.T)
    if N is None:
        N = required if required is not None else ode.M + 1
    if times is None:
        times = np.linspace(0.0, ode.T, 101)
    times = np.asarray(times, dtype=float)
    eta = {
        j: np.asarray(component_error_bound(ode, N, j, times, gamma=gamma))
        for j in range(1, N + 1)
    }
    stability = {
        "dissipative": lam < 0,
        "contractive_nonlinearity": R < 1,
        "gamma_within_stable_range": gamma <= gamma_max,
    }
    notes = []
    if gamma != unorm:
        notes.append("gamma differs from |u_in|; global-bound comparisons are gated")
    return BoundReport(
        R=R,
        lam0=lam,
        gamma=gamma,
        N=int(N),
        times=times,
        eta_bounds=eta,
        stability=stability,
        required_N=required,
        refined_N=refined,
        notes=notes,
    )
