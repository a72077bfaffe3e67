"""Truncated-Taylor time stepping for the linearised system.

One step applies ``sum_{l=0}^{K} (dt A)^l / l!`` through repeated matvecs, so
the per-step defect is of order ``(|A| dt)**(K+1) / (K+1)!``.  Vectors carry
their true magnitudes end to end; quantum-style normalisation only appears in
the measurement-probability formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .carleman import CarlemanMatrix, CarlemanVector
from .errors import NumericFailure, ValidationError

VectorLike = Union[np.ndarray, CarlemanVector]


def _copy(y: VectorLike) -> VectorLike:
    return y.copy()


def _iadd(y: VectorLike, other: VectorLike) -> None:
    if isinstance(y, np.ndarray):
        y += other
    else:
        y.iadd(other)


def _scale(y: VectorLike, c: float) -> None:
    if isinstance(y, np.ndarray):
        y *= c
    else:
        y.scale(c)


def _finite(y: VectorLike) -> bool:
    if isinstance(y, np.ndarray):
        return bool(np.all(np.isfinite(y)))
    return y.is_finite()


def _norm(y: VectorLike) -> float:
    if isinstance(y, np.ndarray):
        return float(np.linalg.norm(y))
    return y.norm()


def taylor_step(
    apply_A: Callable[[VectorLike], VectorLike],
    y: VectorLike,
    dt: float,
    K: int,
) -> VectorLike:
    """Advance ``y`` by one step of the order-K truncated exponential series."""
    if K < 1:
        raise ValidationError(f"Taylor order must be >= 1, got {K}")
    term = _copy(y)
    acc = _copy(y)
    for ell in range(1, K + 1):
        term = apply_A(term)
        _scale(term, dt / ell)
        _iadd(acc, term)
    if not _finite(acc):
        raise NumericFailure("non-finite intermediate in Taylor step")
    return acc


def taylor_step_defect_bound(norm_A: float, dt: float, K: int, y_norm: float = 1.0) -> float:
    """Leading bound on the one-step series truncation error."""
    return (norm_A * dt) ** (K + 1) / math.factorial(K + 1) * y_norm


@dataclass
class PropagationConfig:
    """Stepping knobs; leave ``dt`` and ``n_steps`` unset for the auto rule.

    The auto rule keeps the per-step Taylor argument at most one,
    ``dt = 1 / |A|_bound``, clamped to at least ``T / 10**6`` steps-wise, so
    factorial decay dominates the series tail.

    ``matvec_mode`` selects between the always-available block-structured
    action and a cached sparse assembly of the operator, which is much faster
    per step on small systems; ``auto`` assembles below ``assembled_cap``
    total dimensions.
    """

    total_time: float
    taylor_order: int = 10
    dt: float | None = None
    n_steps: int | None = None
    strict_stability: bool = True
    blowup_factor: float = 1e6
    record_every: int | None = None
    matvec_mode: str = "auto"
    assembled_cap: int = 200_000

    def resolve_steps(self, norm_bound: float) -> tuple[float, int]:
        T = self.total_time
        if T < 0:
            raise ValidationError("total_time must be non-negative")
        if T == 0:
            return 0.0, 0
        if self.dt is not None and self.n_steps is not None:
            dt, steps = float(self.dt), int(self.n_steps)
        elif self.dt is not None:
            dt = float(self.dt)
            steps = max(1, round(T / dt))
        elif self.n_steps is not None:
            steps = int(self.n_steps)
            dt = T / steps
        else:
            dt = min(1.0 / norm_bound if norm_bound > 0 else T, T)
            dt = max(dt, T / 1e6)
            steps = math.ceil(T / dt)
            dt = T / steps
        if steps < 1 or dt <= 0:
            raise ValidationError(f"invalid stepping: dt={dt}, steps={steps}")
        if abs(dt * steps - T) > 1e-12 * max(abs(T), 1.0):
            raise ValidationError(
                f"dt * steps = {dt * steps} does not reproduce T = {T} to 1e-12"
            )
        return dt, steps


@dataclass
class EvolveResult:
    """Trajectory records from :func:`evolve`.

    ``step_norms`` holds the full per-step norm history; snapshot arrays are
    thinned to the recording grid.
    """

    times: np.ndarray
    block1: np.ndarray
    block1_share: np.ndarray
    y_norms: np.ndarray
    step_norms: np.ndarray
    y_final: CarlemanVector
    dt: float
    n_steps: int
    stability_bound: float

    def block1_at(self, time: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - time)))
        if abs(self.times[idx] - time) > 1e-9 * max(1.0, abs(time)):
            raise ValidationError(f"time {time} was not recorded")
        return self.block1[idx]


def evolve(mat: CarlemanMatrix, y0: CarlemanVector, config: PropagationConfig) -> EvolveResult:
    """Repeated Taylor steps over ``[0, T]`` with stability and blow-up guards."""
    bound = mat.gershgorin_max_eig_bound()
    if config.strict_stability and bound > 0:
        raise ValidationError(
            f"stability check failed: Gershgorin bound {bound} > 0 "
            "(raise gamma_max or disable strict_stability)"
        )
    dt, n_steps = config.resolve_steps(mat.spectral_norm_bound())
    every = config.record_every or max(1, n_steps // 1000)

    if config.matvec_mode not in ("auto", "structured", "assembled"):
        raise ValidationError(f"unknown matvec_mode {config.matvec_mode!r}")
    assembled = config.matvec_mode == "assembled" or (
        config.matvec_mode == "auto" and mat.total_dimension <= config.assembled_cap
    )
    if assembled:
        sparse_op = mat.to_sparse(cap=config.assembled_cap)
        apply_A = lambda v: sparse_op @ v  # noqa: E731
        y: "np.ndarray | CarlemanVector" = y0.concatenate()
        n1 = y0.n
    else:
        apply_A = mat.apply
        y = y0.copy()
        n1 = y0.n

    def first_level(vec) -> np.ndarray:
        return vec[:n1].copy() if assembled else vec.blocks[0].copy()

    def first_share(vec, norm: float) -> float:
        head = vec[:n1] if assembled else vec.blocks[0]
        return float(head @ head) / norm**2

    norm0 = _norm(y)
    times = [0.0]
    block1 = [first_level(y)]
    shares = [first_share(y, norm0)]
    norms = [norm0]
    step_norms = [norm0]

    for step in range(1, n_steps + 1):
        y = taylor_step(apply_A, y, dt, config.taylor_order)
        norm = _norm(y)
        step_norms.append(norm)
        if norm > config.blowup_factor * max(norm0, 1e-300):
            raise NumericFailure(
                f"blow-up detected at step {step}: |y| = {norm} "
                f"exceeds {config.blowup_factor} x |y0|"
            )
        if step % every == 0 or step == n_steps:
            times.append(step * dt)
            block1.append(first_level(y))
            shares.append(first_share(y, norm))
            norms.append(norm)

    y_final = CarlemanVector.from_flat(y, mat.n, mat.N) if assembled else y
    return EvolveResult(
        times=np.array(times),
        block1=np.array(block1),
        block1_share=np.array(shares),
        y_norms=np.array(norms),
        step_norms=np.array(step_norms),
        y_final=y_final,
        dt=dt,
        n_steps=n_steps,
        stability_bound=bound,
    )


def extract_block(y: CarlemanVector, j: int) -> tuple[np.ndarray, float]:
    """Level ``j`` of the stacked vector and its squared-norm share."""
    if not 1 <= j <= y.order:
        raise ValidationError(f"level {j} outside 1..{y.order}")
    return y.blocks[j - 1].copy(), float(y.shares()[j - 1])


def success_probability(u_norm: float, gamma: float, N: int) -> float:
    """Probability of measuring the solution level of the lifted state.

    Equals ``(1 - r^2) / (1 - r^(2N))`` for ``r = u_norm / gamma``, evaluated
    through the geometric sum so the removable point ``r = 1`` comes out as
    exactly ``1/N``.  For ``gamma >= u_norm`` the value is at least ``1/N``.
    """
    if gamma <= 0:
        raise ValidationError(f"scaling factor must be positive, got {gamma}")
    if u_norm < 0:
        raise ValidationError("norms are non-negative")
    if N < 1:
        raise ValidationError(f"truncation order must be >= 1, got {N}")
    r = u_norm / gamma
    powers = r ** (2.0 * np.arange(N))
    return float(1.0 / powers.sum())
