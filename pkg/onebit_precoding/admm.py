"""
Nonlinear 1-bit precoder solved by a nonconvex ADMM.

The precoding problem is written over the real stacking
v = stack_real(rho * z):

    minimize  ||s~ - H~ v||^2 + c ||v||^2   subject to  v in Omega,

where Omega holds the vectors whose entries all share one modulus. ADMM
splits it with u = v, alternating a projection onto Omega, a ridge solve
for v (through a cached eigendecomposition of H~^T H~) and a dual step.
The penalty follows a continuation schedule up to a target that satisfies
the convergence condition, and the final u is rounded onto the 1-bit
alphabet.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Tuple

import numpy as np
from scipy import linalg

from onebit_precoding.errors import InputError
from onebit_precoding.model import (
    ComplexChannel,
    SystemConfig,
    genie_rho,
    sign_nonneg,
    stack_real,
    unstack_real,
)

logger = logging.getLogger(__name__)


class UpdateOrder(str, Enum):
    # u, then v (with the new u), then w
    PROJECTION_FIRST = "projection_first"
    # v, then u, then w
    QUADRATIC_FIRST = "quadratic_first"


@dataclass(frozen=True)
class ContinuationSchedule:
    """
    Penalty levels lambda_j = min(target, target / lambda_init_divisor * growth_factor**j).

    Every level below the target is held for hold_iters iterations, then the
    next one starts. When both relative gaps drop below rel_tol on a level
    below the target, the penalty moves straight to the target: for a fixed
    sign pattern the ADMM fixed point does not depend on lambda, so a settled
    iterate stays settled. The target is reached after at most
    top_level * hold_iters iterations. hold_iters=1 gives the plain geometric
    schedule.
    """

    lambda_init_divisor: float = 64.0
    growth_factor: float = 2.0
    hold_iters: int = 12

    def __post_init__(self):
        if not self.lambda_init_divisor >= 1:
            raise InputError("lambda_init_divisor must be >= 1")
        if not self.growth_factor > 1:
            raise InputError("growth_factor must be > 1")
        if self.hold_iters < 1:
            raise InputError("hold_iters must be >= 1")

    @property
    def top_level(self) -> int:
        """First level whose penalty is the target."""
        levels = math.log(self.lambda_init_divisor) / math.log(self.growth_factor)
        return max(0, math.ceil(levels - 1e-12))

    def penalty(self, target: float, level: int) -> float:
        if level >= self.top_level:
            return target
        return min(target, target / self.lambda_init_divisor * self.growth_factor**level)

    def advance(self, level: int, held: int, settled: bool) -> Tuple[int, int]:
        """Level for the next iteration and the iterations already spent on it."""
        if level >= self.top_level:
            return level, held
        if settled:
            return self.top_level, 0
        if held >= self.hold_iters:
            return level + 1, 0
        return level, held


@dataclass(frozen=True)
class AdmmConfig:
    max_iters: int = 100
    rel_tol: float = 1e-7
    continuation: ContinuationSchedule = field(default_factory=ContinuationSchedule)
    margin: float = 1e-3
    update_order: UpdateOrder = UpdateOrder.PROJECTION_FIRST

    def __post_init__(self):
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise InputError("rel_tol must be > 0")
        if not self.margin > 0:
            raise InputError("margin must be > 0")
        object.__setattr__(self, "update_order", UpdateOrder(self.update_order))


@dataclass(frozen=True)
class AdmmState:
    v_tilde: np.ndarray
    u: np.ndarray
    w: np.ndarray
    lam: float
    lagrangian: float
    iteration: int
    gap_v: float = math.inf
    gap_u: float = math.inf
    # continuation level of the next iteration and iterations spent on it
    level: int = 0
    held: int = 0


@dataclass(frozen=True, eq=False)
class PrecodeOutput:
    """Transmit vector plus diagnostics, shared by every precoder."""

    z: np.ndarray
    rho: float
    iters_used: int = 0
    gap_history: List[Tuple[float, float]] = field(default_factory=list)
    lagrangian_trace: List[float] = field(default_factory=list)
    lambda_trace: List[float] = field(default_factory=list)
    lambda_target: float = math.nan
    phi: float = math.nan
    converged: bool = True
    rho_bussgang: Optional[float] = None


@dataclass(frozen=True, eq=False)
class SpectralCache:
    """
    Eigendecomposition H~^T H~ = basis diag(eigvals) basis^T, computed once
    per channel so every later v-update is two matrix-vector products.
    """

    h_tilde: np.ndarray
    basis: np.ndarray
    eigvals: np.ndarray

    @property
    def phi(self) -> float:
        return float(np.max(self.eigvals))

    @classmethod
    def from_channel(cls, h_tilde) -> "SpectralCache":
        """From the full SVD of H~ itself: eigenvalues are squared singular values."""
        h_tilde = np.asarray(h_tilde, dtype=float)
        n = h_tilde.shape[1]
        _, singular, vt = linalg.svd(h_tilde, full_matrices=True)
        eigvals = np.zeros(n)
        eigvals[: singular.size] = singular**2
        return cls(h_tilde=h_tilde, basis=vt.T, eigvals=eigvals)

    @classmethod
    def from_gram(cls, h_tilde) -> "SpectralCache":
        h_tilde = np.asarray(h_tilde, dtype=float)
        eigvals, basis = linalg.eigh(h_tilde.T @ h_tilde)
        return cls(h_tilde=h_tilde, basis=basis, eigvals=np.clip(eigvals, 0.0, None))


def lambda_target(phi: float, c: float, eta: float) -> float:
    """Smallest penalty certified by the convergence condition, times (1 + eta)."""
    if phi < 0 or c < 0 or not eta > 0:
        raise InputError("lambda_target needs phi >= 0, c >= 0 and eta > 0")
    bound = max(math.sqrt(c**2 + 8.0 * (phi + c) ** 2) - c, 8.0 * phi, 8.0 * c)
    return (1.0 + eta) * bound


def reg_coefficient(num_users: int, noise_variance: float, total_power: float) -> float:
    if not total_power > 0:
        raise InputError("total_power must be > 0")
    return num_users * noise_variance / total_power


def v_update(cache: SpectralCache, s_tilde, u, w, c: float, lam: float) -> np.ndarray:
    """[2 H~^T H~ + (2c + lam) I]^{-1} (2 H~^T s~ + lam u + w) via the cached basis."""
    d = 2.0 * (cache.h_tilde.T @ s_tilde) + lam * u + w
    s_hat = 2.0 * cache.eigvals + (2.0 * c + lam)
    return cache.basis @ ((cache.basis.T @ d) / s_hat)


def v_update_dense(h_tilde, s_tilde, u, w, c: float, lam: float) -> np.ndarray:
    h_tilde = np.asarray(h_tilde, dtype=float)
    n = h_tilde.shape[1]
    system = 2.0 * h_tilde.T @ h_tilde + (2.0 * c + lam) * np.eye(n)
    d = 2.0 * (h_tilde.T @ s_tilde) + lam * u + w
    return linalg.solve(system, d, assume_a="pos")


def project_omega(omega) -> np.ndarray:
    """
    Closest vector to omega whose entries share one modulus:
    sign(omega) * ||omega||_1 / n, sign(0) = +1. The zero vector maps to zero.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.size == 0:
        raise InputError("cannot project an empty vector")
    magnitudes = np.abs(omega)
    if np.all(magnitudes == magnitudes[0]):
        modulus = magnitudes[0]
    else:
        modulus = magnitudes.sum() / omega.size
    return sign_nonneg(omega) * modulus


def smooth_objective(h_tilde, s_tilde, v, c: float) -> float:
    residual = s_tilde - h_tilde @ v
    return float(residual @ residual + c * (v @ v))


def augmented_lagrangian(h_tilde, s_tilde, v, u, w, c: float, lam: float) -> float:
    """g(v) - <w, v - u> + lam/2 ||v - u||^2 with u assumed in Omega."""
    diff = v - u
    return smooth_objective(h_tilde, s_tilde, v, c) - float(w @ diff) + 0.5 * lam * float(diff @ diff)


def stationarity_residual(state: AdmmState, h_tilde, s_tilde, c: float) -> float:
    """||2 (H~^T H~ + c I) v - 2 H~^T s~ - w|| + ||v - u||."""
    h_tilde = np.asarray(h_tilde, dtype=float)
    v = state.v_tilde
    gradient = 2.0 * (h_tilde.T @ (h_tilde @ v) + c * v) - 2.0 * (h_tilde.T @ s_tilde)
    return float(np.linalg.norm(gradient - state.w) + np.linalg.norm(v - state.u))


def _relative_gap(new: np.ndarray, old: np.ndarray) -> float:
    step = float(np.linalg.norm(new - old))
    scale = float(np.linalg.norm(new))
    return step / scale if scale > 0 else step


class AdmmPrecoder:
    """
    ADMM precoder bound to one channel.

    The spectral cache, the regularization c and the target penalty are
    computed in the constructor; precode() then only does matrix-vector work
    per iteration, so one instance serves many symbol vectors.
    """

    def __init__(self, channel: ComplexChannel, sys: SystemConfig, cfg: AdmmConfig = AdmmConfig()):
        channel.check_system(sys)
        self.channel = channel
        self.sys = sys
        self.cfg = cfg
        self.kappa = sys.quantizer.kappa
        self.c = reg_coefficient(sys.num_users, sys.noise_variance, sys.total_power)
        self.cache = SpectralCache.from_channel(channel.real_stacked)
        self.lambda_target = lambda_target(self.cache.phi, self.c, cfg.margin)

    def initial_state(self) -> AdmmState:
        n = 2 * self.sys.num_antennas
        zeros = np.zeros(n)
        lam = self.cfg.continuation.penalty(self.lambda_target, 0)
        return AdmmState(v_tilde=zeros, u=zeros.copy(), w=zeros.copy(), lam=lam, lagrangian=math.nan, iteration=0)

    def step(self, state: AdmmState, s_tilde: np.ndarray) -> AdmmState:
        schedule = self.cfg.continuation
        lam = schedule.penalty(self.lambda_target, state.level)
        if self.cfg.update_order is UpdateOrder.PROJECTION_FIRST:
            u = project_omega(state.v_tilde - state.w / lam)
            v = v_update(self.cache, s_tilde, u, state.w, self.c, lam)
        else:
            v = v_update(self.cache, s_tilde, state.u, state.w, self.c, lam)
            u = project_omega(v - state.w / lam)
        w = state.w - lam * (v - u)
        lagrangian = augmented_lagrangian(self.cache.h_tilde, s_tilde, v, u, w, self.c, lam)
        gap_v, gap_u = _relative_gap(v, state.v_tilde), _relative_gap(u, state.u)
        settled = gap_v < self.cfg.rel_tol and gap_u < self.cfg.rel_tol
        level, held = schedule.advance(state.level, state.held + 1, settled)
        return AdmmState(
            v_tilde=v,
            u=u,
            w=w,
            lam=lam,
            lagrangian=lagrangian,
            iteration=state.iteration + 1,
            gap_v=gap_v,
            gap_u=gap_u,
            level=level,
            held=held,
        )

    def iterate(self, s) -> Iterator[AdmmState]:
        """Yield the state after every iteration until convergence or max_iters."""
        s = np.asarray(s)
        if s.shape != (self.sys.num_users,):
            raise InputError(f"symbol vector must have shape ({self.sys.num_users},), got {s.shape}")
        s_tilde = stack_real(s)
        state = self.initial_state()
        for _ in range(self.cfg.max_iters):
            state = self.step(state, s_tilde)
            yield state
            if self.has_converged(state):
                return

    def has_converged(self, state: AdmmState) -> bool:
        # gaps only count once the penalty sits at its target
        return (
            state.lam == self.lambda_target
            and state.gap_v < self.cfg.rel_tol
            and state.gap_u < self.cfg.rel_tol
        )

    def round(self, u: np.ndarray) -> np.ndarray:
        """z~ = kappa sign(u), then back to the complex transmit vector."""
        return unstack_real(self.kappa * sign_nonneg(u))

    def precode(self, s) -> PrecodeOutput:
        gaps, lagrangians, lambdas = [], [], []
        state = None
        for state in self.iterate(s):
            gaps.append((state.gap_v, state.gap_u))
            lagrangians.append(state.lagrangian)
            lambdas.append(state.lam)
            logger.debug(
                "iter %d lambda=%.4g gap_v=%.3e gap_u=%.3e L=%.6g",
                state.iteration, state.lam, state.gap_v, state.gap_u, state.lagrangian,
            )
        converged = self.has_converged(state)
        if not converged:
            logger.debug(
                "ADMM stopped at max_iters=%d without reaching rel_tol (%dx%d, %.1f dB)",
                self.cfg.max_iters, self.sys.num_antennas, self.sys.num_users, self.sys.snr_db,
            )
        z = self.round(state.u)
        return PrecodeOutput(
            z=z,
            rho=genie_rho(self.channel, s, z, self.sys.noise_variance),
            iters_used=state.iteration,
            gap_history=gaps,
            lagrangian_trace=lagrangians,
            lambda_trace=lambdas,
            lambda_target=self.lambda_target,
            phi=self.cache.phi,
            converged=converged,
        )


def solve(channel: ComplexChannel, s, sys: SystemConfig, cfg: AdmmConfig = AdmmConfig()) -> PrecodeOutput:
    start = time.perf_counter()
    output = AdmmPrecoder(channel, sys, cfg).precode(s)
    logger.debug(
        "solved %dx%d in %d iterations (%.3f s)",
        sys.num_antennas, sys.num_users, output.iters_used, time.perf_counter() - start,
    )
    return output
