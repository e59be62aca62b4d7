"""Brute-force minimizer of the precoding objective over the whole 1-bit alphabet."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from onebit_precoding.errors import InputError
from onebit_precoding.model import ComplexChannel, SystemConfig, stack_real, unstack_real

logger = logging.getLogger(__name__)

MAX_ANTENNAS = 10
CHUNK_SIZE = 1 << 15


@dataclass(frozen=True, eq=False)
class OracleResult:
    z_star: np.ndarray
    rho_star: float
    objective: float
    pattern_index: int


def sign_patterns(start: int, stop: int, length: int) -> np.ndarray:
    """
    Rows are the sign patterns with indices start..stop-1. Bit j of the
    index, counted from the most significant end, set means +1, so indices
    follow the lexicographic order of patterns with -1 before +1.
    """
    indices = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(length - 1, -1, -1, dtype=np.int64)
    bits = (indices[:, None] >> shifts) & 1
    return 2.0 * bits - 1.0


def _best_in_range(h_tilde, s_tilde, kappa, penalty, start, stop):
    thetas = sign_patterns(start, stop, h_tilde.shape[1])
    received = kappa * (thetas @ h_tilde.T)
    numerator = received @ s_tilde
    denominator = np.einsum("ij,ij->i", received, received) + penalty
    rho = np.zeros_like(numerator)
    positive = (numerator > 0) & (denominator > 0)
    rho[positive] = numerator[positive] / denominator[positive]
    objective = s_tilde @ s_tilde - 2.0 * rho * numerator + rho**2 * denominator
    best = int(np.argmin(objective))
    return float(objective[best]), start + best, float(rho[best])


def exhaustive_min(channel: ComplexChannel, s, sys: SystemConfig, workers: int = 1) -> OracleResult:
    """
    Enumerate all 4^R transmit vectors, score each at its optimal scale
    rho >= 0 and return the best one; ties go to the smallest pattern index.
    """
    if sys.num_antennas > MAX_ANTENNAS:
        raise InputError(
            f"exhaustive search needs R <= {MAX_ANTENNAS} (4^R candidates), got R = {sys.num_antennas}"
        )
    channel.check_system(sys)
    h_tilde = channel.real_stacked
    s_tilde = stack_real(np.asarray(s))
    kappa = sys.quantizer.kappa
    penalty = sys.num_users * sys.noise_variance
    total = 1 << (2 * sys.num_antennas)
    ranges = [(start, min(start + CHUNK_SIZE, total)) for start in range(0, total, CHUNK_SIZE)]

    def search(bounds):
        return _best_in_range(h_tilde, s_tilde, kappa, penalty, *bounds)

    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            candidates = list(pool.map(search, ranges))
    else:
        candidates = [search(bounds) for bounds in ranges]

    objective, index, rho = min(candidates, key=lambda item: (item[0], item[1]))
    theta = sign_patterns(index, index + 1, 2 * sys.num_antennas)[0]
    logger.debug("oracle searched %d patterns, best index %d objective %.6g", total, index, objective)
    return OracleResult(
        z_star=unstack_real(kappa * theta),
        rho_star=rho,
        objective=objective,
        pattern_index=index,
    )
