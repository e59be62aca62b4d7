"""
Linear precoders followed by the 1-bit quantizer (MRT, ZF, WF), the
Bussgang gain of the quantized signal, and ZF with infinite-resolution DACs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import solve, svdvals

from onebit_precoding.admm import PrecodeOutput
from onebit_precoding.errors import InputError, SolverError
from onebit_precoding.model import ComplexChannel, SystemConfig, genie_rho, quantize_1bit

logger = logging.getLogger(__name__)

# smallest singular value relative to the largest accepted for ZF
RANK_TOLERANCE = 1e-10


class LinearKind(str, Enum):
    MRT = "MRT"
    ZF = "ZF"
    WF = "WF"


@dataclass(frozen=True, eq=False)
class LinearPrecoder:
    """x = beta P s with beta^2 tr(P P^H) = P_TX."""

    matrix: np.ndarray
    beta: float
    kind: LinearKind
    channel: ComplexChannel

    @property
    def effective(self) -> np.ndarray:
        return self.beta * self.matrix

    def transmit(self, s) -> np.ndarray:
        return self.effective @ np.asarray(s)


@dataclass(frozen=True, eq=False)
class BussgangGain:
    diagonal: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal)


def _check_rank(channel: ComplexChannel):
    singular = svdvals(channel.entries)
    smallest, largest = float(singular.min()), float(singular.max())
    if largest == 0 or smallest <= RANK_TOLERANCE * largest:
        condition = math.inf if smallest == 0 else largest / smallest
        raise SolverError(
            f"channel is rank deficient for zero-forcing (condition number {condition:.3e})"
        )


def build_linear(channel: ComplexChannel, kind, sys: SystemConfig) -> LinearPrecoder:
    kind = LinearKind(kind)
    channel.check_system(sys)
    h = channel.entries
    h_herm = h.conj().T
    identity = np.eye(sys.num_users)

    if kind is LinearKind.MRT:
        matrix = h_herm.copy()
    elif kind is LinearKind.ZF:
        _check_rank(channel)
        matrix = h_herm @ solve(h @ h_herm, identity, assume_a="pos")
    else:
        loading = sys.num_users * sys.noise_variance / sys.total_power
        matrix = h_herm @ solve(h @ h_herm + loading * identity, identity, assume_a="pos")

    trace = float(np.sum(np.abs(matrix) ** 2))
    if trace == 0:
        raise SolverError(f"{kind.value} precoding matrix is zero")
    beta = math.sqrt(sys.total_power / trace)
    return LinearPrecoder(matrix=matrix, beta=beta, kind=kind, channel=channel)


def bussgang_gain(matrix, total_power: float) -> BussgangGain:
    """G = sqrt(2 P_TX / (pi R)) diag(P P^H)^(-1/2) for the R x U matrix feeding the quantizer."""
    matrix = np.asarray(matrix)
    row_power = np.sum(np.abs(matrix) ** 2, axis=1)
    if np.any(row_power == 0):
        raise SolverError("Bussgang gain undefined: precoding matrix has a zero row")
    num_antennas = matrix.shape[0]
    return BussgangGain(diagonal=math.sqrt(2.0 * total_power / (math.pi * num_antennas)) / np.sqrt(row_power))


def bussgang_rho(pre: LinearPrecoder, total_power: float) -> float:
    """Receiver scale from the linearized model z ~ G beta P s: 1 / mean Re diag(H G beta P)."""
    gain = bussgang_gain(pre.effective, total_power)
    path = pre.channel.entries @ (gain.diagonal[:, None] * pre.effective)
    mean_gain = float(np.mean(np.diag(path).real))
    if mean_gain <= 0:
        return math.inf
    return 1.0 / mean_gain


def precode_linear_quantized(pre: LinearPrecoder, s, sys: SystemConfig) -> PrecodeOutput:
    s = np.asarray(s)
    if s.shape != (sys.num_users,):
        raise InputError(f"symbol vector must have shape ({sys.num_users},), got {s.shape}")
    z = quantize_1bit(pre.transmit(s), sys.quantizer.kappa)
    return PrecodeOutput(
        z=z,
        rho=genie_rho(pre.channel, s, z, sys.noise_variance),
        rho_bussgang=bussgang_rho(pre, sys.total_power),
    )


def precode_zf_infinite(pre: LinearPrecoder, s) -> np.ndarray:
    if pre.kind is not LinearKind.ZF:
        raise InputError(f"infinite-resolution benchmark needs a ZF precoder, got {pre.kind.value}")
    return pre.transmit(s)
