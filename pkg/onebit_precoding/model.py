"""
Domain types shared by every precoder: system parameters, channels,
constellations, the 1-bit quantizer and complex/real stacking.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from onebit_precoding.errors import InputError

logger = logging.getLogger(__name__)

# Floor for the receiver scale when the optimal one is not positive.
RHO_FLOOR = 1e-12


class Modulation(str, Enum):
    QPSK = "QPSK"
    QAM16 = "QAM16"
    QAM64 = "QAM64"

    @property
    def bits_per_symbol(self) -> int:
        return {"QPSK": 2, "QAM16": 4, "QAM64": 6}[self.value]

    @property
    def order(self) -> int:
        return 2 ** self.bits_per_symbol


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _require_finite(array, name: str) -> np.ndarray:
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise InputError(f"{name} contains non-finite entries")
    return array


def sign_nonneg(x) -> np.ndarray:
    """Elementwise sign with sign(0) = +1 (also for -0.0)."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class SystemConfig:
    """Downlink parameters: U users, R antennas, power budget and noise."""

    num_users: int
    num_antennas: int
    total_power: float = 1.0
    noise_variance: float = 0.0
    modulation: Modulation = Modulation.QPSK
    # variance of Re(H_ij) and of Im(H_ij); 1.0 gives E|H_ij|^2 = 2
    channel_variance: float = 1.0

    def __post_init__(self):
        if self.num_users < 1 or self.num_antennas < 1:
            raise InputError("num_users and num_antennas must be positive")
        if self.num_users > self.num_antennas:
            raise InputError(
                f"num_users ({self.num_users}) must not exceed "
                f"num_antennas ({self.num_antennas})"
            )
        if not (math.isfinite(self.total_power) and self.total_power > 0):
            raise InputError("total_power must be finite and > 0")
        if not (math.isfinite(self.noise_variance) and self.noise_variance >= 0):
            raise InputError("noise_variance must be finite and >= 0")
        if not (math.isfinite(self.channel_variance) and self.channel_variance > 0):
            raise InputError("channel_variance must be finite and > 0")
        object.__setattr__(self, "modulation", Modulation(self.modulation))

    @classmethod
    def from_snr_db(
        cls,
        num_users: int,
        num_antennas: int,
        snr_db: float,
        total_power: float = 1.0,
        modulation: Modulation = Modulation.QPSK,
        channel_variance: float = 1.0,
    ) -> "SystemConfig":
        return cls(
            num_users=num_users,
            num_antennas=num_antennas,
            total_power=total_power,
            noise_variance=noise_variance_for_snr(snr_db, total_power),
            modulation=modulation,
            channel_variance=channel_variance,
        )

    def with_snr_db(self, snr_db: float) -> "SystemConfig":
        return replace(
            self, noise_variance=noise_variance_for_snr(snr_db, self.total_power)
        )

    @property
    def snr(self) -> float:
        """alpha = P_TX / noise variance (inf in the noiseless case)."""
        if self.noise_variance == 0:
            return math.inf
        return self.total_power / self.noise_variance

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr) if self.noise_variance > 0 else math.inf

    @property
    def quantizer(self) -> "QuantizerParams":
        return QuantizerParams.for_system(self)


def noise_variance_for_snr(snr_db: float, total_power: float = 1.0) -> float:
    if not math.isfinite(snr_db):
        raise InputError(f"snr_db must be finite, got {snr_db}")
    return total_power * 10.0 ** (-snr_db / 10.0)


@dataclass(frozen=True)
class QuantizerParams:
    kappa: float

    def __post_init__(self):
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise InputError(f"kappa must be finite and > 0, got {self.kappa}")

    @classmethod
    def for_system(cls, sys: SystemConfig) -> "QuantizerParams":
        return cls(kappa=math.sqrt(sys.total_power / (2 * sys.num_antennas)))

    @property
    def alphabet(self) -> np.ndarray:
        return self.kappa * np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])


def stack_real(x) -> np.ndarray:
    """
    Real-valued equivalent of a complex vector or matrix.

    A vector s becomes [Re(s); Im(s)]. A U x R matrix H becomes the
    2U x 2R matrix [[Re H, -Im H], [Im H, Re H]], so that
    stack_real(H @ v) == stack_real(H) @ stack_real(v).
    """
    x = _require_finite(x, "input")
    if x.ndim == 1:
        return np.concatenate([x.real, x.imag]).astype(float)
    if x.ndim == 2:
        re, im = x.real.astype(float), x.imag.astype(float)
        return np.block([[re, -im], [im, re]])
    raise InputError(f"expected a vector or a matrix, got {x.ndim} dimensions")


def unstack_real(x) -> np.ndarray:
    x = _require_finite(x, "input")
    if x.ndim != 1 or x.size % 2:
        raise InputError("expected a real vector of even length")
    half = x.size // 2
    return x[:half] + 1j * x[half:]


@dataclass(frozen=True, eq=False)
class ComplexChannel:
    """U x R channel matrix H together with its real stacking."""

    entries: np.ndarray
    real_stacked: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = _require_finite(self.entries, "channel").astype(complex)
        if entries.ndim != 2:
            raise InputError(f"channel must be a matrix, got shape {entries.shape}")
        object.__setattr__(self, "entries", _readonly(entries))
        object.__setattr__(self, "real_stacked", _readonly(stack_real(entries)))

    @property
    def num_users(self) -> int:
        return self.entries.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.entries.shape[1]

    def apply(self, z) -> np.ndarray:
        return self.entries @ np.asarray(z)

    def check_system(self, sys: SystemConfig):
        if (self.num_users, self.num_antennas) != (sys.num_users, sys.num_antennas):
            raise InputError(
                f"channel shape {self.entries.shape} does not match system "
                f"{sys.num_users}x{sys.num_antennas}"
            )


def quantize_1bit(x, kappa: float) -> np.ndarray:
    """kappa * (sign(Re x) + j sign(Im x)), sign(0) = +1."""
    if not (math.isfinite(kappa) and kappa > 0):
        raise InputError(f"kappa must be finite and > 0, got {kappa}")
    x = _require_finite(x, "precoded signal")
    return kappa * (sign_nonneg(x.real) + 1j * sign_nonneg(x.imag))


def transmit_power(z) -> float:
    return float(np.vdot(z, z).real)


def _gray(i: int) -> int:
    return i ^ (i >> 1)


@dataclass(frozen=True, eq=False)
class Constellation:
    """
    Square Gray-coded QAM with unit average energy.

    Point index n = i_re * L + i_im, where i_re and i_im index the L
    amplitude levels of each axis; bits are gray(i_re) followed by
    gray(i_im), MSB first.
    """

    modulation: Modulation
    points: np.ndarray
    bit_map: np.ndarray
    scale: float

    @property
    def bits_per_symbol(self) -> int:
        return self.modulation.bits_per_symbol

    @property
    def levels_per_axis(self) -> int:
        return 2 ** (self.bits_per_symbol // 2)

    def modulate(self, indices) -> np.ndarray:
        return self.points[np.asarray(indices)]

    def bits(self, indices) -> np.ndarray:
        return self.bit_map[np.asarray(indices)]

    def _axis_index(self, values: np.ndarray) -> np.ndarray:
        levels = self.levels_per_axis
        i = np.rint((values / self.scale + (levels - 1)) / 2.0)
        return np.clip(i, 0, levels - 1).astype(int)

    def nearest(self, values) -> np.ndarray:
        """Index of the closest point for every entry of ``values``."""
        values = np.asarray(values)
        return self._axis_index(values.real) * self.levels_per_axis + self._axis_index(
            values.imag
        )


def build_constellation(modulation) -> Constellation:
    modulation = Modulation(modulation)
    order = modulation.order
    axis_bits = modulation.bits_per_symbol // 2
    levels = 2 ** axis_bits
    amplitudes = 2.0 * np.arange(levels) - (levels - 1)
    scale = 1.0 / math.sqrt(2.0 * (order - 1) / 3.0)

    points = np.empty(order, dtype=complex)
    bit_map = np.empty((order, modulation.bits_per_symbol), dtype=np.int8)
    shifts = np.arange(axis_bits - 1, -1, -1)
    for i_re in range(levels):
        for i_im in range(levels):
            n = i_re * levels + i_im
            points[n] = scale * (amplitudes[i_re] + 1j * amplitudes[i_im])
            bit_map[n, :axis_bits] = (_gray(i_re) >> shifts) & 1
            bit_map[n, axis_bits:] = (_gray(i_im) >> shifts) & 1

    return Constellation(
        modulation=modulation,
        points=_readonly(points),
        bit_map=_readonly(bit_map),
        scale=scale,
    )


def precoding_objective(channel: ComplexChannel, s, z, rho: float, noise_variance: float) -> float:
    """||s - rho H z||^2 + rho^2 U noise_variance."""
    residual = np.asarray(s) - rho * channel.apply(z)
    return float(
        np.vdot(residual, residual).real
        + rho**2 * channel.num_users * noise_variance
    )


def genie_rho(channel: ComplexChannel, s, z, noise_variance: float) -> float:
    """
    Receiver scale minimizing the precoding objective for a fixed z:
    Re(s^H H z) / (||H z||^2 + U noise_variance), floored at RHO_FLOOR.
    """
    hz = channel.apply(z)
    numerator = float(np.vdot(s, hz).real)
    denominator = float(np.vdot(hz, hz).real) + channel.num_users * noise_variance
    if numerator <= 0 or denominator <= 0:
        logger.debug("non-positive optimal scale, using floor %g", RHO_FLOOR)
        return RHO_FLOOR
    return numerator / denominator
