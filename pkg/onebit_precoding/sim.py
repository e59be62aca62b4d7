"""
Monte Carlo engine: channel, symbol and noise generation, CSI errors,
transmission, detection and BER aggregation.

Every trial draws its random numbers from its own streams derived from
(seed, trial index), so results do not depend on how trials are spread
over workers.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm
from tqdm import tqdm

from onebit_precoding.admm import AdmmConfig, AdmmPrecoder
from onebit_precoding.baselines import (
    LinearKind,
    build_linear,
    precode_linear_quantized,
    precode_zf_infinite,
)
from onebit_precoding.errors import InputError, PrecodingError, SolverError
from onebit_precoding.model import (
    ComplexChannel,
    Constellation,
    SystemConfig,
    build_constellation,
    genie_rho,
    transmit_power,
)

logger = logging.getLogger(__name__)

MAX_DELTA = 0.5


class PrecoderName(str, Enum):
    ADMM = "ADMM"
    ZF_Q = "ZF_Q"
    MRT_Q = "MRT_Q"
    WF_Q = "WF_Q"
    ZFI = "ZFi"


class CsiErrorModel(str, Enum):
    NONE = "None"
    GAUSSIAN = "Gaussian"
    UNIFORM = "Uniform"


QUANTIZED_LINEAR = {
    PrecoderName.ZF_Q: LinearKind.ZF,
    PrecoderName.MRT_Q: LinearKind.MRT,
    PrecoderName.WF_Q: LinearKind.WF,
}


@dataclass(frozen=True)
class CsiSpec:
    """
    Imperfect CSI: H_hat = (1 - delta) H + delta dH. With literal_formula the
    weights are swapped, H_hat = delta H + (1 - delta) dH.

    delta == 0 and error_model None go together: perfect CSI is spelled
    CsiSpec(), every other spec has delta > 0 and an error model.
    """

    delta: float = 0.0
    error_model: CsiErrorModel = CsiErrorModel.NONE
    literal_formula: bool = False

    def __post_init__(self):
        if not 0.0 <= self.delta <= MAX_DELTA:
            raise InputError(f"delta must lie in [0, {MAX_DELTA}], got {self.delta}")
        model = CsiErrorModel(self.error_model)
        object.__setattr__(self, "error_model", model)
        if model is CsiErrorModel.NONE and self.delta > 0:
            raise InputError(f"delta={self.delta} needs an error model, got None")
        if model is not CsiErrorModel.NONE and self.delta == 0:
            raise InputError(f"error model {model.value} needs delta > 0")

    @classmethod
    def at(cls, delta: float, error_model: CsiErrorModel, literal_formula: bool = False) -> "CsiSpec":
        """Spec for one grid point; delta == 0 is the perfect-CSI reference."""
        if delta == 0:
            return cls()
        return cls(delta, error_model, literal_formula)

    @property
    def perfect(self) -> bool:
        return self.error_model is CsiErrorModel.NONE


@dataclass(frozen=True)
class TrialSpec:
    sys: SystemConfig
    precoder: PrecoderName
    snr_db: float
    csi: CsiSpec = field(default_factory=CsiSpec)
    seed: int = 0
    trials: int = 1000
    num_symbol_vectors: int = 10
    admm: AdmmConfig = field(default_factory=AdmmConfig)

    def __post_init__(self):
        object.__setattr__(self, "precoder", PrecoderName(self.precoder))
        if self.trials < 1 or self.num_symbol_vectors < 1:
            raise InputError("trials and num_symbol_vectors must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")

    @property
    def system(self) -> SystemConfig:
        return self.sys.with_snr_db(self.snr_db)


@dataclass(frozen=True)
class BerReport:
    snr_db: float
    precoder: str
    bit_errors: int
    bits_sent: int
    trials: int
    wall_time_s: float
    mean_iters: float
    failed_trials: int = 0
    delta: float = 0.0
    error_model: str = CsiErrorModel.NONE.value
    confidence: float = 0.95

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_sent if self.bits_sent else math.nan

    @property
    def interval(self) -> Tuple[float, float]:
        return wilson_interval(self.bit_errors, self.bits_sent, self.confidence)

    @property
    def failure_rate(self) -> float:
        return self.failed_trials / self.trials


@dataclass(frozen=True)
class TrialOutcome:
    trial_index: int
    bit_errors: int = 0
    bits_sent: int = 0
    iterations: int = 0
    solve_time_s: float = 0.0
    failed: bool = False


def wilson_interval(errors: int, total: int, confidence: float = 0.95) -> Tuple[float, float]:
    if total <= 0:
        return (0.0, 1.0)
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = errors / total
    denominator = 1.0 + z**2 / total
    centre = (p + z**2 / (2 * total)) / denominator
    half = z * math.sqrt(p * (1 - p) / total + z**2 / (4 * total**2)) / denominator
    lo = 0.0 if errors == 0 else max(0.0, centre - half)
    hi = 1.0 if errors == total else min(1.0, centre + half)
    return (lo, hi)


def trial_streams(seed: int, trial_index: int, count: int = 4) -> List[np.random.Generator]:
    """Independent generators for channel, CSI error, symbols and noise."""
    children = np.random.SeedSequence([seed, trial_index]).spawn(count)
    return [np.random.default_rng(child) for child in children]


def draw_channel(num_users: int, num_antennas: int, rng: np.random.Generator, variance: float = 1.0) -> ComplexChannel:
    """Re and Im of every entry i.i.d. N(0, variance)."""
    scale = math.sqrt(variance)
    shape = (num_users, num_antennas)
    return ComplexChannel(scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)))


def _error_matrix(shape, model: CsiErrorModel, rng: np.random.Generator) -> np.ndarray:
    if model is CsiErrorModel.GAUSSIAN:
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    if model is CsiErrorModel.UNIFORM:
        return (rng.uniform(-1.0, 1.0, shape) + 1j * rng.uniform(-1.0, 1.0, shape)) / math.sqrt(3.0)
    return np.zeros(shape, dtype=complex)


def corrupt_csi(channel: ComplexChannel, csi: CsiSpec, rng: np.random.Generator) -> ComplexChannel:
    """Channel estimate seen by the precoder; transmission keeps the true channel."""
    if csi.perfect:
        return channel
    error = _error_matrix(channel.entries.shape, csi.error_model, rng)
    if csi.literal_formula:
        return ComplexChannel(csi.delta * channel.entries + (1.0 - csi.delta) * error)
    return ComplexChannel((1.0 - csi.delta) * channel.entries + csi.delta * error)


def draw_noise(size: int, noise_variance: float, rng: np.random.Generator) -> np.ndarray:
    """CN(0, noise_variance) samples."""
    scale = math.sqrt(noise_variance / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def detect(y, gain: float, constellation: Constellation) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest constellation point to y / gain, plus its Gray bits."""
    if not gain > 0:
        raise InputError(f"receiver gain must be > 0, got {gain}")
    indices = constellation.nearest(np.asarray(y) / gain)
    return constellation.modulate(indices), constellation.bits(indices)


class Transmitter:
    """Precoder of one kind designed on one channel estimate."""

    def __init__(self, name: PrecoderName, estimate: ComplexChannel, sys: SystemConfig, admm: AdmmConfig):
        self.name = name
        self.sys = sys
        if name is PrecoderName.ADMM:
            self.admm = AdmmPrecoder(estimate, sys, admm)
        elif name is PrecoderName.ZFI:
            self.linear = build_linear(estimate, LinearKind.ZF, sys)
        else:
            self.linear = build_linear(estimate, QUANTIZED_LINEAR[name], sys)

    def __call__(self, s) -> Tuple[np.ndarray, int]:
        if self.name is PrecoderName.ZFI:
            return precode_zf_infinite(self.linear, s), 0
        if self.name is PrecoderName.ADMM:
            output = self.admm.precode(s)
            z, used = output.z, output.iters_used
        else:
            z, used = precode_linear_quantized(self.linear, s, self.sys).z, 0
        # every 1-bit vector spends exactly the power budget
        power = transmit_power(z)
        if not math.isclose(power, self.sys.total_power, rel_tol=1e-9):
            raise SolverError(f"{self.name.value} transmits {power:.6g} W, budget is {self.sys.total_power:.6g} W")
        return z, used


def run_trial(spec: TrialSpec, trial_index: int) -> TrialOutcome:
    sys = spec.system
    constellation = build_constellation(sys.modulation)
    channel_rng, csi_rng, symbol_rng, noise_rng = trial_streams(spec.seed, trial_index)

    channel = draw_channel(sys.num_users, sys.num_antennas, channel_rng, sys.channel_variance)
    estimate = corrupt_csi(channel, spec.csi, csi_rng)
    errors = sent = iterations = 0
    solve_time = 0.0
    try:
        transmitter = Transmitter(spec.precoder, estimate, sys, spec.admm)
        for _ in range(spec.num_symbol_vectors):
            indices = symbol_rng.integers(constellation.modulation.order, size=sys.num_users)
            s = constellation.modulate(indices)
            start = time.perf_counter()
            z, used = transmitter(s)
            solve_time += time.perf_counter() - start
            iterations += used

            y = channel.apply(z) + draw_noise(sys.num_users, sys.noise_variance, noise_rng)
            # genie scale uses the true channel
            rho = genie_rho(channel, s, z, sys.noise_variance)
            _, bits = detect(y, 1.0 / rho, constellation)
            errors += int(np.count_nonzero(bits != constellation.bits(indices)))
            sent += bits.size
    except PrecodingError as exc:
        logger.warning("trial %d (%s, %.1f dB) failed: %s", trial_index, spec.precoder.value, sys.snr_db, exc)
        return TrialOutcome(trial_index=trial_index, failed=True)
    return TrialOutcome(
        trial_index=trial_index,
        bit_errors=errors,
        bits_sent=sent,
        iterations=iterations,
        solve_time_s=solve_time,
    )


def _run_block(task) -> List[TrialOutcome]:
    spec, indices = task
    return [run_trial(spec, i) for i in indices]


def aggregate(spec: TrialSpec, outcomes: Sequence[TrialOutcome], wall_time_s: float) -> BerReport:
    succeeded = [o for o in outcomes if not o.failed]
    vectors = len(succeeded) * spec.num_symbol_vectors
    return BerReport(
        snr_db=spec.snr_db,
        precoder=spec.precoder.value,
        bit_errors=sum(o.bit_errors for o in succeeded),
        bits_sent=sum(o.bits_sent for o in succeeded),
        trials=len(outcomes),
        wall_time_s=wall_time_s,
        mean_iters=sum(o.iterations for o in succeeded) / vectors if vectors else 0.0,
        failed_trials=len(outcomes) - len(succeeded),
        delta=spec.csi.delta,
        error_model=spec.csi.error_model.value,
    )


def _blocks(trials: int, workers: int) -> List[range]:
    size = max(1, math.ceil(trials / (4 * workers)))
    return [range(start, min(start + size, trials)) for start in range(0, trials, size)]


def run_sweep(specs: Sequence[TrialSpec], workers: int = 1, progress: bool = False) -> List[BerReport]:
    """Run every spec and return one BerReport per spec, in order."""
    reports = []
    executor: Optional[ProcessPoolExecutor] = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for spec in tqdm(specs, desc="sweep", disable=not progress):
            start = time.perf_counter()
            tasks = [(spec, block) for block in _blocks(spec.trials, workers)]
            if executor is None:
                outcomes = [o for task in tasks for o in _run_block(task)]
            else:
                outcomes = [o for block in executor.map(_run_block, tasks) for o in block]
            outcomes.sort(key=lambda o: o.trial_index)
            report = aggregate(spec, outcomes, time.perf_counter() - start)
            logger.info(
                "%s snr=%.1f dB delta=%.2f (%s): ber=%.3e over %d bits, %d failed",
                report.precoder, report.snr_db, report.delta, report.error_model,
                report.ber, report.bits_sent, report.failed_trials,
            )
            reports.append(report)
    finally:
        if executor is not None:
            executor.shutdown()
    return reports
