"""
The five experiments the command line can run. Each returns a result table
with a fixed column order plus a summary for the run manifest.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np
import pandas as pd
from tqdm import tqdm

from onebit_precoding.admm import AdmmPrecoder
from onebit_precoding.baselines import LinearKind, build_linear, precode_linear_quantized
from onebit_precoding.config import ExperimentConfig, ExperimentKind
from onebit_precoding.errors import PrecodingError
from onebit_precoding.model import SystemConfig, build_constellation, precoding_objective
from onebit_precoding.oracle import exhaustive_min
from onebit_precoding.sim import (
    PrecoderName,
    CsiSpec,
    TrialSpec,
    Transmitter,
    draw_channel,
    run_sweep,
    trial_streams,
)

logger = logging.getLogger(__name__)

# convergence must happen within this many iterations once lambda is fixed
CONVERGENCE_BUDGET = 60

BER_COLUMNS = [
    "snr_db", "precoder", "ber", "ci_lo", "ci_hi", "trials",
    "bit_errors", "bits_sent", "failed_trials", "mean_iters", "wall_time_s",
]
CSI_COLUMNS = ["delta", "error_model"] + BER_COLUMNS
CONVERGENCE_COLUMNS = ["snr_db", "iter", "delta_v", "delta_u", "lagrangian", "lambda"]
RUNTIME_COLUMNS = ["R", "precoder", "mean_solve_s", "mean_iters", "mean_iter_s"]
ORACLE_COLUMNS = ["trial", "oracle_objective", "admm_objective", "zf_objective", "admm_gap"]

# columns whose values depend on the machine clock
TIMING_COLUMNS = {"wall_time_s", "mean_solve_s", "mean_iter_s"}


@dataclass
class ExperimentResult:
    kind: ExperimentKind
    frame: pd.DataFrame
    summary: Dict = field(default_factory=dict)
    timing: Dict = field(default_factory=dict)
    failed_fraction: float = 0.0


def _instance(sys: SystemConfig, seed: int, index: int):
    """Channel and symbol vector of one random instance."""
    channel_rng, _, symbol_rng, _ = trial_streams(seed, index)
    channel = draw_channel(sys.num_users, sys.num_antennas, channel_rng, sys.channel_variance)
    constellation = build_constellation(sys.modulation)
    s = constellation.modulate(symbol_rng.integers(sys.modulation.order, size=sys.num_users))
    return channel, s


def _report_rows(reports, with_csi=False) -> pd.DataFrame:
    rows = []
    for report in reports:
        ci_lo, ci_hi = report.interval
        row = {
            "snr_db": report.snr_db,
            "precoder": report.precoder,
            "ber": report.ber,
            "ci_lo": ci_lo,
            "ci_hi": ci_hi,
            "trials": report.trials,
            "bit_errors": report.bit_errors,
            "bits_sent": report.bits_sent,
            "failed_trials": report.failed_trials,
            "mean_iters": report.mean_iters,
            "wall_time_s": report.wall_time_s,
        }
        if with_csi:
            row.update(delta=report.delta, error_model=report.error_model)
        rows.append(row)
    return pd.DataFrame(rows, columns=CSI_COLUMNS if with_csi else BER_COLUMNS)


def _failed_fraction(reports) -> float:
    trials = sum(r.trials for r in reports)
    return sum(r.failed_trials for r in reports) / trials if trials else 0.0


def ber_sweep(config: ExperimentConfig, workers: int = 1, progress: bool = False) -> ExperimentResult:
    base = config.system.to_system()
    specs = [
        TrialSpec(
            sys=base,
            precoder=precoder,
            snr_db=snr_db,
            seed=config.base_seed,
            trials=config.trials,
            num_symbol_vectors=config.num_symbol_vectors,
            admm=config.admm.to_config(),
        )
        for snr_db in config.snr_grid_db
        for precoder in config.precoders
    ]
    reports = run_sweep(specs, workers=workers, progress=progress)
    frame = _report_rows(reports)
    return ExperimentResult(
        kind=ExperimentKind.BER_SWEEP,
        frame=frame,
        summary={"points": len(reports)},
        timing={"sweep_s": float(frame["wall_time_s"].sum())},
        failed_fraction=_failed_fraction(reports),
    )


def csi_grid(config: ExperimentConfig) -> List[CsiSpec]:
    """CSI points of a sweep; delta == 0 becomes a single perfect-CSI reference ahead of the rest."""
    section = config.csi
    grid = [CsiSpec()] if 0.0 in section.delta_grid else []
    grid += [
        CsiSpec.at(delta, model, section.literal_formula)
        for model in section.error_models
        for delta in section.delta_grid
        if delta > 0
    ]
    return grid


def csi_sweep(config: ExperimentConfig, workers: int = 1, progress: bool = False) -> ExperimentResult:
    base = config.system.to_system()
    specs = [
        TrialSpec(
            sys=base,
            precoder=precoder,
            snr_db=snr_db,
            csi=csi,
            seed=config.base_seed,
            trials=config.trials,
            num_symbol_vectors=config.num_symbol_vectors,
            admm=config.admm.to_config(),
        )
        for csi in csi_grid(config)
        for snr_db in config.snr_grid_db
        for precoder in config.precoders
    ]
    reports = run_sweep(specs, workers=workers, progress=progress)
    frame = _report_rows(reports, with_csi=True)
    return ExperimentResult(
        kind=ExperimentKind.CSI_SWEEP,
        frame=frame,
        summary={"points": len(reports)},
        timing={"sweep_s": float(frame["wall_time_s"].sum())},
        failed_fraction=_failed_fraction(reports),
    )


def iterations_after_fix(lambda_trace: List[float], target: float) -> int:
    """Iterations run with the penalty at its target."""
    return sum(1 for lam in lambda_trace if lam == target)


def convergence(config: ExperimentConfig, workers: int = 1, progress: bool = False) -> ExperimentResult:
    """
    Iterate gaps and augmented Lagrangian of instance 0 per SNR, plus the
    share of config.instances instances that meet rel_tol within the budget.
    """
    admm = config.admm.to_config()
    rows, within_budget = [], {}
    for snr_db in config.snr_grid_db:
        sys = config.system.to_system().with_snr_db(snr_db)
        hits = 0
        for index in tqdm(range(config.instances), desc=f"{snr_db:g} dB", disable=not progress):
            channel, s = _instance(sys, config.base_seed, index)
            output = AdmmPrecoder(channel, sys, admm).precode(s)
            fixed = iterations_after_fix(output.lambda_trace, output.lambda_target)
            if output.converged and fixed <= CONVERGENCE_BUDGET:
                hits += 1
            if index == 0:
                for k, ((gap_v, gap_u), lagrangian, lam) in enumerate(
                    zip(output.gap_history, output.lagrangian_trace, output.lambda_trace), start=1
                ):
                    rows.append(
                        {"snr_db": snr_db, "iter": k, "delta_v": gap_v, "delta_u": gap_u,
                         "lagrangian": lagrangian, "lambda": lam}
                    )
        within_budget[f"{snr_db:g}"] = hits / config.instances
        logger.info("%g dB: %.1f%% of instances converged within %d fixed-penalty iterations",
                    snr_db, 100 * hits / config.instances, CONVERGENCE_BUDGET)
    return ExperimentResult(
        kind=ExperimentKind.CONVERGENCE,
        frame=pd.DataFrame(rows, columns=CONVERGENCE_COLUMNS),
        summary={"converged_within_budget": within_budget, "budget": CONVERGENCE_BUDGET},
    )


def loglog_slope(sizes, times) -> float:
    sizes, times = np.asarray(sizes, dtype=float), np.asarray(times, dtype=float)
    keep = times > 0
    if keep.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(sizes[keep]), np.log(times[keep]), 1)
    return float(slope)


def runtime_scaling(config: ExperimentConfig, workers: int = 1, progress: bool = False) -> ExperimentResult:
    admm = config.admm.to_config()
    snr_db = config.snr_grid_db[0]
    rows, failures, attempts = [], 0, 0
    for num_antennas in config.antennas_grid:
        sys = config.system.to_system(num_antennas).with_snr_db(snr_db)
        for precoder in config.precoders:
            # solve time covers the per-channel setup (SVD, inverse); iterate time only the precode call
            solve_s, iterate_s, iterations, vectors = 0.0, 0.0, 0, 0
            for index in tqdm(range(config.trials), desc=f"R={num_antennas} {precoder.value}", disable=not progress):
                attempts += 1
                channel, s = _instance(sys, config.base_seed, index)
                try:
                    start = time.perf_counter()
                    transmitter = Transmitter(precoder, channel, sys, admm)
                    ready = time.perf_counter()
                    _, used = transmitter(s)
                except PrecodingError as exc:
                    logger.warning("R=%d %s instance %d failed: %s", num_antennas, precoder.value, index, exc)
                    failures += 1
                    continue
                done = time.perf_counter()
                solve_s += done - start
                iterate_s += done - ready
                iterations += used
                vectors += 1
            mean_iters = iterations / vectors if vectors else 0.0
            rows.append({
                "R": num_antennas,
                "precoder": precoder.value,
                "mean_solve_s": solve_s / vectors if vectors else math.nan,
                "mean_iters": mean_iters,
                "mean_iter_s": iterate_s / iterations if iterations else math.nan,
            })
    frame = pd.DataFrame(rows, columns=RUNTIME_COLUMNS)
    admm_rows = frame[frame["precoder"] == PrecoderName.ADMM.value]
    slope = loglog_slope(admm_rows["R"], admm_rows["mean_iter_s"]) if len(admm_rows) else math.nan
    return ExperimentResult(
        kind=ExperimentKind.RUNTIME_SCALING,
        frame=frame,
        timing={"admm_per_iteration_loglog_slope": slope},
        failed_fraction=failures / attempts if attempts else 0.0,
    )


def oracle_gap(config: ExperimentConfig, workers: int = 1, progress: bool = False) -> ExperimentResult:
    sys = config.system.to_system().with_snr_db(config.snr_grid_db[0])
    admm = config.admm.to_config()
    rows, failures = [], 0
    for index in tqdm(range(config.trials), desc="oracle", disable=not progress):
        channel, s = _instance(sys, config.base_seed, index)
        try:
            oracle = exhaustive_min(channel, s, sys, workers=workers)
            admm_out = AdmmPrecoder(channel, sys, admm).precode(s)
            zf_out = precode_linear_quantized(build_linear(channel, LinearKind.ZF, sys), s, sys)
        except PrecodingError as exc:
            logger.warning("oracle instance %d failed: %s", index, exc)
            failures += 1
            continue
        admm_obj = precoding_objective(channel, s, admm_out.z, admm_out.rho, sys.noise_variance)
        zf_obj = precoding_objective(channel, s, zf_out.z, zf_out.rho, sys.noise_variance)
        rows.append({
            "trial": index,
            "oracle_objective": oracle.objective,
            "admm_objective": admm_obj,
            "zf_objective": zf_obj,
            "admm_gap": admm_obj - oracle.objective,
        })
    frame = pd.DataFrame(rows, columns=ORACLE_COLUMNS)
    count = max(len(frame), 1)
    summary = {
        "admm_not_below_oracle": float((frame["admm_gap"] >= -1e-9).sum() / count),
        "admm_not_above_zf": float((frame["admm_objective"] <= frame["zf_objective"]).sum() / count),
        "admm_matches_oracle": float((frame["admm_gap"].abs() <= 1e-9).sum() / count),
    }
    return ExperimentResult(
        kind=ExperimentKind.ORACLE_GAP,
        frame=frame,
        summary=summary,
        failed_fraction=failures / config.trials,
    )


RUNNERS: Dict[ExperimentKind, Callable[..., ExperimentResult]] = {
    ExperimentKind.BER_SWEEP: ber_sweep,
    ExperimentKind.CONVERGENCE: convergence,
    ExperimentKind.CSI_SWEEP: csi_sweep,
    ExperimentKind.RUNTIME_SCALING: runtime_scaling,
    ExperimentKind.ORACLE_GAP: oracle_gap,
}


def run_experiment(config: ExperimentConfig, workers: int = 1, progress: bool = False) -> ExperimentResult:
    logger.info("running %s", config.experiment.value)
    return RUNNERS[config.experiment](config, workers=workers, progress=progress)
