"""Monte Carlo sweep runner.

Reproducibility contract: every trial derives its own generator from
`SeedSequence(base_seed, spawn_key=(grid_index, trial_index))`, so results do
not depend on scheduling or worker count, and any single trial can be replayed
in isolation.  Within a trial the draws happen in a fixed order: user distance,
user azimuth, complex gain, visibility region, combiner rows, observation
noise.  Worker processes (capped by the SNS_XLMIMO_THREADS environment
variable, default 1) each handle whole grid points; records are merged in grid
order, so parallel runs are bitwise identical to serial ones.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .. import bbomp, channel, metrics, observation, vrdomp
from .config import SweepConfig

THREADS_ENV = "SNS_XLMIMO_THREADS"

_DETECTOR_ALGS = {"vrdomp", "bbomp_soft", "bbomp_hard"}
_ESTIMATOR_ALGS = {"ls", "womp", "bbomp_soft", "bbomp_hard", "genie", "perfect"}


@dataclass
class AggregateRecord:
    """Mean and standard error of every metric for one (grid point, algorithm)."""

    psi: float
    pilot_slots: int
    snr_db: float
    algorithm: str
    n: int = 0
    n_failed: int = 0
    vrer_mean: float = float("nan")
    vrer_stderr: float = float("nan")
    nmse_mean: float = float("nan")
    nmse_stderr: float = float("nan")
    se_mean: float = float("nan")
    se_stderr: float = float("nan")
    psi_hat_mean: float = float("nan")
    psi_hat_stderr: float = float("nan")


@dataclass
class BeliefProfile:
    """Mean visibility belief per antenna, accumulated over trials."""

    psi: float
    pilot_slots: int
    snr_db: float
    mean_belief: np.ndarray
    alpha_true: np.ndarray | None
    trials: int


@dataclass
class SweepResult:
    config: SweepConfig
    records: list[metrics.TrialRecord]
    aggregates: list[AggregateRecord] = field(default_factory=list)
    belief_profiles: list[BeliefProfile] = field(default_factory=list)
    wall_clock_s: float = 0.0


def child_seed(base_seed: int, grid_index: int, trial_index: int) -> np.random.SeedSequence:
    """Splittable per-trial seed; independent of execution order."""
    return np.random.SeedSequence(base_seed, spawn_key=(grid_index, trial_index))


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def derive_max_support(cfg: SweepConfig, num_measurements: int) -> int:
    """Greedy pursuit depth from the effective bandwidth of the closest
    configured user position (broadside), floored at k_min, capped at M/2."""
    if cfg.estimator.max_support is not None:
        return min(int(cfg.estimator.max_support), num_measurements)
    geom = build_geometry(cfg)
    user = channel.UserLocation.from_polar(cfg.user.distance_m[0], 0.0)
    _, l_e = channel.effective_bandwidth(geom, user, cfg.oversampling)
    return max(min(max(l_e, cfg.estimator.k_min), num_measurements // 2), 1)


def build_geometry(cfg: SweepConfig) -> channel.ArrayGeometry:
    return channel.ArrayGeometry(
        num_antennas=cfg.geometry.num_antennas,
        wavelength=cfg.geometry.wavelength,
        spacing=cfg.geometry.spacing_m,
    )


def fixed_support_indices(cfg: SweepConfig) -> np.ndarray:
    """0-based antenna indices of the configured 1-based inclusive ranges."""
    idx: list[int] = []
    for lo, hi in cfg.vr.support:
        idx.extend(range(lo - 1, hi))
    return np.unique(np.asarray(idx, dtype=int))


def _sample_trial_scene(
    cfg: SweepConfig,
    geom: channel.ArrayGeometry,
    point: dict[str, float],
    rng: np.random.Generator,
):
    """Draws in contract order; returns (user, gain, vr)."""
    d_lo, d_hi = cfg.user.distance_m
    a_lo, a_hi = cfg.user.azimuth_rad
    distance = float(rng.uniform(d_lo, d_hi)) if d_hi > d_lo else d_lo
    azimuth = float(rng.uniform(a_lo, a_hi)) if a_hi > a_lo else a_lo
    user = channel.UserLocation.from_polar(distance, azimuth)
    gain = complex(rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2.0)
    if cfg.vr.kind == "fixed":
        vr = channel.VisibilityRegion.from_support(geom.num_antennas, fixed_support_indices(cfg))
    else:
        vr = channel.sample_vr(
            cfg.vr.kind,
            point["psi"],
            geom.num_antennas,
            rng,
            p10=cfg.vr.p10,
            fill_tol=cfg.vr.fill_tol,
        )
    return user, gain, vr


def detector_config(cfg: SweepConfig, y: np.ndarray, noise_var: float) -> vrdomp.DetectorConfig:
    det = cfg.detector
    if det.known_noise:
        hyper = vrdomp.moment_init(y, noise_var, psi0=det.psi0, p10=det.p10_init)
    else:
        hyper = None
    return vrdomp.DetectorConfig(
        hyper=hyper,
        learn_hyper=det.em,
        max_iters=det.max_iters,
        tol=det.tol,
        damping=det.damping,
        psi_th=det.psi_th,
        noise_learn_delay=det.noise_learn_delay,
        learn_p10=det.learn_p10,
    )


def run_trial(
    cfg: SweepConfig,
    grid_index: int,
    trial_index: int,
    codebook: channel.WavenumberCodebook | None = None,
    geom: channel.ArrayGeometry | None = None,
    baseline_codebook: channel.WavenumberCodebook | None = None,
) -> tuple[list[metrics.TrialRecord], np.ndarray | None, np.ndarray | None]:
    """Run every requested algorithm on one simulated scene.

    Returns (records, visibility beliefs or None, true indicator or None); the
    belief vector feeds the optional per-antenna profile accumulation.
    """
    point = cfg.grid()[grid_index]
    seed_seq = child_seed(cfg.base_seed, grid_index, trial_index)
    seed_id = int(seed_seq.generate_state(1)[0])
    rng = np.random.default_rng(seed_seq)
    geom = geom or build_geometry(cfg)
    codebook = codebook or channel.build_codebook(geom, cfg.oversampling)
    if baseline_codebook is None and "womp" in cfg.algorithms:
        baseline_codebook = channel.build_codebook(geom, 1)

    base = dict(
        seed=seed_id,
        snr_db=point["snr_db"],
        q=int(point["pilot_slots"]),
        psi=point["psi"],
    )
    records: list[metrics.TrialRecord] = []
    beliefs_out: np.ndarray | None = None
    alpha_out: np.ndarray | None = None
    try:
        user, gain, vr = _sample_trial_scene(cfg, geom, point, rng)
        real = channel.realize_channel(geom, user, vr, gain)
        x = real.masked
        combiner = observation.build_combiner(
            geom.num_antennas,
            int(point["pilot_slots"]),
            cfg.observation.num_rf_chains,
            rng,
            kind=cfg.observation.combiner,
        )
        noise_var = observation.snr_to_noise(x, point["snr_db"])
        obs = observation.observe(x, combiner, noise_var, rng)
        y, a = obs.y, combiner.matrix
    except Exception as exc:  # scene construction failed: every algorithm fails
        for alg in cfg.algorithms:
            records.append(metrics.TrialRecord(algorithm=alg, error=str(exc), **base))
        return records, None, None

    alpha = vr.indicator
    k = derive_max_support(cfg, combiner.num_measurements)
    f = codebook.matrix
    tol = cfg.estimator.residual_tol
    if cfg.estimator.noise_floor_stop:
        y_norm = float(np.linalg.norm(y))
        if y_norm > 0.0:
            tol = max(tol, math.sqrt(combiner.num_measurements * noise_var) / y_norm)

    detection = None
    stage1_time = 0.0
    if _DETECTOR_ALGS & set(cfg.algorithms):
        tic = time.perf_counter()
        try:
            detection = vrdomp.run_vrdomp(y, a, detector_config(cfg, y, noise_var))
        except Exception as exc:
            detection = exc
        stage1_time = time.perf_counter() - tic
        if not isinstance(detection, Exception):
            beliefs_out = detection.belief.posterior
            alpha_out = alpha

    x_ls = None

    for alg in cfg.algorithms:
        rec = metrics.TrialRecord(algorithm=alg, **base)
        tic = time.perf_counter()
        try:
            if alg in _DETECTOR_ALGS:
                if isinstance(detection, Exception):
                    raise detection
            if alg == "vrdomp":
                rec.vrer = metrics.vrer(alpha, detection.belief.alpha_hat)
                rec.psi_hat = detection.hyper.psi
                rec.runtime_s = stage1_time
            elif alg == "rfeb":
                if x_ls is None:
                    x_ls = bbomp.ls_estimate(y, a)
                alpha_hat = bbomp.rfeb_detect(
                    x_ls, cfg.estimator.rfeb_window, cfg.estimator.rfeb_power_th
                )
                rec.vrer = metrics.vrer(alpha, alpha_hat)
            elif alg == "ls":
                if x_ls is None:
                    x_ls = bbomp.ls_estimate(y, a)
                rec.nmse = metrics.nmse(x, x_ls)
                rec.se = metrics.se(x, x_ls, noise_var)
            elif alg == "perfect":
                rec.nmse = 0.0
                rec.se = metrics.se(x, x, noise_var)
            else:
                dictionary = f
                if alg == "womp":
                    # without belief weighting the oversampled grid's adjacent
                    # columns are nearly collinear and LS refits amplify the
                    # representation residual; the plain baseline runs on the
                    # critically sampled codebook instead
                    weights = np.ones(geom.num_antennas)
                    dictionary = baseline_codebook.matrix
                elif alg == "genie":
                    weights = alpha.astype(float)
                elif alg == "bbomp_soft":
                    weights = detection.belief.posterior
                else:  # bbomp_hard
                    weights = detection.belief.alpha_hat.astype(float)
                estimate = bbomp.belief_omp_estimate(y, a, dictionary, weights, k, tol)
                rec.nmse = metrics.nmse(x, estimate.x)
                rec.se = metrics.se(x, estimate.x, noise_var)
                if alg in ("bbomp_soft", "bbomp_hard"):
                    rec.vrer = metrics.vrer(alpha, detection.belief.alpha_hat)
                    rec.runtime_s += stage1_time
        except Exception as exc:
            rec.error = str(exc)
        rec.runtime_s += time.perf_counter() - tic
        records.append(rec)
    return records, beliefs_out, alpha_out


def _run_grid_point(args: tuple[SweepConfig, int]) -> tuple[list[metrics.TrialRecord], BeliefProfile | None]:
    cfg, grid_index = args
    point = cfg.grid()[grid_index]
    geom = build_geometry(cfg)
    codebook = channel.build_codebook(geom, cfg.oversampling)
    baseline = channel.build_codebook(geom, 1) if "womp" in cfg.algorithms else None
    records: list[metrics.TrialRecord] = []
    belief_sum = np.zeros(geom.num_antennas)
    belief_trials = 0
    alpha_ref: np.ndarray | None = None
    for trial in range(cfg.trials):
        recs, beliefs, alpha = run_trial(cfg, grid_index, trial, codebook, geom, baseline)
        records.extend(recs)
        if cfg.emit_belief_profile and beliefs is not None:
            belief_sum += beliefs
            belief_trials += 1
            if cfg.vr.kind == "fixed":
                alpha_ref = alpha
    profile = None
    if cfg.emit_belief_profile and belief_trials > 0:
        profile = BeliefProfile(
            psi=point["psi"],
            pilot_slots=int(point["pilot_slots"]),
            snr_db=point["snr_db"],
            mean_belief=belief_sum / belief_trials,
            alpha_true=alpha_ref,
            trials=belief_trials,
        )
    return records, profile


def _stats(values: np.ndarray) -> tuple[float, float]:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return float("nan"), float("nan")
    mean = float(values.mean())
    if values.size == 1:
        return mean, float("nan")
    stderr = float(values.std(ddof=1) / math.sqrt(values.size))
    return mean, stderr


def aggregate(cfg: SweepConfig, records: list[metrics.TrialRecord]) -> list[AggregateRecord]:
    """Per (grid point, algorithm) means and standard errors, grid order."""
    out: list[AggregateRecord] = []
    for point in cfg.grid():
        for alg in cfg.algorithms:
            sel = [
                r
                for r in records
                if r.algorithm == alg
                and r.psi == point["psi"]
                and r.q == point["pilot_slots"]
                and r.snr_db == point["snr_db"]
            ]
            ok = [r for r in sel if r.error is None]
            agg = AggregateRecord(
                psi=point["psi"],
                pilot_slots=int(point["pilot_slots"]),
                snr_db=point["snr_db"],
                algorithm=alg,
                n=len(ok),
                n_failed=len(sel) - len(ok),
            )
            for name in ("vrer", "nmse", "se", "psi_hat"):
                vals = np.asarray([getattr(r, name) for r in ok], dtype=float)
                mean, stderr = _stats(vals)
                setattr(agg, f"{name}_mean", mean)
                setattr(agg, f"{name}_stderr", stderr)
            out.append(agg)
    return out


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """Execute the full grid and aggregate the records."""
    cfg.validate()
    tic = time.perf_counter()
    grid = cfg.grid()
    tasks = [(cfg, gi) for gi in range(len(grid))]
    workers = min(worker_count(), len(tasks))
    outputs: list[tuple[list[metrics.TrialRecord], BeliefProfile | None]]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_grid_point, tasks))
    else:
        outputs = [_run_grid_point(task) for task in tasks]
    records: list[metrics.TrialRecord] = []
    profiles: list[BeliefProfile] = []
    for recs, profile in outputs:
        records.extend(recs)
        if profile is not None:
            profiles.append(profile)
    result = SweepResult(
        config=cfg,
        records=records,
        aggregates=aggregate(cfg, records),
        belief_profiles=profiles,
        wall_clock_s=time.perf_counter() - tic,
    )
    return result


def two_stage_estimate(
    y: np.ndarray,
    a: np.ndarray,
    codebook: channel.WavenumberCodebook,
    det_cfg: vrdomp.DetectorConfig,
    max_support: int,
    residual_tol: float = 1e-3,
    soft: bool = True,
) -> tuple[vrdomp.VrdompResult, bbomp.SparseEstimate]:
    """Stage one (visibility beliefs) followed by stage two (weighted pursuit)."""
    detection = vrdomp.run_vrdomp(y, a, det_cfg)
    weights = (
        detection.belief.posterior if soft else detection.belief.alpha_hat.astype(float)
    )
    estimate = bbomp.belief_omp_estimate(y, a, codebook.matrix, weights, max_support, residual_tol)
    return detection, estimate
