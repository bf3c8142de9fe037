"""Command-line interface.

Subcommands:

* ``sweep``        run a Monte Carlo sweep from a JSON config and emit tables
* ``detect``       single-trial visibility detection, printed belief profile
* ``estimate``     single-trial two-stage channel estimation
* ``oracle-check`` compare fast paths against brute-force references
* ``codebook``     print wavenumber-codebook diagnostics

Configs are JSON files; a handful of named scenario configs ship with the
package and can be referenced by bare name (e.g. ``fig7a``).  Exit codes:
0 success, 1 configuration/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .. import bbomp, channel, metrics, observation, oracle, vrdomp
from . import io as result_io
from . import runner
from .config import ConfigError, SweepConfig, load_config


class _ExitCode(Exception):
    def __init__(self, code: int):
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _ExitCode(1)


def bundled_config_names() -> list[str]:
    root = resources.files("sns_xlmimo.experiments") / "configs"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config(ref: str | None) -> SweepConfig:
    """Load a config by file path or by bundled scenario name."""
    if ref is None:
        ref = "default"
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        return load_config(path)
    candidate = resources.files("sns_xlmimo.experiments") / "configs" / f"{ref}.json"
    if candidate.is_file():
        return load_config(candidate)
    raise ConfigError(
        f"config {ref!r} is neither a file nor a bundled name {bundled_config_names()}"
    )


def _apply_overrides(cfg: SweepConfig, args: argparse.Namespace) -> SweepConfig:
    if getattr(args, "seed", None) is not None:
        cfg.base_seed = args.seed
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    if getattr(args, "out", None) is not None:
        cfg.output.dir = args.out
    cfg.validate()
    return cfg


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(resolve_config(args.config), args)
    result = runner.run_sweep(cfg)
    plots = True if args.plots else None
    written = result_io.emit_results(result, cfg.output.dir, plots=plots)
    failed = sum(1 for r in result.records if r.error is not None)
    print(f"sweep '{cfg.name}': {len(result.records)} records "
          f"({failed} failed) in {result.wall_clock_s:.1f}s")
    for path in written:
        print(f"  wrote {path}")
    return 0


def _single_trial_setup(cfg: SweepConfig, grid_index: int = 0):
    geom = runner.build_geometry(cfg)
    codebook = channel.build_codebook(geom, cfg.oversampling)
    point = cfg.grid()[grid_index]
    rng = np.random.default_rng(runner.child_seed(cfg.base_seed, grid_index, 0))
    user, gain, vr = runner._sample_trial_scene(cfg, geom, point, rng)
    real = channel.realize_channel(geom, user, vr, gain)
    combiner = observation.build_combiner(
        geom.num_antennas,
        int(point["pilot_slots"]),
        cfg.observation.num_rf_chains,
        rng,
        kind=cfg.observation.combiner,
    )
    noise_var = observation.snr_to_noise(real.masked, point["snr_db"])
    obs = observation.observe(real.masked, combiner, noise_var, rng)
    return geom, codebook, point, vr, real, combiner, obs


def _cmd_detect(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(resolve_config(args.config), args)
    geom, codebook, point, vr, real, combiner, obs = _single_trial_setup(cfg)
    det_cfg = runner.detector_config(cfg, obs.y, obs.noise_var)
    det_cfg.collect_diagnostics = args.diagnostics is not None
    result = vrdomp.run_vrdomp(obs.y, combiner.matrix, det_cfg)
    if args.diagnostics is not None:
        with open(args.diagnostics, "w") as fh:
            for row in result.diagnostics:
                fh.write(json.dumps(row) + "\n")
    post = result.belief.posterior
    print(f"scenario: N={geom.num_antennas} Q={point['pilot_slots']} "
          f"snr={point['snr_db']}dB psi={point['psi']}")
    print(f"converged={result.converged} iterations={result.iterations} "
          f"residual={result.residual:.3e}")
    print(f"vrer={metrics.vrer(vr.indicator, result.belief.alpha_hat):.4f} "
          f"learned psi={result.hyper.psi:.3f} p10={result.hyper.p10:.3f}")
    print("visibility beliefs (antennas 1..N, row-major):")
    for start in range(0, post.size, 16):
        chunk = " ".join(f"{b:4.2f}" for b in post[start : start + 16])
        print(f"  [{start + 1:4d}] {chunk}")
    return 0


def _cmd_estimate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(resolve_config(args.config), args)
    geom, codebook, point, vr, real, combiner, obs = _single_trial_setup(cfg)
    det_cfg = runner.detector_config(cfg, obs.y, obs.noise_var)
    k = runner.derive_max_support(cfg, combiner.num_measurements)
    detection, soft = runner.two_stage_estimate(
        obs.y, combiner.matrix, codebook, det_cfg, k, cfg.estimator.residual_tol, soft=True
    )
    hard = bbomp.belief_omp_estimate(
        obs.y,
        combiner.matrix,
        codebook.matrix,
        detection.belief.alpha_hat.astype(float),
        k,
        cfg.estimator.residual_tol,
    )
    x = real.masked
    print(f"scenario: N={geom.num_antennas} Q={point['pilot_slots']} "
          f"snr={point['snr_db']}dB psi={point['psi']} pursuit depth K={k}")
    print(f"stage 1: vrer={metrics.vrer(vr.indicator, detection.belief.alpha_hat):.4f} "
          f"converged={detection.converged}")
    for label, est in (("soft", soft), ("hard", hard)):
        nm = metrics.nmse(x, est.x)
        s = metrics.se(x, est.x, obs.noise_var)
        print(f"stage 2 ({label}): nmse={nm:.4e} ({10 * math.log10(nm):.1f} dB) "
              f"se={s:.4e} atoms={est.support.size}")
    ls = bbomp.ls_estimate(obs.y, combiner.matrix)
    print(f"baseline ls: nmse={metrics.nmse(x, ls):.4e}")
    return 0


def _cmd_oracle_check(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    checks: list[tuple[str, bool, str]] = []

    # Inversion-free LMMSE against the explicit-inverse reference.
    worst = 0.0
    for _ in range(20):
        a = observation.build_combiner(16, 4, 2, rng).matrix
        x = (rng.standard_normal(16) + 1j * rng.standard_normal(16)) / math.sqrt(2)
        y = a @ x + 0.3 * (rng.standard_normal(8) + 1j * rng.standard_normal(8))
        x_pri = (rng.standard_normal(16) + 1j * rng.standard_normal(16)) / math.sqrt(2)
        v_pri = float(rng.uniform(0.2, 2.0))
        nv = float(rng.uniform(0.05, 0.5))
        fast_x, fast_v = vrdomp.lmmse_step(y, a, x_pri, v_pri, nv)
        ref_x, ref_cov = oracle.exact_lmmse(y, a, x_pri, v_pri, nv)
        err = np.linalg.norm(fast_x - ref_x) / np.linalg.norm(ref_x)
        err = max(err, abs(fast_v - np.diag(ref_cov).real.mean()) / fast_v)
        worst = max(worst, float(err))
    checks.append(("lmmse vs explicit inverse", worst < 1e-10, f"max rel err {worst:.2e}"))

    # Turbo beliefs against full enumeration on a complete observation.
    worst = 0.0
    for _ in range(10):
        n = 8
        hyper = vrdomp.Hyperparams(1.0, float(rng.uniform(0.05, 0.5)), 0.3, 0.15)
        vr = channel.sample_vr("markov", hyper.psi, n, rng, p10=hyper.p10)
        x = vr.indicator * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2)
        a = observation.build_combiner(n, n, 1, rng).matrix
        obs = observation.observe(x, a, hyper.noise_var, rng)
        det = vrdomp.run_vrdomp(
            obs.y, a, vrdomp.DetectorConfig(hyper=hyper, learn_hyper=False)
        )
        ref = oracle.exact_vr_posterior(a.conj().T @ obs.y, hyper.noise_var, hyper)
        worst = max(worst, float(np.abs(det.belief.posterior - ref.marginals).max()))
    checks.append(("beliefs vs enumeration", worst < 1e-6, f"max abs err {worst:.2e}"))

    # Greedy pursuit against exhaustive support search (1-sparse is exact).
    ok = True
    detail = ""
    for _ in range(5):
        phi = rng.standard_normal((12, 24)) + 1j * rng.standard_normal((12, 24))
        truth = int(rng.integers(24))
        y = 2.0 * phi[:, truth]
        est = bbomp.bb_omp(y, phi, max_support=1)
        sup, _, resid = oracle.exhaustive_sparse_fit(y, phi, 1)
        if est.support.tolist() != list(sup) or est.residual_norms[-1] > resid + 1e-9:
            ok = False
            detail = f"greedy {est.support} vs exhaustive {sup}"
    checks.append(("1-sparse pursuit vs exhaustive search", ok, detail or "supports agree"))

    all_ok = True
    for name, passed, detail in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        all_ok &= passed
    return 0 if all_ok else 2


def _cmd_codebook(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config)
    geom = runner.build_geometry(cfg)
    cb = channel.build_codebook(geom, cfg.oversampling)
    print(f"array: N={geom.num_antennas} wavelength={geom.wavelength:.6g} m "
          f"spacing={geom.spacing:.6g} m aperture={geom.aperture:.6g} m")
    print(f"codebook: oversampling={cb.oversampling} delta={cb.delta:.6g} rad/m "
          f"size={cb.size} grid=[{cb.xi[0]}, {cb.xi[-1]}]")
    unit = channel.build_codebook(geom, 1)
    gram = unit.matrix.conj().T @ unit.matrix
    err = float(np.abs(gram - np.eye(unit.size)).max())
    print(f"critical-sampling orthonormality error: {err:.3e}")
    print("effective bandwidth by user position:")
    for distance in (10.0, 20.0, 50.0):
        for azimuth_deg in (0.0, 45.0):
            user = channel.UserLocation.from_polar(distance, math.radians(azimuth_deg))
            b_e, l_e = channel.effective_bandwidth(geom, user, cfg.oversampling)
            print(f"  r={distance:5.1f} m  az={azimuth_deg:4.0f} deg  "
                  f"B_e={b_e:9.3f} rad/m  L_e={l_e}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="sns-xlmimo",
        description="Visibility-region detection and channel estimation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a Monte Carlo sweep")
    p.add_argument("config", nargs="?", help="JSON config path or bundled name")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--trials", type=int, help="override the trial count")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("detect", help="single-trial visibility detection")
    p.add_argument("--config", help="JSON config path or bundled name")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--diagnostics", help="write per-iteration JSON lines here")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("estimate", help="single-trial two-stage estimation")
    p.add_argument("--config", help="JSON config path or bundled name")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("oracle-check", help="cross-check fast paths against references")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("codebook", help="print codebook diagnostics")
    p.add_argument("--config", help="JSON config path or bundled name")
    p.set_defaults(func=_cmd_codebook)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _ExitCode as exc:
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
