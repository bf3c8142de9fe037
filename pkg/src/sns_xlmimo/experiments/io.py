"""Result serialization: deterministic CSVs, a JSON summary, optional SVGs.

CSV layout is one file per metric: rows follow the swept axis, columns hold
one mean/stderr pair per algorithm.  If a second axis is also multi-valued,
one file is written per value of that axis, suffixed with its value.  Floats
are formatted with `repr`, so identical results produce identical bytes and
parsing returns the exact values.  Timestamps and wall-clock figures live only
in the JSON summary, keeping the CSVs reproducible across runs.
"""

from __future__ import annotations

import dataclasses
import json
import math
import subprocess
from pathlib import Path

from .. import __version__
from .config import SweepConfig
from .runner import AggregateRecord, SweepResult

_METRIC_ALGS = {
    "vrer": ("vrdomp", "rfeb", "bbomp_soft", "bbomp_hard"),
    "nmse": ("ls", "womp", "bbomp_soft", "bbomp_hard", "genie", "perfect"),
    "se": ("ls", "womp", "bbomp_soft", "bbomp_hard", "genie", "perfect"),
    "psi_hat": ("vrdomp",),
}

_AXIS_FIELD = {"snr_db": "snr_db", "pilot_slots": "pilot_slots", "psi": "psi"}


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def _axis_values(cfg: SweepConfig, axis: str) -> list:
    if axis == "snr_db":
        return list(cfg.observation.snr_db)
    if axis == "pilot_slots":
        return list(cfg.observation.pilot_slots)
    return list(cfg.vr.psi)


def version_string() -> str:
    """`git describe` of the working tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5.0,
            check=False,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"sns-xlmimo-{__version__}"


def metric_tables(cfg: SweepConfig, aggregates: list[AggregateRecord]) -> dict[str, str]:
    """CSV text per output file stem (metric plus off-axis suffix)."""
    axis = cfg.resolved_sweep_axis
    other_axes = [a for a in ("psi", "pilot_slots", "snr_db") if a != axis]
    tables: dict[str, str] = {}
    for metric, relevant in _METRIC_ALGS.items():
        algs = [a for a in cfg.algorithms if a in relevant]
        if not algs:
            continue
        header = [axis] + [f"{a}_{s}" for a in algs for s in ("mean", "stderr")]
        groups: list[tuple[str, list]] = []
        combos = [()]
        for oa in other_axes:
            values = _axis_values(cfg, oa)
            combos = [c + ((oa, v),) for c in combos for v in values]
        for combo in combos:
            suffix = "".join(
                f"_{oa}{v:g}" for oa, v in combo if len(_axis_values(cfg, oa)) > 1
            )
            groups.append((suffix, list(combo)))
        for suffix, combo in groups:
            lines = [",".join(header)]
            for value in _axis_values(cfg, axis):
                row = [_fmt(value)]
                for alg in algs:
                    match = [
                        g
                        for g in aggregates
                        if g.algorithm == alg
                        and getattr(g, _AXIS_FIELD[axis]) == value
                        and all(getattr(g, _AXIS_FIELD[oa]) == v for oa, v in combo)
                    ]
                    if match:
                        row.append(_fmt(getattr(match[0], f"{metric}_mean")))
                        row.append(_fmt(getattr(match[0], f"{metric}_stderr")))
                    else:
                        row.extend(["nan", "nan"])
                lines.append(",".join(row))
            if not aggregates:
                lines = lines[:1]
            tables[f"{metric}{suffix}"] = "\n".join(lines) + "\n"
    return tables


def belief_profile_tables(result: SweepResult) -> dict[str, str]:
    tables: dict[str, str] = {}
    for profile in result.belief_profiles:
        suffix = f"_psi{profile.psi:g}_q{profile.pilot_slots}_snr{profile.snr_db:g}"
        lines = ["antenna,mean_belief,alpha_true"]
        for i, b in enumerate(profile.mean_belief):
            alpha = "" if profile.alpha_true is None else str(int(profile.alpha_true[i]))
            lines.append(f"{i + 1},{_fmt(float(b))},{alpha}")
        tables[f"belief_profile{suffix}"] = "\n".join(lines) + "\n"
    return tables


def _clean_nan(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _clean_nan(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_nan(v) for v in obj]
    return obj


def summary_dict(result: SweepResult) -> dict:
    cfg = result.config
    return {
        "name": cfg.name,
        "version": version_string(),
        "base_seed": cfg.base_seed,
        "sweep_axis": cfg.resolved_sweep_axis,
        "trials": cfg.trials,
        "wall_clock_s": result.wall_clock_s,
        "n_records": len(result.records),
        "config": cfg.to_dict(),
        "aggregates": [_clean_nan(dataclasses.asdict(a)) for a in result.aggregates],
    }


def emit_results(
    result: SweepResult,
    out_dir: str | Path,
    plots: bool | None = None,
) -> list[Path]:
    """Write CSVs, the JSON summary and (optionally) SVG plots; returns paths."""
    cfg = result.config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    tables = metric_tables(cfg, result.aggregates)
    tables.update(belief_profile_tables(result))
    for stem, text in tables.items():
        path = out / f"{cfg.name}_{stem}.csv"
        path.write_text(text)
        written.append(path)
    summary_path = out / f"{cfg.name}_summary.json"
    summary_path.write_text(json.dumps(_clean_nan(summary_dict(result)), indent=2) + "\n")
    written.append(summary_path)
    if plots is None:
        plots = cfg.output.plots
    if plots:
        written.extend(_emit_plots(result, out))
    return written


def _emit_plots(result: SweepResult, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = result.config
    axis = cfg.resolved_sweep_axis
    written: list[Path] = []
    for metric, relevant in _METRIC_ALGS.items():
        algs = [a for a in cfg.algorithms if a in relevant]
        if not algs:
            continue
        xs = _axis_values(cfg, axis)
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        drew = False
        for alg in algs:
            ys, errs = [], []
            for value in xs:
                match = [
                    g
                    for g in result.aggregates
                    if g.algorithm == alg and getattr(g, _AXIS_FIELD[axis]) == value
                ]
                mean = getattr(match[0], f"{metric}_mean") if match else float("nan")
                err = getattr(match[0], f"{metric}_stderr") if match else float("nan")
                ys.append(mean)
                errs.append(0.0 if math.isnan(err) else err)
            if any(not math.isnan(v) for v in ys):
                ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3, label=alg)
                drew = True
        if not drew:
            plt.close(fig)
            continue
        if metric == "nmse":
            ax.set_yscale("log")
        ax.set_xlabel(axis)
        ax.set_ylabel(metric)
        ax.grid(True, alpha=0.4)
        ax.legend()
        fig.tight_layout()
        path = out / f"{cfg.name}_{metric}.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
