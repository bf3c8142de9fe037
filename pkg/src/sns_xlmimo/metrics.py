"""Evaluation metrics and the per-trial record used by the sweep runner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def vrer(alpha: np.ndarray, alpha_hat: np.ndarray) -> float:
    """Visibility-region error rate: fraction of misclassified antennas."""
    a = np.asarray(alpha)
    b = np.asarray(alpha_hat)
    if a.shape != b.shape:
        raise ValueError("indicator shapes differ")
    return float(np.abs(a.astype(int) - b.astype(int)).mean())


def nmse(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Normalized mean squared error ||x_hat - x||^2 / ||x||^2."""
    energy = float(np.vdot(x, x).real)
    if energy <= 0.0:
        raise ValueError("NMSE undefined for an all-zero reference")
    err = x_hat - x
    return float(np.vdot(err, err).real) / energy


def se(x: np.ndarray, x_hat: np.ndarray, noise_var: float) -> float:
    """Spectral efficiency of matched beamforming with the estimated channel.

    Uses the raw estimate scale: log2(1 + |x^H x_hat|^2 / noise_var).
    """
    if noise_var <= 0.0:
        raise ValueError("noise variance must be positive")
    inner = np.vdot(x, x_hat)
    return float(np.log2(1.0 + (inner.conjugate() * inner).real / noise_var))


@dataclass
class TrialRecord:
    """Metrics of one algorithm on one Monte Carlo trial."""

    seed: int
    snr_db: float
    q: int
    psi: float
    algorithm: str
    vrer: float = float("nan")
    nmse: float = float("nan")
    se: float = float("nan")
    psi_hat: float = float("nan")
    runtime_s: float = 0.0
    error: str | None = None
