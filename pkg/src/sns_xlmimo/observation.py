"""Pilot observation model for a hybrid analog/digital receiver.

Over Q pilot slots an array with N_rf RF chains collects M = Q * N_rf linear
measurements of the channel, y = A x + w, with thermal noise injected after
combining at per-measurement variance sigma_n^2.  Both supported combiners
have exactly orthonormal rows (A A^H = I_M), which the downstream solvers
lean on (adjoint LS, scalar posterior variances):

* ``dft_rows`` (default): M distinct rows of the normalized N-point DFT drawn
  uniformly without replacement.
* ``random_phase``: every entry starts as a unit-modulus phase shifter
  exp(j 2 pi u) / sqrt(N) with u ~ U(0, 1), then the rows are orthonormalized
  (QR of the conjugate transpose).  A spatially compact channel concentrates
  its energy on few spatial frequencies, and a DFT row subset can then miss
  part of the channel subspace outright no matter how the estimator spends
  its budget; spreading every antenna across all measurements removes that
  blind spot, which matters when wide visibility regions are in play.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

COMBINER_KINDS = ("random_phase", "dft_rows")


class OversampledCombinerError(ValueError):
    """More measurements requested than antennas available."""


class UndefinedSnrError(ValueError):
    """SNR is undefined for an all-zero channel."""


@dataclass
class CombinerMatrix:
    """Stacked pilot combiner with M = pilot_slots * num_rf_chains rows.

    `row_indices` lists the selected DFT bins for the `dft_rows` kind and is
    None for `random_phase`.
    """

    matrix: np.ndarray
    row_indices: np.ndarray | None
    pilot_slots: int
    num_rf_chains: int
    kind: str = "dft_rows"

    @property
    def num_measurements(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.matrix.shape[1]


@dataclass
class PilotObservation:
    """Received pilot vector y = A x + w and the variance of w."""

    y: np.ndarray
    noise_var: float


def build_combiner(
    num_antennas: int,
    pilot_slots: int,
    num_rf_chains: int,
    rng: np.random.Generator,
    kind: str = "dft_rows",
) -> CombinerMatrix:
    """Draw an M x N combiner with orthonormal rows of the requested kind."""
    n = int(num_antennas)
    m = int(pilot_slots) * int(num_rf_chains)
    if m < 1:
        raise ValueError("need at least one measurement")
    if m > n:
        raise OversampledCombinerError(f"M = {m} measurements exceed N = {n} antennas")
    if kind not in COMBINER_KINDS:
        raise ValueError(f"unknown combiner kind {kind!r}, expected one of {COMBINER_KINDS}")
    rows = None
    if kind == "dft_rows":
        rows = np.sort(rng.choice(n, size=m, replace=False))
        cols = np.arange(n)
        matrix = np.exp(2j * math.pi * np.outer(rows, cols) / n) / math.sqrt(n)
    else:
        phases = np.exp(2j * math.pi * rng.random((m, n))) / math.sqrt(n)
        # QR of the conjugate transpose orthonormalizes the rows while keeping
        # their span, so A A^H = I_M holds exactly.
        q, _ = np.linalg.qr(phases.conj().T)
        matrix = q.conj().T
    return CombinerMatrix(
        matrix=matrix,
        row_indices=rows,
        pilot_slots=int(pilot_slots),
        num_rf_chains=int(num_rf_chains),
        kind=kind,
    )


def observe(
    x: np.ndarray,
    combiner: CombinerMatrix | np.ndarray,
    noise_var: float,
    rng: np.random.Generator,
) -> PilotObservation:
    """Apply the combiner and add circular complex Gaussian noise."""
    if noise_var < 0.0:
        raise ValueError("noise variance must be non-negative")
    a = combiner.matrix if isinstance(combiner, CombinerMatrix) else np.asarray(combiner)
    y = a @ x
    if noise_var > 0.0:
        m = y.shape[0]
        w = math.sqrt(noise_var / 2.0) * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
        y = y + w
    return PilotObservation(y=y, noise_var=float(noise_var))


def snr_to_noise(x: np.ndarray, snr_db: float) -> float:
    """Noise variance giving the requested SNR against per-antenna signal power.

    The convention is sigma_n^2 = ||x||^2 / (N * 10^(snr_db/10)).
    """
    energy = float(np.vdot(x, x).real)
    if energy <= 0.0:
        raise UndefinedSnrError("SNR undefined for an all-zero channel")
    return energy / (x.size * 10.0 ** (snr_db / 10.0))
