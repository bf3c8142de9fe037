"""Sparse channel estimation in the wavenumber domain.

Stage two of the pipeline: given visibility beliefs from the detector, the
codebook rows are weighted by the beliefs before entering the greedy pursuit,
so atoms are matched against the channel as actually observed through the
visibility mask.  Setting the beliefs to all ones recovers a plain wavenumber
OMP; setting them to a binary indicator gives the hard-decision variant; the
true indicator gives the genie bound.  An LS inversion and a smoothed-power
edge detector serve as stage-agnostic baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SensingMatrix:
    """Belief-weighted measurement dictionary Phi = A diag(beliefs) F.

    `selection_norms` sets the per-column score normalizer used by the
    pursuit.  With all-ones beliefs (no visibility information) it holds the
    column norms, giving classical normalized matching; with informative
    beliefs it is identity, so the belief shading of the columns acts as the
    selection prior.  See `bb_omp` for why the two regimes differ."""

    matrix: np.ndarray
    beliefs: np.ndarray
    selection_norms: np.ndarray | None = None

    @property
    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.matrix, axis=0)

    @property
    def is_degenerate(self) -> bool:
        return bool(np.all(self.column_norms <= 1e-12))


@dataclass
class SparseEstimate:
    """Greedy fit result: selected atoms, dense coefficient vector (zeros off
    the support), residual-norm history, and optionally the reconstructed
    antenna-domain channel."""

    support: np.ndarray
    coefficients: np.ndarray
    residual_norms: list[float]
    x: np.ndarray | None = None


def build_sensing(a: np.ndarray, beliefs: np.ndarray, f: np.ndarray) -> SensingMatrix:
    beliefs = np.asarray(beliefs, dtype=float)
    weighted = a @ (beliefs[:, None] * f)
    if np.all(beliefs == 1.0):
        norms = np.linalg.norm(weighted, axis=0)
    else:
        norms = np.ones(f.shape[1])
    return SensingMatrix(matrix=weighted, beliefs=beliefs, selection_norms=norms)


def bb_omp(
    y: np.ndarray,
    sensing: SensingMatrix | np.ndarray,
    max_support: int,
    residual_tol: float = 1e-3,
) -> SparseEstimate:
    """Greedy pursuit with per-step LS refit and two selection regimes.

    Without visibility information (a plain matrix, or all-ones beliefs) the
    score is the normalized correlation |phi_j^H r| / ||phi_j||: the residual
    reduction a lone atom would achieve, so a single selection is exactly the
    best one-column fit.  Unnormalized scores would let columns that happen to
    keep more energy under the combiner (wavenumbers aligned with sampled
    rows) outscore equally-explanatory neighbors, and the pursuit drifts off
    the true support.

    With informative beliefs the raw weighted correlation |phi_j^H r| is used
    instead: the beliefs shade each column by how visible the detector thinks
    its antennas are, and that shading is the prior that makes graded beliefs
    worth carrying.  Normalizing here would divide the shading right back out,
    collapsing the soft variant onto its hard threshold (and renormalized
    near-annihilated columns would blow up their LS refits into noise).

    Columns whose norm falls below 1e-3 of the largest are treated as
    unidentifiable and never enter the support.  Stops when `max_support`
    atoms are selected, when the residual drops below `residual_tol` relative
    to ||y||, or when adding an atom no longer reduces the residual (the
    useless atom is dropped).  Rank-deficient refits drop the offending atom
    and stop.  Ties in the score resolve to the lowest column index.
    """
    if isinstance(sensing, SensingMatrix):
        phi = sensing.matrix
        sel_norms = sensing.selection_norms
    else:
        phi = np.asarray(sensing)
        sel_norms = None
    m, num_cols = phi.shape
    if max_support < 1 or max_support > m:
        raise ValueError("max_support must lie in [1, M]")
    norms = np.linalg.norm(phi, axis=0)
    if sel_norms is None:
        sel_norms = norms
    active = norms > 1e-3 * max(norms.max(), 1e-300)
    if not active.any():
        raise ValueError("sensing matrix is degenerate: all columns vanish")

    y_norm = float(np.linalg.norm(y))
    resid = y.astype(complex)
    resid_norms = [y_norm]
    support: list[int] = []
    coeffs = np.zeros(0, dtype=complex)
    scores = np.empty(num_cols)

    sel_norms = np.maximum(sel_norms, 1e-300)
    for _ in range(max_support):
        np.abs(phi.conj().T @ resid, out=scores)
        scores[active] /= sel_norms[active]
        scores[~active] = -1.0
        if support:
            scores[support] = -1.0
        j = int(np.argmax(scores))
        if scores[j] <= 0.0:
            break
        trial_support = support + [j]
        sol, _, rank, _ = np.linalg.lstsq(phi[:, trial_support], y, rcond=None)
        if rank < len(trial_support):
            break
        new_resid = y - phi[:, trial_support] @ sol
        new_norm = float(np.linalg.norm(new_resid))
        if new_norm >= resid_norms[-1] * (1.0 - 1e-12):
            break
        support = trial_support
        coeffs = sol
        resid = new_resid
        resid_norms.append(new_norm)
        if new_norm <= residual_tol * y_norm:
            break

    dense = np.zeros(num_cols, dtype=complex)
    if support:
        dense[support] = coeffs
    return SparseEstimate(
        support=np.asarray(support, dtype=int),
        coefficients=dense,
        residual_norms=resid_norms,
    )


def reconstruct(beliefs: np.ndarray, f: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """Antenna-domain channel from wavenumber coefficients, re-masked by the
    beliefs so invisible antennas stay quiet."""
    return np.asarray(beliefs, dtype=float) * (f @ coefficients)


def belief_omp_estimate(
    y: np.ndarray,
    a: np.ndarray,
    f: np.ndarray,
    beliefs: np.ndarray,
    max_support: int,
    residual_tol: float = 1e-3,
) -> SparseEstimate:
    """Full stage-two run: weight the dictionary, pursue, reconstruct.

    Beliefs that annihilate every column (detector saw nothing) yield the
    all-zero estimate rather than an error: predicting silence is the only
    consistent answer to an empty visibility region.
    """
    sensing = build_sensing(a, beliefs, f)
    if sensing.is_degenerate:
        return SparseEstimate(
            support=np.zeros(0, dtype=int),
            coefficients=np.zeros(f.shape[1], dtype=complex),
            residual_norms=[float(np.linalg.norm(y))],
            x=np.zeros(f.shape[0], dtype=complex),
        )
    estimate = bb_omp(y, sensing, max_support, residual_tol)
    estimate.x = reconstruct(sensing.beliefs, f, estimate.coefficients)
    return estimate


def ls_estimate(y: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Least-squares channel estimate; A^H is the pseudo-inverse because the
    combiner rows are orthonormal."""
    return a.conj().T @ y


def rfeb_detect(x_ls: np.ndarray, window: int = 9, power_th: float = 3.0) -> np.ndarray:
    """Visibility detection from rising/falling edges of the smoothed power.

    The per-antenna power of a coarse channel estimate is averaged over a
    centered window (odd sizes keep the edges unbiased), then compared against
    power_th times the median power.  When the median vanishes (noiseless
    input with a sparse region) the threshold falls back to half the peak, so
    block edges are recovered exactly.  Antennas are declared visible on every
    above-threshold run; with nothing above threshold everything is invisible.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    power = np.abs(np.asarray(x_ls)) ** 2
    kernel = np.full(window, 1.0 / window)
    smoothed = np.convolve(power, kernel, mode="same")
    peak = float(smoothed.max())
    if peak <= 0.0:
        return np.zeros(power.size, dtype=np.int8)
    med = float(np.median(smoothed))
    th = power_th * med if med > 0.0 else 0.5 * peak
    return (smoothed > th).astype(np.int8)
