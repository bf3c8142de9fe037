"""Brute-force reference implementations for cross-checking the fast paths.

Everything here trades efficiency for transparency: explicit matrix
inverses, full enumeration over indicator configurations, exhaustive support
search.  None of it shares code with the estimation modules, so agreement
between the two routes is meaningful evidence of correctness.  Inputs are
guarded to toy sizes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .vrdomp import Hyperparams


class CombinatorialBlowupError(ValueError):
    """Enumeration would exceed the configured budget."""


def exact_lmmse(
    y: np.ndarray,
    a: np.ndarray,
    x_pri: np.ndarray,
    v_pri: float,
    noise_var: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Textbook LMMSE with an explicit M x M inverse.

    Returns the posterior mean and the full posterior covariance
    v I - v^2 A^H (v A A^H + noise I)^{-1} A.  Sizes are capped at N = 512.
    """
    m, n = a.shape
    if n > 512:
        raise ValueError("exact LMMSE is reserved for toy sizes (N <= 512)")
    gram = v_pri * (a @ a.conj().T) + noise_var * np.eye(m)
    gram_inv = np.linalg.inv(gram)
    gain = v_pri * a.conj().T @ gram_inv
    x_post = x_pri + gain @ (y - a @ x_pri)
    cov = v_pri * np.eye(n) - v_pri * gain @ a
    return x_post, cov


@dataclass
class EnumerationPosterior:
    """Exact indicator posterior: per-antenna marginals and the normalizer."""

    marginals: np.ndarray
    normalizer: float


def exact_vr_posterior(
    x_pri: np.ndarray, v_pri: float, hyper: Hyperparams
) -> EnumerationPosterior:
    """Exact visibility posterior by enumerating all 2^N indicator patterns.

    The observation model treats x_pri_n as x_n + CN(0, v_pri) where x_n is
    zero for invisible antennas and CN(0, channel_var) for visible ones; the
    prior is the stationary two-state chain.  Guarded to N <= 12.
    """
    n = x_pri.size
    if n > 12:
        raise CombinatorialBlowupError("enumeration posterior limited to N <= 12")
    psi, p10, p01 = hyper.psi, hyper.p10, hyper.p01
    p00, p11 = 1.0 - p01, 1.0 - p10
    power = np.abs(x_pri) ** 2

    def cn_pdf(p: float, var: float) -> float:
        return math.exp(-p / var) / (math.pi * var)

    like_invisible = [cn_pdf(power[i], v_pri) for i in range(n)]
    like_visible = [cn_pdf(power[i], v_pri + hyper.channel_var) for i in range(n)]

    total = 0.0
    marginal = np.zeros(n)
    for config in itertools.product((0, 1), repeat=n):
        weight = psi if config[0] else 1.0 - psi
        for i in range(1, n):
            prev, cur = config[i - 1], config[i]
            if prev and cur:
                weight *= p11
            elif prev and not cur:
                weight *= p10
            elif not prev and cur:
                weight *= p01
            else:
                weight *= p00
        for i in range(n):
            weight *= like_visible[i] if config[i] else like_invisible[i]
        total += weight
        for i in range(n):
            if config[i]:
                marginal[i] += weight
    if total <= 0.0:
        raise FloatingPointError("posterior underflowed; rescale the instance")
    return EnumerationPosterior(marginals=marginal / total, normalizer=total)


def exhaustive_sparse_fit(
    y: np.ndarray, phi: np.ndarray, k: int, budget: int = 1_000_000
) -> tuple[tuple[int, ...], np.ndarray, float]:
    """Best k-atom least-squares fit by trying every support.

    Returns (support, coefficients, residual norm) of the global optimum.
    Raises when the number of candidate supports exceeds `budget`.
    """
    m, num_cols = phi.shape
    if math.comb(num_cols, k) > budget:
        raise CombinatorialBlowupError(
            f"C({num_cols}, {k}) supports exceed the enumeration budget"
        )
    best_support: tuple[int, ...] | None = None
    best_coeffs: np.ndarray | None = None
    best_resid = math.inf
    for support in itertools.combinations(range(num_cols), k):
        cols = phi[:, support]
        sol, _, _, _ = np.linalg.lstsq(cols, y, rcond=None)
        resid = float(np.linalg.norm(y - cols @ sol))
        if resid < best_resid:
            best_support, best_coeffs, best_resid = support, sol, resid
    return best_support, best_coeffs, best_resid
