"""Turbo message-passing detector for visibility regions.

Two modules exchange extrinsic Gaussian messages about the masked channel x.
Module A treats x as i.i.d. Gaussian and performs an inversion-free LMMSE
update against the pilot observation y = A x + w (the combiner rows are
orthonormal, so the M x M inverse collapses to a scalar).  Module B imposes
the structured prior: each antenna is either invisible (x_n = 0) or visible
(x_n ~ CN(0, sigma^2)), with the visibility indicators forming a stationary
two-state Markov chain along the array.  Sum-product sweeps over the chain
yield per-antenna visibility beliefs; a spike-and-slab MMSE denoiser shrinks
the channel estimate accordingly.  Unknown statistics (channel power, noise
power, fill ratio, transition rate) can be refined in-loop by EM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

VAR_FLOOR = 1e-12
EXT_CAP = 1e6


@dataclass
class Hyperparams:
    """Model statistics: visible-antenna channel power sigma^2, measurement
    noise power, stationary fill probability psi, and the visible-to-invisible
    transition probability p10 of the indicator chain."""

    channel_var: float
    noise_var: float
    psi: float
    p10: float

    def __post_init__(self) -> None:
        if self.channel_var <= 0.0 or self.noise_var < 0.0:
            raise ValueError("variances must be positive (noise may be zero)")
        if not 0.0 < self.psi <= 1.0:
            raise ValueError("psi must lie in (0, 1]")
        if not 0.0 <= self.p10 <= 1.0:
            raise ValueError("p10 must lie in [0, 1]")

    @property
    def p01(self) -> float:
        """Invisible-to-visible rate implied by stationarity."""
        if self.psi >= 1.0:
            return 0.0 if self.p10 == 0.0 else 1.0
        return min(1.0, self.psi * self.p10 / (1.0 - self.psi))

    @property
    def p00(self) -> float:
        return 1.0 - self.p01

    @property
    def p11(self) -> float:
        return 1.0 - self.p10

    def scaled(self, factor: float) -> "Hyperparams":
        """Rescale the variance parameters by `factor` (probabilities fixed)."""
        return replace(
            self,
            channel_var=self.channel_var * factor,
            noise_var=self.noise_var * factor,
        )


@dataclass
class DetectorConfig:
    """Knobs for `run_vrdomp`.

    `hyper` seeds the statistics; None triggers a blind initialization from
    the observation itself.  With `learn_hyper` the statistics are refined by
    EM after every iteration.  `damping` mixes each new extrinsic message with
    the previous prior (1.0 disables damping).

    Two switches guard the EM refinement against its own early mistakes.
    While the visibility beliefs are still diffuse the posterior mean
    underestimates the channel, and wide-fill scenes can lock into a
    self-confirming "everything is noise" fixed point: unexplained signal is
    booked as noise, the weaker evidence keeps the beliefs diffuse, and the
    loop never recovers.  `noise_learn_delay` keeps the initial noise power
    for that many iterations so the beliefs polarize against the true floor
    first; the later updates still absorb residual model mismatch.  The same
    diffuse beliefs also inflate the expected flip count of the visibility
    chain, so the learned break rate fragments wide fills; `learn_p10 =
    False` pins the break rate at its initial value instead.  Both default to
    the fully adaptive behavior, which is preferable at low fill where the
    mismatch absorption helps.
    """

    hyper: Hyperparams | None = None
    learn_hyper: bool = True
    max_iters: int = 50
    tol: float = 1e-5
    damping: float = 0.7
    psi_th: float = 0.5
    noise_learn_delay: int = 0
    learn_p10: bool = True
    var_floor: float = VAR_FLOOR
    ext_cap: float = EXT_CAP
    snr_guess: float = 1.0
    collect_diagnostics: bool = False


@dataclass
class TurboState:
    """Messages of one turbo iteration (all in the detector's working scale)."""

    x_a_pri: np.ndarray
    v_a_pri: float
    x_a_post: np.ndarray | None = None
    v_a_post: float = 0.0
    x_a_ext: np.ndarray | None = None
    v_a_ext: float = 0.0
    x_b_pri: np.ndarray | None = None
    v_b_pri: float = 0.0
    x_b_post: np.ndarray | None = None
    v_b_post: float = 0.0
    v_b_post_per_antenna: np.ndarray | None = None
    x_b_ext: np.ndarray | None = None
    v_b_ext: float = 0.0
    evidence: np.ndarray | None = None
    fwd: np.ndarray | None = None
    bwd: np.ndarray | None = None
    psi_post: np.ndarray | None = None
    prior_weight: np.ndarray | None = None
    iteration: int = 0


@dataclass
class VrBelief:
    """Per-antenna visibility posterior and its thresholded indicator."""

    posterior: np.ndarray
    alpha_hat: np.ndarray
    threshold: float


@dataclass
class VrdompResult:
    belief: VrBelief
    x_post: np.ndarray
    converged: bool
    iterations: int
    hyper: Hyperparams
    residual: float
    state: TurboState
    diagnostics: list[dict] | None = None


def lmmse_step(
    y: np.ndarray,
    a: np.ndarray,
    x_pri: np.ndarray,
    v_pri: float,
    noise_var: float,
) -> tuple[np.ndarray, float]:
    """LMMSE update of x from y = A x + w without forming a matrix inverse.

    Valid for combiners with orthonormal rows: the posterior mean is exact and
    the scalar posterior variance matches the diagonal of the exact posterior
    covariance, v_pri - (M/N) * v_pri^2 / (v_pri + noise_var).
    """
    m, n = a.shape
    gain = v_pri / (v_pri + noise_var)
    x_post = x_pri + gain * (a.conj().T @ (y - a @ x_pri))
    v_post = v_pri - (m / n) * v_pri * gain
    return x_post, float(v_post)


def extrinsic(
    x_post: np.ndarray,
    v_post: float,
    x_pri: np.ndarray,
    v_pri: float,
    var_floor: float = VAR_FLOOR,
    cap: float = EXT_CAP,
) -> tuple[np.ndarray, float]:
    """Gaussian extrinsic message: divide the posterior by the prior.

    Precisions subtract; when the posterior barely improves on the prior the
    extrinsic variance blows up and is capped at `cap`.
    """
    v_post = max(v_post, var_floor)
    gap = v_pri - v_post
    if gap < var_floor:
        v_ext = cap
    else:
        v_ext = min(max(v_pri * v_post / gap, var_floor), cap)
    x_ext = v_ext * (x_post / v_post - x_pri / v_pri)
    return x_ext, float(v_ext)


def likelihood_out(
    x_pri: np.ndarray, v_pri: float, channel_var: float, var_floor: float = VAR_FLOOR
) -> np.ndarray:
    """Per-antenna probability that the pseudo-observation came from a visible
    antenna rather than from pure estimation noise.

    Computed in the log domain: the visible hypothesis has variance
    channel_var + v_pri, the invisible one v_pri alone.
    """
    v = max(v_pri, var_floor)
    c = channel_var / (v * (channel_var + v))
    t = math.log(v / (channel_var + v)) + c * np.abs(x_pri) ** 2
    return expit(t)


def forward_pass(evidence: np.ndarray, hyper: Hyperparams) -> np.ndarray:
    """Left-to-right chain messages; entry 0 carries the stationary prior."""
    n = evidence.size
    fwd = np.empty(n)
    fwd[0] = hyper.psi
    p01, p11 = hyper.p01, hyper.p11
    for i in range(1, n):
        vis = fwd[i - 1] * evidence[i - 1]
        invis = (1.0 - fwd[i - 1]) * (1.0 - evidence[i - 1])
        den = vis + invis
        fwd[i] = (p01 * invis + p11 * vis) / den if den > 0.0 else hyper.psi
    return fwd


def backward_pass(evidence: np.ndarray, hyper: Hyperparams) -> np.ndarray:
    """Right-to-left chain messages; the right boundary is uninformative."""
    n = evidence.size
    bwd = np.empty(n)
    bwd[-1] = 0.5
    p10, p00, p11, p01 = hyper.p10, hyper.p00, hyper.p11, hyper.p01
    for i in range(n - 2, -1, -1):
        vis = bwd[i + 1] * evidence[i + 1]
        invis = (1.0 - bwd[i + 1]) * (1.0 - evidence[i + 1])
        num = p10 * invis + p11 * vis
        den = (p10 + p00) * invis + (p11 + p01) * vis
        bwd[i] = num / den if den > 0.0 else 0.5
    return bwd


def belief(
    evidence: np.ndarray,
    fwd: np.ndarray,
    bwd: np.ndarray,
    prior: float = 0.5,
) -> np.ndarray:
    """Visibility posterior from the three incoming messages at each antenna.

    A vanishing normalizer (conflicting hard messages) falls back to `prior`.
    """
    vis = evidence * fwd * bwd
    invis = (1.0 - evidence) * (1.0 - fwd) * (1.0 - bwd)
    den = vis + invis
    safe = den > 0.0
    return np.where(safe, vis / np.where(safe, den, 1.0), prior)


def threshold(psi_post: np.ndarray, psi_th: float = 0.5) -> np.ndarray:
    """Hard visibility decisions: 1 where the belief exceeds psi_th."""
    return (psi_post > psi_th).astype(np.int8)


def prior_in(fwd: np.ndarray, bwd: np.ndarray) -> np.ndarray:
    """Chain-only visibility prior handed to the denoiser (local evidence
    excluded, as required for an extrinsic input)."""
    vis = fwd * bwd
    invis = (1.0 - fwd) * (1.0 - bwd)
    den = vis + invis
    safe = den > 0.0
    return np.where(safe, vis / np.where(safe, den, 1.0), 0.5)


def denoise(
    x_pri: np.ndarray,
    v_pri: float,
    prior_weight: np.ndarray,
    channel_var: float,
    var_floor: float = VAR_FLOOR,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Spike-and-slab MMSE denoiser.

    Under prior x_n ~ (1 - w_n) delta_0 + w_n CN(0, channel_var) and
    pseudo-observation x_pri_n = x_n + CN(0, v_pri), the posterior slab weight
    is rho_n and the posterior moments are

        E[x_n]   = rho_n * a * x_pri_n,           a = channel_var / (v + channel_var)
        Var[x_n] = rho_n * a * v + rho_n * (1 - rho_n) * |a * x_pri_n|^2.

    The variance uses the stable second-moment form, which stays finite at
    x_pri_n = 0.  Returns (posterior mean, per-antenna variance, mean variance).
    """
    v = max(v_pri, var_floor)
    a = channel_var / (v + channel_var)
    c = channel_var / (v * (channel_var + v))
    with np.errstate(divide="ignore"):
        logit_w = np.log(prior_weight) - np.log1p(-prior_weight)
    t = logit_w - math.log((v + channel_var) / v) + c * np.abs(x_pri) ** 2
    rho = expit(t)
    shrunk = a * x_pri
    x_post = rho * shrunk
    v_post_n = rho * (a * v) + rho * (1.0 - rho) * np.abs(shrunk) ** 2
    return x_post, v_post_n, float(v_post_n.mean())


def _pairwise_visible_to_invisible(state: TurboState, hyper: Hyperparams) -> tuple[float, float]:
    """Sums over chain edges of P(alpha_n = 1, alpha_{n+1} = 0) and
    P(alpha_n = 1), from the two-slice posteriors of the chain."""
    evidence, fwd, bwd = state.evidence, state.fwd, state.bwd
    n = evidence.size
    if n < 2:
        return 0.0, 0.0
    left1 = fwd[:-1] * evidence[:-1]
    left0 = (1.0 - fwd[:-1]) * (1.0 - evidence[:-1])
    right1 = bwd[1:] * evidence[1:]
    right0 = (1.0 - bwd[1:]) * (1.0 - evidence[1:])
    j11 = left1 * hyper.p11 * right1
    j10 = left1 * hyper.p10 * right0
    j01 = left0 * hyper.p01 * right1
    j00 = left0 * hyper.p00 * right0
    z = j11 + j10 + j01 + j00
    safe = z > 0.0
    num = np.where(safe, j10 / np.where(safe, z, 1.0), 0.0)
    den = np.where(safe, (j10 + j11) / np.where(safe, z, 1.0), 0.0)
    return float(num.sum()), float(den.sum())


def em_update(
    state: TurboState,
    y: np.ndarray,
    a: np.ndarray,
    hyper: Hyperparams,
    var_floor: float = VAR_FLOOR,
) -> Hyperparams:
    """One EM refinement of the statistics from the current posteriors.

    Derivation (complete-data EM with the detector's posteriors as E-step):

    * channel power: maximizing sum_n q_n E[log CN(x_n; 0, s2) | y, alpha_n=1]
      needs the slab-conditional second moments.  The denoiser reports mixture
      moments, and |x_mix_n|^2 + v_mix_n = q_n * (|x_cond_n|^2 + v_cond_n)
      already carries one factor of the belief q_n, so the weighted average is
      sum_n (|x_mix_n|^2 + v_mix_n) / sum_n q_n.  Weighting the mixture moments
      by q_n again would shrink s2 geometrically until the slab dies;
    * noise power: E||y - A x||^2 = ||y - A x_mix||^2 + tr(A Cov A^H); with
      Cov = diag(v_mix) and unit-modulus rows the trace is (M/N) sum_n v_mix_n,
      i.e. M * mean(v_mix), so the update is the residual power plus mean(v_mix);
    * fill ratio: mean visibility belief;
    * transition rate: expected visible-to-invisible edge counts over expected
      visible counts, using the two-slice chain posteriors.

    Degenerate beliefs (everything invisible) keep the previous statistics.
    """
    q = state.psi_post
    weight = float(q.sum())
    if weight < 1e-6:
        return hyper
    m, n = a.shape
    energy = np.abs(state.x_b_post) ** 2 + state.v_b_post_per_antenna
    channel_var = max(float(energy.sum()) / weight, var_floor)
    resid = y - a @ state.x_b_post
    noise_var = max(
        (float(np.vdot(resid, resid).real) + m * state.v_b_post) / m,
        var_floor,
    )
    eps = 1e-6
    psi = min(max(float(q.mean()), eps), 1.0 - eps)
    flips, visits = _pairwise_visible_to_invisible(state, hyper)
    if visits > eps:
        p10 = flips / visits
    else:
        p10 = hyper.p10
    # Keep the implied invisible-to-visible rate a valid probability.
    p10 = min(max(p10, eps), 1.0 - eps, (1.0 - psi) / psi * (1.0 - eps))
    return Hyperparams(channel_var=channel_var, noise_var=noise_var, psi=psi, p10=p10)


def blind_init(y: np.ndarray, a: np.ndarray, snr_guess: float = 1.0) -> Hyperparams:
    """Statistics bootstrap when nothing is known.

    The channel power guess spreads the received energy over the antennas and
    an assumed SNR; the noise floor comes from the lower quartile of the
    per-measurement powers (exact for pure noise, conservative otherwise).
    """
    m, n = a.shape
    p = np.abs(y) ** 2
    mean_power = float(p.mean())
    if mean_power <= 0.0:
        return Hyperparams(1.0, 1.0, 0.5, 0.1)
    channel_var = float(np.sum(p)) * n / (m * max(snr_guess, 1.0))
    # 25th percentile of Exp(mean) sits at -ln(0.75) * mean.
    noise_var = float(np.quantile(p, 0.25)) / 0.2877
    noise_var = min(max(noise_var, VAR_FLOOR), mean_power)
    return Hyperparams(channel_var, noise_var, 0.5, 0.1)


def moment_init(
    y: np.ndarray,
    noise_var: float,
    psi0: float = 0.5,
    p10: float = 0.1,
) -> Hyperparams:
    """Statistics bootstrap for a known noise floor: the channel power follows
    from E|y_m|^2 = psi * sigma^2 + noise_var at the assumed fill psi0."""
    mean_power = float(np.mean(np.abs(y) ** 2))
    channel_var = max(mean_power - noise_var, 1e-3 * mean_power, VAR_FLOOR) / psi0
    return Hyperparams(channel_var, max(noise_var, VAR_FLOOR), psi0, p10)


def run_vrdomp(y: np.ndarray, a: np.ndarray, config: DetectorConfig | None = None) -> VrdompResult:
    """Run the turbo detector until the channel posterior stabilizes.

    The observation is internally rescaled to unit mean power (variance
    parameters rescale with it, outputs are mapped back), which keeps the
    mandated unit prior variance meaningful for channels of any magnitude.
    If the loop does not converge within `max_iters`, the iterate with the
    smallest observation residual is returned and `converged` is False.
    """
    cfg = config or DetectorConfig()
    if cfg.max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    m, n = a.shape
    scale2 = float(np.mean(np.abs(y) ** 2))
    if scale2 <= 0.0:
        scale2 = 1.0
    scale = math.sqrt(scale2)
    ys = y / scale
    if cfg.hyper is None:
        hyper = blind_init(ys, a, cfg.snr_guess)
    else:
        hyper = cfg.hyper.scaled(1.0 / scale2)
    floor = cfg.var_floor

    state = TurboState(x_a_pri=np.zeros(n, dtype=complex), v_a_pri=1.0)
    diagnostics: list[dict] | None = [] if cfg.collect_diagnostics else None
    prev_post: np.ndarray | None = None
    best: tuple[float, np.ndarray, np.ndarray, Hyperparams, int] | None = None
    converged = False

    for it in range(cfg.max_iters):
        # Module A: LMMSE against the observation, then extrinsic to B.
        noise_var = max(hyper.noise_var, floor)
        x_a_post, v_a_post = lmmse_step(ys, a, state.x_a_pri, state.v_a_pri, noise_var)
        v_a_post = max(v_a_post, floor)
        x_a_ext, v_a_ext = extrinsic(
            x_a_post, v_a_post, state.x_a_pri, state.v_a_pri, floor, cfg.ext_cap
        )
        if it == 0:
            x_b_pri, v_b_pri = x_a_ext, v_a_ext
        else:
            x_b_pri = cfg.damping * x_a_ext + (1.0 - cfg.damping) * state.x_b_pri
            v_b_pri = cfg.damping * v_a_ext + (1.0 - cfg.damping) * state.v_b_pri
        v_b_pri = min(max(v_b_pri, floor), cfg.ext_cap)

        # Module B: chain inference and spike-and-slab denoising.
        evidence = likelihood_out(x_b_pri, v_b_pri, hyper.channel_var, floor)
        fwd = forward_pass(evidence, hyper)
        bwd = backward_pass(evidence, hyper)
        psi_post = belief(evidence, fwd, bwd, prior=hyper.psi)
        weight = prior_in(fwd, bwd)
        x_b_post, v_b_post_n, v_b_post = denoise(x_b_pri, v_b_pri, weight, hyper.channel_var, floor)
        v_b_post = max(v_b_post, floor)
        x_b_ext, v_b_ext = extrinsic(x_b_post, v_b_post, x_b_pri, v_b_pri, floor, cfg.ext_cap)
        if it == 0:
            x_a_pri, v_a_pri = x_b_ext, v_b_ext
        else:
            x_a_pri = cfg.damping * x_b_ext + (1.0 - cfg.damping) * state.x_a_pri
            v_a_pri = cfg.damping * v_b_ext + (1.0 - cfg.damping) * state.v_a_pri
        v_a_pri = min(max(v_a_pri, floor), cfg.ext_cap)

        state = TurboState(
            x_a_pri=x_a_pri,
            v_a_pri=v_a_pri,
            x_a_post=x_a_post,
            v_a_post=v_a_post,
            x_a_ext=x_a_ext,
            v_a_ext=v_a_ext,
            x_b_pri=x_b_pri,
            v_b_pri=v_b_pri,
            x_b_post=x_b_post,
            v_b_post=v_b_post,
            v_b_post_per_antenna=v_b_post_n,
            x_b_ext=x_b_ext,
            v_b_ext=v_b_ext,
            evidence=evidence,
            fwd=fwd,
            bwd=bwd,
            psi_post=psi_post,
            prior_weight=weight,
            iteration=it + 1,
        )

        residual = float(np.linalg.norm(ys - a @ x_b_post))
        if cfg.learn_hyper:
            refined = em_update(state, ys, a, hyper, floor)
            if it + 1 <= cfg.noise_learn_delay:
                refined = replace(refined, noise_var=hyper.noise_var)
            if not cfg.learn_p10:
                refined = replace(refined, p10=hyper.p10)
            hyper = refined
        if best is None or residual < best[0]:
            best = (residual, x_b_post.copy(), psi_post.copy(), hyper, it + 1)
        if diagnostics is not None:
            diagnostics.append(
                {
                    "iter": it + 1,
                    "v_a_ext": v_a_ext * scale2,
                    "v_b_ext": v_b_ext * scale2,
                    "mean_psi_post": float(psi_post.mean()),
                    "residual": residual * scale,
                }
            )
        if prev_post is not None:
            change = np.linalg.norm(x_b_post - prev_post) / max(
                np.linalg.norm(x_b_post), 1e-300
            )
            if change < cfg.tol:
                converged = True
        prev_post = x_b_post.copy()
        if converged:
            break

    if converged:
        residual_out, x_out, psi_out, hyper_out, iters = (
            residual,
            state.x_b_post,
            state.psi_post,
            hyper,
            state.iteration,
        )
    else:
        residual_out, x_out, psi_out, hyper_out, iters = best
    alpha_hat = threshold(psi_out, cfg.psi_th)
    return VrdompResult(
        belief=VrBelief(posterior=psi_out, alpha_hat=alpha_hat, threshold=cfg.psi_th),
        x_post=x_out * scale,
        converged=converged,
        iterations=iters,
        hyper=hyper_out.scaled(scale2),
        residual=residual_out * scale,
        state=state,
        diagnostics=diagnostics,
    )
