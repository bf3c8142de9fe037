"""Turbo visibility detector tests.

Message updates are checked against independent references implemented inside
the tests: a textbook LMMSE with explicit inverses, literal two-state
alpha/beta recursions with transition matrices, numerical quadrature for the
spike-and-slab denoiser, and full enumeration over indicator patterns.
"""

import math

import numpy as np
import pytest

from sns_xlmimo import channel, metrics, observation, oracle, vrdomp
from sns_xlmimo.vrdomp import DetectorConfig, Hyperparams, TurboState


def make_hyper(channel_var=1.0, noise_var=0.1, psi=0.5, p10=0.1):
    return Hyperparams(channel_var=channel_var, noise_var=noise_var, psi=psi, p10=p10)


def random_instance(rng, n=64, slots=8, rf=4, psi=0.25, snr_db=5.0, kind="dft_rows"):
    """One synthetic scene: spike-and-slab channel, partial observation."""
    alpha = channel.sample_vr("contiguous", psi, n, rng).indicator
    x = alpha * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    comb = observation.build_combiner(n, slots, rf, rng, kind=kind)
    noise_var = observation.snr_to_noise(x, snr_db)
    y = observation.observe(x, comb, noise_var, rng).y
    return x, alpha, comb.matrix, y, noise_var


# ----------------------------------------------------------------------
# hyperparameter container
# ----------------------------------------------------------------------


def test_hyper_transition_identities():
    h = make_hyper(psi=0.25, p10=0.1)
    assert h.p01 == pytest.approx(0.25 * 0.1 / 0.75)
    assert h.p00 == pytest.approx(1.0 - h.p01)
    assert h.p11 == pytest.approx(0.9)


def test_hyper_full_fill_edge_cases():
    assert make_hyper(psi=1.0, p10=0.0).p01 == 0.0
    assert make_hyper(psi=1.0, p10=0.3).p01 == 1.0


def test_hyper_validation():
    with pytest.raises(ValueError):
        make_hyper(channel_var=0.0)
    with pytest.raises(ValueError):
        make_hyper(noise_var=-1e-3)
    with pytest.raises(ValueError):
        make_hyper(psi=0.0)
    with pytest.raises(ValueError):
        make_hyper(p10=1.2)


def test_hyper_scaled_touches_only_variances():
    h = make_hyper(2.0, 0.5, 0.3, 0.2).scaled(4.0)
    assert h.channel_var == pytest.approx(8.0)
    assert h.noise_var == pytest.approx(2.0)
    assert h.psi == 0.3 and h.p10 == 0.2


# ----------------------------------------------------------------------
# LMMSE module
# ----------------------------------------------------------------------


def test_lmmse_matches_exact_inverse_dft_rows():
    # Partial-DFT rows have constant column norms, so both the mean and the
    # scalar variance must agree with the explicit-inverse reference.
    rng = np.random.default_rng(11)
    worst_mean, worst_var = 0.0, 0.0
    for _ in range(100):
        a = observation.build_combiner(16, 4, 2, rng).matrix
        x_pri = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        y = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        v_pri = float(rng.uniform(0.1, 3.0))
        noise = float(rng.uniform(0.01, 1.0))
        x_post, v_post = vrdomp.lmmse_step(y, a, x_pri, v_pri, noise)
        x_ref, cov_ref = oracle.exact_lmmse(y, a, x_pri, v_pri, noise)
        scale = np.linalg.norm(x_ref)
        worst_mean = max(worst_mean, float(np.linalg.norm(x_post - x_ref)) / scale)
        diag = np.diag(cov_ref).real
        worst_var = max(worst_var, float(np.max(np.abs(diag - v_post))) / v_pri)
    assert worst_mean < 1e-10
    assert worst_var < 1e-10


def test_lmmse_random_phase_mean_exact_variance_average():
    # Row-orthonormal combiners without constant column norms: the posterior
    # mean is still exact and the scalar variance equals the average of the
    # true posterior diagonal (the trace of A^H A is preserved by design).
    rng = np.random.default_rng(12)
    for _ in range(20):
        a = observation.build_combiner(16, 4, 2, rng, kind="random_phase").matrix
        x_pri = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        y = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        v_pri, noise = 1.3, 0.2
        x_post, v_post = vrdomp.lmmse_step(y, a, x_pri, v_pri, noise)
        x_ref, cov_ref = oracle.exact_lmmse(y, a, x_pri, v_pri, noise)
        np.testing.assert_allclose(x_post, x_ref, rtol=0, atol=1e-12 * np.linalg.norm(x_ref))
        assert v_post == pytest.approx(float(np.trace(cov_ref).real) / 16, rel=1e-10)


def test_lmmse_complete_noiseless_recovers_exactly():
    rng = np.random.default_rng(13)
    a = observation.build_combiner(32, 32, 1, rng).matrix
    x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    x_post, v_post = vrdomp.lmmse_step(a @ x, a, np.zeros(32, dtype=complex), 1.0, 0.0)
    np.testing.assert_allclose(x_post, x, atol=1e-12)
    assert v_post == pytest.approx(0.0, abs=1e-15)


# ----------------------------------------------------------------------
# extrinsic messages
# ----------------------------------------------------------------------


def test_extrinsic_gaussian_division_identity():
    # Recombining the extrinsic with the prior must reproduce the posterior:
    # precisions add, precision-weighted means add.
    rng = np.random.default_rng(21)
    for _ in range(50):
        n = 16
        x_pri = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        x_post = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v_pri = float(rng.uniform(0.5, 4.0))
        v_post = float(rng.uniform(0.05, 0.9 * v_pri))
        x_ext, v_ext = vrdomp.extrinsic(x_post, v_post, x_pri, v_pri)
        v_back = 1.0 / (1.0 / v_pri + 1.0 / v_ext)
        x_back = v_back * (x_pri / v_pri + x_ext / v_ext)
        assert v_back == pytest.approx(v_post, rel=1e-10)
        np.testing.assert_allclose(x_back, x_post, rtol=1e-9, atol=1e-12)


def test_extrinsic_cap_when_posterior_no_better():
    x = np.ones(4, dtype=complex)
    _, v_ext = vrdomp.extrinsic(x, 2.0, x, 2.0)
    assert v_ext == vrdomp.EXT_CAP
    _, v_ext = vrdomp.extrinsic(x, 3.0, x, 2.0)
    assert v_ext == vrdomp.EXT_CAP


# ----------------------------------------------------------------------
# visibility evidence
# ----------------------------------------------------------------------


def test_likelihood_out_landmarks():
    # Zero pseudo-observation with channel_var == v_pri: odds are
    # v/(v+cv) = 1/2, so the probability is 1/3.
    e = vrdomp.likelihood_out(np.array([0.0 + 0.0j]), 1.0, 1.0)
    assert e[0] == pytest.approx(1.0 / 3.0, rel=1e-12)
    # Vanishing slab power carries no information.
    e = vrdomp.likelihood_out(np.array([1.0 + 0.0j]), 1.0, 1e-15)
    assert e[0] == pytest.approx(0.5, abs=1e-6)
    # A sample far above both variances is visible with near certainty.
    big = math.sqrt(100.0 * 2.0)
    e = vrdomp.likelihood_out(np.array([big + 0.0j]), 1.0, 1.0)
    assert e[0] > 0.99


def test_likelihood_out_matches_density_ratio():
    # Independent check against the two complex-Gaussian densities.
    rng = np.random.default_rng(22)
    x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    v, cv = 0.4, 1.7
    e = vrdomp.likelihood_out(x, v, cv)
    p_vis = np.exp(-np.abs(x) ** 2 / (v + cv)) / (math.pi * (v + cv))
    p_inv = np.exp(-np.abs(x) ** 2 / v) / (math.pi * v)
    np.testing.assert_allclose(e, p_vis / (p_vis + p_inv), rtol=1e-12)


def test_likelihood_is_denoiser_weight_at_even_prior():
    rng = np.random.default_rng(23)
    x = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    v, cv = 0.3, 2.0
    e = vrdomp.likelihood_out(x, v, cv)
    # With an even prior the denoiser's internal slab weight reduces to the
    # same posterior; recover it from the mixture moments.
    x_post, v_post_n, _ = vrdomp.denoise(x, v, np.full(16, 0.5), cv)
    a = cv / (cv + v)
    rho = x_post / (a * x)
    np.testing.assert_allclose(rho.real, e, rtol=1e-9)
    np.testing.assert_allclose(rho.imag, np.zeros(16), atol=1e-12)


# ----------------------------------------------------------------------
# chain message passing
# ----------------------------------------------------------------------


def hmm_messages_reference(evidence, hyper):
    """Literal alpha/beta recursions with an explicit transition matrix."""
    n = evidence.size
    t = np.array(
        [[hyper.p00, hyper.p01], [hyper.p10, hyper.p11]]
    )  # t[i, j] = P(next = j | current = i)
    fwd = np.empty(n)
    pred = np.array([1.0 - hyper.psi, hyper.psi])
    fwd[0] = pred[1]
    for i in range(1, n):
        lik = np.array([1.0 - evidence[i - 1], evidence[i - 1]])
        filt = pred * lik
        filt /= filt.sum()
        pred = filt @ t
        fwd[i] = pred[1]
    bwd = np.empty(n)
    beta = np.array([0.5, 0.5])
    bwd[-1] = 0.5
    for i in range(n - 2, -1, -1):
        lik = np.array([1.0 - evidence[i + 1], evidence[i + 1]])
        beta = t @ (lik * beta)
        beta /= beta.sum()
        bwd[i] = beta[1]
    return fwd, bwd


def test_chain_messages_match_reference():
    rng = np.random.default_rng(31)
    for _ in range(20):
        n = int(rng.integers(2, 40))
        e = rng.uniform(0.02, 0.98, size=n)
        h = make_hyper(psi=float(rng.uniform(0.1, 0.9)), p10=float(rng.uniform(0.02, 0.5)))
        fwd_ref, bwd_ref = hmm_messages_reference(e, h)
        np.testing.assert_allclose(vrdomp.forward_pass(e, h), fwd_ref, atol=1e-12)
        np.testing.assert_allclose(vrdomp.backward_pass(e, h), bwd_ref, atol=1e-12)


def test_forward_two_antenna_hand_value():
    # psi=0.6, p10=0.3 -> p01=0.45; evidence 0.8 at the first antenna:
    # fwd_2 = (0.45*0.4*0.2 + 0.7*0.6*0.8) / (0.4*0.2 + 0.6*0.8) = 0.372/0.56.
    h = make_hyper(psi=0.6, p10=0.3)
    fwd = vrdomp.forward_pass(np.array([0.8, 0.5]), h)
    assert fwd[0] == pytest.approx(0.6)
    assert fwd[1] == pytest.approx(0.372 / 0.56, rel=1e-12)


def test_forward_uniform_evidence_stays_stationary():
    # Uninformative evidence leaves every predicted marginal at the
    # stationary fill probability, whatever the transition rate.
    for psi, p10 in [(0.25, 0.1), (0.5, 0.3), (0.8, 0.05)]:
        h = make_hyper(psi=psi, p10=p10)
        fwd = vrdomp.forward_pass(np.full(64, 0.5), h)
        np.testing.assert_allclose(fwd, np.full(64, psi), atol=1e-12)


def test_forward_frozen_chain_is_sequential_bayes():
    # p10 = 0 freezes the indicator, so the forward message is the running
    # posterior of a single Bernoulli: odds multiply across the evidence.
    rng = np.random.default_rng(32)
    e = rng.uniform(0.1, 0.9, size=12)
    psi = 0.35
    h = make_hyper(psi=psi, p10=0.0)
    fwd = vrdomp.forward_pass(e, h)
    odds = psi / (1.0 - psi)
    for i in range(12):
        assert fwd[i] == pytest.approx(odds / (1.0 + odds), rel=1e-12)
        odds *= e[i] / (1.0 - e[i])


def test_backward_uninformative_evidence_is_half():
    h = make_hyper(psi=0.5, p10=0.2)
    bwd = vrdomp.backward_pass(np.full(16, 0.5), h)
    np.testing.assert_allclose(bwd, np.full(16, 0.5), atol=1e-12)


def test_backward_equals_forward_of_reversed_sequence():
    # Symmetric chain (psi = 1/2 makes p01 = p10) plus matching uniform
    # boundaries: the backward sweep is the forward sweep run right-to-left.
    rng = np.random.default_rng(33)
    e = rng.uniform(0.05, 0.95, size=30)
    h = make_hyper(psi=0.5, p10=0.17)
    assert h.p01 == pytest.approx(h.p10)
    bwd = vrdomp.backward_pass(e, h)
    fwd_rev = vrdomp.forward_pass(e[::-1], h)
    np.testing.assert_allclose(bwd, fwd_rev[::-1], atol=1e-12)


def test_belief_combines_three_messages():
    e = np.array([0.9, 0.5])
    fwd = np.array([0.5, 0.7])
    bwd = np.array([0.6, 0.5])
    out = vrdomp.belief(e, fwd, bwd)
    vis = e * fwd * bwd
    inv = (1 - e) * (1 - fwd) * (1 - bwd)
    np.testing.assert_allclose(out, vis / (vis + inv), rtol=1e-12)


def test_belief_uninformative_messages_return_prior_weighting():
    # All-uniform evidence and backward messages leave the stationary prior.
    h = make_hyper(psi=0.3, p10=0.1)
    e = np.full(8, 0.5)
    fwd = vrdomp.forward_pass(e, h)
    bwd = vrdomp.backward_pass(e, h)
    np.testing.assert_allclose(vrdomp.belief(e, fwd, bwd), np.full(8, 0.3), atol=1e-12)


def test_belief_conflicting_hard_messages_fall_back():
    out = vrdomp.belief(np.array([1.0]), np.array([0.0]), np.array([0.5]), prior=0.25)
    assert out[0] == 0.25


def test_threshold_is_strict():
    got = vrdomp.threshold(np.array([0.49, 0.5, 0.51]), 0.5)
    np.testing.assert_array_equal(got, [0, 0, 1])
    assert got.dtype == np.int8


def test_prior_in_excludes_local_evidence():
    fwd = np.array([0.9, 0.5])
    bwd = np.array([0.5, 0.2])
    out = vrdomp.prior_in(fwd, bwd)
    vis = fwd * bwd
    inv = (1 - fwd) * (1 - bwd)
    np.testing.assert_allclose(out, vis / (vis + inv), rtol=1e-12)


# ----------------------------------------------------------------------
# spike-and-slab denoiser
# ----------------------------------------------------------------------


def quadrature_denoise(x_pri, v, weight, cv, half_width=9.0, points=1501):
    """Posterior mean/variance by brute-force integration over the slab."""
    r = half_width * math.sqrt(cv)
    grid = np.linspace(-r, r, points)
    du = grid[1] - grid[0]
    u, w = np.meshgrid(grid, grid)
    xs = u + 1j * w
    slab = np.exp(-np.abs(xs) ** 2 / cv) / (math.pi * cv)
    lik = np.exp(-np.abs(x_pri - xs) ** 2 / v) / (math.pi * v)
    cell = du * du
    ev_slab = float(np.sum(lik * slab)) * cell
    num_mean = complex(np.sum(xs * lik * slab)) * cell
    num_second = float(np.sum(np.abs(xs) ** 2 * lik * slab)) * cell
    ev_spike = math.exp(-abs(x_pri) ** 2 / v) / (math.pi * v)
    z = weight * ev_slab + (1.0 - weight) * ev_spike
    mean = weight * num_mean / z
    second = weight * num_second / z
    return mean, second - abs(mean) ** 2


def test_denoise_matches_quadrature():
    v, cv = 0.5, 1.5
    cases = [0.2 + 0.1j, 1.0 - 0.7j, -2.2 + 0.4j, 0.0 + 0.0j]
    weights = [0.2, 0.5, 0.8, 0.35]
    x_pri = np.array(cases)
    w = np.array(weights)
    x_post, v_post_n, v_mean = vrdomp.denoise(x_pri, v, w, cv)
    for i in range(len(cases)):
        mean_ref, var_ref = quadrature_denoise(cases[i], v, weights[i], cv)
        assert abs(x_post[i] - mean_ref) < 1e-6
        assert abs(v_post_n[i] - var_ref) < 1e-6
    assert v_mean == pytest.approx(float(v_post_n.mean()))


def test_denoise_certain_prior_limits():
    rng = np.random.default_rng(41)
    x = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    v, cv = 0.4, 2.0
    # Certainly visible: plain Gaussian shrinkage by cv/(cv+v).
    x_post, v_post_n, _ = vrdomp.denoise(x, v, np.ones(8), cv)
    a = cv / (cv + v)
    np.testing.assert_allclose(x_post, a * x, rtol=1e-12)
    np.testing.assert_allclose(v_post_n, np.full(8, a * v), rtol=1e-12)
    # Certainly invisible: hard zero.
    x_post, v_post_n, v_mean = vrdomp.denoise(x, v, np.zeros(8), cv)
    np.testing.assert_array_equal(x_post, np.zeros(8, dtype=complex))
    np.testing.assert_array_equal(v_post_n, np.zeros(8))
    assert v_mean == 0.0


def test_denoise_variance_positive_and_finite():
    rng = np.random.default_rng(42)
    x = 10.0 * (rng.standard_normal(64) + 1j * rng.standard_normal(64))
    x_post, v_post_n, _ = vrdomp.denoise(x, 1e-9, rng.uniform(0.01, 0.99, 64), 3.0)
    assert np.all(np.isfinite(v_post_n)) and np.all(v_post_n >= 0.0)
    assert np.all(np.isfinite(x_post))


# ----------------------------------------------------------------------
# EM refinement
# ----------------------------------------------------------------------


def synthetic_converged_state(rng, n=1024, slots=128, rf=4, psi=0.25, p10=0.05, cv=2.0, noise=0.1):
    """A state whose posteriors equal the ground truth of a sampled scene."""
    vr = channel.sample_vr("markov", psi, n, rng, p10=p10)
    alpha = vr.indicator.astype(float)
    x = alpha * math.sqrt(cv / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    comb = observation.build_combiner(n, slots, rf, rng)
    w = math.sqrt(noise / 2.0) * (
        rng.standard_normal(comb.num_measurements)
        + 1j * rng.standard_normal(comb.num_measurements)
    )
    y = comb.matrix @ x + w
    hyper = make_hyper(channel_var=cv, noise_var=noise, psi=psi, p10=p10)
    evidence = np.clip(alpha, 1e-9, 1.0 - 1e-9)
    state = TurboState(
        x_a_pri=np.zeros(n, dtype=complex),
        v_a_pri=1.0,
        x_b_post=x,
        v_b_post=0.0,
        v_b_post_per_antenna=np.zeros(n),
        evidence=evidence,
        fwd=vrdomp.forward_pass(evidence, hyper),
        bwd=vrdomp.backward_pass(evidence, hyper),
        psi_post=alpha,
    )
    return state, y, comb.matrix, alpha, x, hyper


def test_em_recovers_plugin_statistics():
    rng = np.random.default_rng(51)
    state, y, a, alpha, x, hyper = synthetic_converged_state(rng)
    got = vrdomp.em_update(state, y, a, hyper)
    # Fill ratio and channel power are exact plug-in averages here.
    assert got.psi == pytest.approx(float(alpha.mean()), abs=1e-9)
    assert got.channel_var == pytest.approx(
        float(np.sum(np.abs(x) ** 2)) / float(alpha.sum()), rel=1e-9
    )
    # Noise power reduces to the residual power, a chi-square average around
    # the true value; transition rate counts the actual flips.
    assert got.noise_var == pytest.approx(0.1, rel=0.15)
    flips = float(np.sum((alpha[:-1] == 1.0) & (alpha[1:] == 0.0)))
    visits = float(alpha[:-1].sum())
    assert got.p10 == pytest.approx(flips / visits, rel=0.05)


def test_em_statistics_near_generative_values():
    # Averaged over scenes the plug-in estimates sit near the parameters that
    # generated the data.
    rng = np.random.default_rng(52)
    psis, noises, p10s = [], [], []
    for _ in range(20):
        state, y, a, _, _, hyper = synthetic_converged_state(rng)
        got = vrdomp.em_update(state, y, a, hyper)
        psis.append(got.psi)
        noises.append(got.noise_var)
        p10s.append(got.p10)
    assert np.mean(psis) == pytest.approx(0.25, abs=0.025)
    assert np.mean(noises) == pytest.approx(0.1, rel=0.1)
    assert np.mean(p10s) == pytest.approx(0.05, rel=0.25)


def test_em_fixed_point_on_frozen_state():
    # Iterating the update on a fixed state converges: the moment updates do
    # not depend on the running statistics at all, and the transition update
    # stabilizes once its own input matches.
    rng = np.random.default_rng(53)
    state, y, a, _, _, hyper = synthetic_converged_state(rng, n=512, slots=64)
    h = hyper
    for _ in range(40):
        h = vrdomp.em_update(state, y, a, h)
    h2 = vrdomp.em_update(state, y, a, h)
    assert h2.psi == pytest.approx(h.psi, abs=1e-9)
    assert h2.channel_var == pytest.approx(h.channel_var, rel=1e-9)
    assert h2.noise_var == pytest.approx(h.noise_var, rel=1e-9)
    assert abs(h2.p10 - h.p10) < 1e-6


def test_em_degenerate_beliefs_keep_previous():
    rng = np.random.default_rng(54)
    state, y, a, _, _, hyper = synthetic_converged_state(rng, n=256, slots=32)
    state.psi_post = np.zeros(256)
    got = vrdomp.em_update(state, y, a, hyper)
    assert got == hyper


def test_em_p10_respects_stationarity_bound():
    # The implied p01 = psi p10 / (1 - psi) must stay a probability.
    rng = np.random.default_rng(55)
    state, y, a, _, _, hyper = synthetic_converged_state(rng, n=256, slots=32, psi=0.8, p10=0.2)
    got = vrdomp.em_update(state, y, a, hyper)
    assert got.p10 <= (1.0 - got.psi) / got.psi + 1e-12
    assert 0.0 <= got.p01 <= 1.0


# ----------------------------------------------------------------------
# initialization helpers
# ----------------------------------------------------------------------


def test_moment_init_formula():
    rng = np.random.default_rng(61)
    y = 2.0 * (rng.standard_normal(128) + 1j * rng.standard_normal(128))
    mean_p = float(np.mean(np.abs(y) ** 2))
    h = vrdomp.moment_init(y, 0.5, psi0=0.4, p10=0.07)
    assert h.channel_var == pytest.approx((mean_p - 0.5) / 0.4, rel=1e-12)
    assert h.noise_var == 0.5
    assert h.psi == 0.4 and h.p10 == 0.07
    # Noise above the received power: the excess-power estimate floors at a
    # fraction of the mean power instead of going negative.
    h = vrdomp.moment_init(y, 10.0 * mean_p, psi0=0.5)
    assert h.channel_var == pytest.approx(1e-3 * mean_p / 0.5, rel=1e-9)


def test_blind_init_pure_noise_floor():
    # On a pure-noise observation the lower-quartile estimate lands near the
    # true noise power.
    rng = np.random.default_rng(62)
    y = math.sqrt(0.5) * (rng.standard_normal(4096) + 1j * rng.standard_normal(4096))
    a = observation.build_combiner(4096, 1024, 4, rng).matrix
    h = vrdomp.blind_init(y, a)
    assert h.noise_var == pytest.approx(1.0, rel=0.1)
    assert h.psi == 0.5 and h.p10 == 0.1


def test_blind_init_zero_observation():
    a = np.eye(4, dtype=complex)
    h = vrdomp.blind_init(np.zeros(4, dtype=complex), a)
    assert h == Hyperparams(1.0, 1.0, 0.5, 0.1)


# ----------------------------------------------------------------------
# full detector: exactness on toy sizes
# ----------------------------------------------------------------------


def test_single_iteration_beliefs_match_enumeration():
    # With a complete unitary observation the first LMMSE extrinsic is
    # exactly (A^H y, noise_var), and sum-product on a chain is exact, so one
    # turbo iteration must reproduce the brute-force indicator posterior.
    rng = np.random.default_rng(71)
    worst = 0.0
    for n in (4, 6, 8):
        for _ in range(10):
            hyper = make_hyper(
                channel_var=1.0,
                noise_var=float(rng.uniform(0.05, 0.5)),
                psi=float(rng.uniform(0.2, 0.8)),
                p10=float(rng.uniform(0.05, 0.4)),
            )
            alpha = (rng.random(n) < hyper.psi).astype(float)
            x = alpha * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
            a = observation.build_combiner(n, n, 1, rng).matrix
            w = math.sqrt(hyper.noise_var / 2.0) * (
                rng.standard_normal(n) + 1j * rng.standard_normal(n)
            )
            y = a @ x + w
            cfg = DetectorConfig(hyper=hyper, learn_hyper=False, max_iters=1)
            res = vrdomp.run_vrdomp(y, a, cfg)
            ref = oracle.exact_vr_posterior(a.conj().T @ y, hyper.noise_var, hyper)
            worst = max(worst, float(np.max(np.abs(res.belief.posterior - ref.marginals))))
    assert worst <= 1e-6


def test_detector_noiseless_complete_observation():
    rng = np.random.default_rng(72)
    n = 64
    alpha = channel.sample_vr("contiguous", 0.25, n, rng).indicator
    x = alpha * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    a = observation.build_combiner(n, n, 1, rng).matrix
    hyper = make_hyper(channel_var=1.0, noise_var=1e-10, psi=0.25, p10=0.05)
    res = vrdomp.run_vrdomp(a @ x, a, DetectorConfig(hyper=hyper, learn_hyper=False))
    assert metrics.vrer(alpha, res.belief.alpha_hat) == 0.0
    assert metrics.nmse(x, res.x_post) < 1e-8


# ----------------------------------------------------------------------
# full detector: invariances and orchestration
# ----------------------------------------------------------------------


def test_detector_scale_invariance():
    # Internal power normalization: scaling the observation scales the
    # channel posterior and leaves the visibility beliefs untouched.
    rng = np.random.default_rng(73)
    x, alpha, a, y, noise_var = random_instance(rng)
    res1 = vrdomp.run_vrdomp(y, a)
    res2 = vrdomp.run_vrdomp(7.3 * y, a)
    np.testing.assert_allclose(res2.belief.posterior, res1.belief.posterior, atol=1e-9)
    np.testing.assert_allclose(res2.x_post, 7.3 * res1.x_post, rtol=1e-7, atol=1e-12)


def test_detector_global_phase_covariance():
    rng = np.random.default_rng(74)
    x, alpha, a, y, noise_var = random_instance(rng)
    phase = np.exp(1j * 1.1)
    res1 = vrdomp.run_vrdomp(y, a)
    res2 = vrdomp.run_vrdomp(phase * y, a)
    np.testing.assert_allclose(res2.belief.posterior, res1.belief.posterior, atol=1e-9)
    np.testing.assert_allclose(res2.x_post, phase * res1.x_post, rtol=1e-7, atol=1e-12)


def test_detector_reversal_covariance():
    # Relabeling antennas back-to-front permutes the posterior the same way
    # when the chain is reversal-symmetric (psi = 1/2 gives p01 = p10) and
    # both boundary messages are 1/2.
    rng = np.random.default_rng(75)
    n = 48
    alpha = channel.sample_vr("contiguous", 0.5, n, rng).indicator
    x = alpha * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    comb = observation.build_combiner(n, 12, 2, rng)
    noise_var = observation.snr_to_noise(x, 5.0)
    y = observation.observe(x, comb, noise_var, rng).y
    hyper = make_hyper(channel_var=1.0, noise_var=noise_var, psi=0.5, p10=0.2)
    cfg = DetectorConfig(hyper=hyper, learn_hyper=False)
    res = vrdomp.run_vrdomp(y, comb.matrix, cfg)
    res_rev = vrdomp.run_vrdomp(y, comb.matrix[:, ::-1], cfg)
    np.testing.assert_allclose(res_rev.belief.posterior, res.belief.posterior[::-1], atol=1e-9)
    np.testing.assert_allclose(res_rev.x_post, res.x_post[::-1], rtol=1e-7, atol=1e-12)


def test_detector_invariants_across_random_instances():
    rng = np.random.default_rng(76)
    for _ in range(15):
        psi = float(rng.uniform(0.1, 1.0))
        snr = float(rng.uniform(-5.0, 15.0))
        slots = int(rng.integers(4, 17))
        x, alpha, a, y, noise_var = random_instance(rng, psi=psi, snr_db=snr, slots=slots)
        res = vrdomp.run_vrdomp(y, a, DetectorConfig(collect_diagnostics=True))
        q = res.belief.posterior
        assert np.all((q >= 0.0) & (q <= 1.0))
        assert np.all(np.isfinite(res.x_post))
        assert 0.0 < res.hyper.psi <= 1.0
        assert res.hyper.noise_var > 0.0 and res.hyper.channel_var > 0.0
        assert 0.0 <= res.hyper.p10 <= 1.0
        assert math.isfinite(res.residual) and res.residual >= 0.0
        # `iterations` labels the returned iterate (the best-residual snapshot
        # when unconverged); diagnostics cover every executed iteration.
        assert 1 <= res.iterations <= 50
        assert res.iterations <= len(res.diagnostics) <= 50
        np.testing.assert_array_equal(res.belief.alpha_hat, vrdomp.threshold(q, 0.5))


def test_detector_converges_on_easy_instance():
    rng = np.random.default_rng(77)
    x, alpha, a, y, noise_var = random_instance(rng, slots=16, snr_db=15.0)
    hyper = vrdomp.moment_init(y, noise_var)
    res = vrdomp.run_vrdomp(y, a, DetectorConfig(hyper=hyper))
    assert res.converged
    assert res.iterations < 50
    assert metrics.vrer(alpha, res.belief.alpha_hat) < 0.1


def test_detector_determinism():
    rng = np.random.default_rng(78)
    x, alpha, a, y, noise_var = random_instance(rng)
    r1 = vrdomp.run_vrdomp(y, a)
    r2 = vrdomp.run_vrdomp(y, a)
    np.testing.assert_array_equal(r1.belief.posterior, r2.belief.posterior)
    np.testing.assert_array_equal(r1.x_post, r2.x_post)


def test_noise_learn_delay_holds_initial_noise():
    rng = np.random.default_rng(79)
    x, alpha, a, y, noise_var = random_instance(rng, slots=16, snr_db=10.0)
    # Deliberately underestimated initial noise power: the unexplained
    # residual forces EM to raise it toward the truth unless a delay covering
    # the whole run holds it.
    hyper = vrdomp.moment_init(y, 0.25 * noise_var)
    held = vrdomp.run_vrdomp(y, a, DetectorConfig(hyper=hyper, noise_learn_delay=50))
    free = vrdomp.run_vrdomp(y, a, DetectorConfig(hyper=hyper))
    assert held.hyper.noise_var == pytest.approx(0.25 * noise_var, rel=1e-9)
    assert free.hyper.noise_var == pytest.approx(noise_var, rel=0.3)
    # The other statistics keep learning while the noise is held.
    assert held.hyper.psi != hyper.psi


def test_learn_p10_switch_pins_transition_rate():
    rng = np.random.default_rng(80)
    x, alpha, a, y, noise_var = random_instance(rng)
    hyper = vrdomp.moment_init(y, noise_var, p10=0.02)
    pinned = vrdomp.run_vrdomp(y, a, DetectorConfig(hyper=hyper, learn_p10=False))
    free = vrdomp.run_vrdomp(y, a, DetectorConfig(hyper=hyper))
    assert pinned.hyper.p10 == 0.02
    assert free.hyper.p10 != 0.02


def test_detector_rejects_bad_max_iters():
    with pytest.raises(ValueError):
        vrdomp.run_vrdomp(np.zeros(4, dtype=complex), np.eye(4, dtype=complex),
                          DetectorConfig(max_iters=0))


def test_detector_blind_initialization_runs():
    # No statistics supplied at all: the bootstrap path must still produce a
    # valid belief vector.
    rng = np.random.default_rng(81)
    x, alpha, a, y, noise_var = random_instance(rng, snr_db=10.0, slots=12)
    res = vrdomp.run_vrdomp(y, a, DetectorConfig(hyper=None))
    assert res.belief.posterior.shape == alpha.shape
    assert np.all((res.belief.posterior >= 0.0) & (res.belief.posterior <= 1.0))
