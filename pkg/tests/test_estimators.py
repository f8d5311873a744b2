import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kentmix.distributions import KentParams, VmfParams, kent_moments, kent_sample, vmf_mean_resultant, vmf_sample
from kentmix.estimators import (
    ESTIMATORS,
    LATTICE_Q,
    LN2,
    TIGHT,
    PriorSpec,
    axis_partials,
    capped_log_det,
    fisher_angles,
    fisher_angles_generic,
    fisher_info,
    fisher_scale,
    first_part_nats,
    fit_kent,
    log_jacobian,
    log_prior,
    log_prior_canonical,
    message_length,
    ml_fit,
    mml_fit,
    moment_fit,
    negative_log_likelihood,
    params_to_rosenblatt,
    refine_fit,
    rosenblatt_to_params,
    sufficient_stats,
    vmf_first_part_nats,
    vmf_message_length,
    vmf_ml_estimate,
    vmf_mml_estimate,
)
from kentmix.geometry import axes_from_angles
from kentmix.norm_series import log_norm_const, norm_terms

PRIORS = list(PriorSpec)


def _expected_nll(theta, truth: KentParams):
    """E_truth[-ln f(x; angles=theta, scale of truth)] from the truth's moments."""
    m = kent_moments(truth, TIGHT)
    Q = axes_from_angles(*theta)
    g1, g2, g3 = Q[:, 0], Q[:, 1], Q[:, 2]
    M = m.second_moment
    return (log_norm_const(truth.kappa, truth.beta, TIGHT) - truth.kappa * g1 @ m.mean_vec
            - truth.beta * (g2 @ M @ g2 - g3 @ M @ g3))


def _fd_hessian(f, x, h):
    x = np.asarray(x, dtype=float)
    n = len(x)
    H = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            ei, ej = np.eye(n)[i] * h, np.eye(n)[j] * h
            H[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return H


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.2, 2.9), st.floats(0.0, 6.2), st.floats(1.0, 80.0), st.floats(0.05, 0.95))
def test_fisher_angles_is_expected_hessian(psi, alpha, eta, kappa, ecc):
    p = KentParams.from_ecc(psi, alpha, eta, kappa, ecc)
    H = _fd_hessian(lambda t: _expected_nll(t, p), p.angles, 1e-4)
    F = fisher_angles(p)
    np.testing.assert_allclose(F, H, atol=2e-5 * max(1.0, kappa))
    np.testing.assert_allclose(fisher_angles_generic(p), F, atol=1e-9 * max(1.0, kappa))


@pytest.mark.parametrize("kappa,beta", [(1.0, 0.2), (10.0, 4.0), (150.0, 30.0)])
def test_fisher_scale_is_log_c_hessian(kappa, beta):
    H = _fd_hessian(lambda v: log_norm_const(v[0], v[1], TIGHT), [kappa, beta], 1e-3 * max(1.0, beta))
    np.testing.assert_allclose(fisher_scale(kappa, beta), H, rtol=1e-5, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 3.1), st.floats(0.05, 3.09), st.floats(0.0, 6.2))
def test_angle_determinant_orientation_free(psi, alpha, eta):
    ref = KentParams.from_ecc(0.3, 1.0, 1.0, 20.0, 0.6)
    p = KentParams.from_ecc(psi, alpha, eta, 20.0, 0.6)
    d = np.linalg.det(fisher_angles(p)) / math.sin(alpha) ** 2
    d_ref = np.linalg.det(fisher_angles(ref)) / math.sin(1.0) ** 2
    assert d == pytest.approx(d_ref, rel=1e-8)


def test_axis_partials_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(10):
        th = rng.uniform([0, 0.1, 0], [math.pi, math.pi - 0.1, 2 * math.pi])
        d1, d2 = axis_partials(*th)
        for i in range(3):
            e = np.eye(3)[i] * h
            Qp, Qm = axes_from_angles(*(th + e)), axes_from_angles(*(th - e))
            for k in range(3):
                np.testing.assert_allclose(d1[k, i], (Qp[:, k] - Qm[:, k]) / (2 * h), atol=1e-8)
            dp, dm = axis_partials(*(th + e))[0], axis_partials(*(th - e))[0]
            for k in range(3):
                for j in range(3):
                    np.testing.assert_allclose(d2[k, j, i], (dp[k, j] - dm[k, j]) / (2 * h), atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 3.1), st.floats(0.01, 3.13), st.floats(0.0, 6.2), st.floats(0.01, 500.0), st.floats(0.0, 0.99),
       st.sampled_from(PRIORS))
def test_prior_closed_form_matches_jacobian(psi, alpha, eta, kappa, ecc, prior):
    p = KentParams.from_ecc(psi, alpha, eta, kappa, ecc)
    assert log_prior(p, prior) == pytest.approx(log_prior_canonical(p, prior) - log_jacobian(p, prior),
                                                abs=1e-9)


def test_prior_in_eccentricity_coordinates():
    p = KentParams.from_ecc(0.1, 1.0, 0.5, 12.0, 0.4)
    diff = log_prior(p, PriorSpec.THREE_D_KAPPA_ECC) - log_prior(p, PriorSpec.THREE_D_KAPPA_BETA)
    assert diff == pytest.approx(math.log(12.0 / 2.0))


def test_priors_normalize():
    from scipy.integrate import quad

    for prior in (PriorSpec.THREE_D_KAPPA_BETA, PriorSpec.TWO_D_KAPPA_BETA):
        def dens(k):
            # density at alpha = pi/2 times the beta range kappa/2
            return math.exp(log_prior_canonical(KentParams(0.0, 0.5 * math.pi, 0.0, k, 0.0), prior)) * 0.5 * k
        # psi over [0, pi), sin(alpha) over [0, pi] integrates to 2, eta over [0, 2 pi)
        total = quad(dens, 0, np.inf)[0] * math.pi * 2.0 * 2.0 * math.pi
        assert total == pytest.approx(1.0, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.001, 0.999), min_size=5, max_size=5))
def test_rosenblatt_round_trip(z):
    p = rosenblatt_to_params(z)
    np.testing.assert_allclose(params_to_rosenblatt(p), z, rtol=1e-9, atol=1e-12)
    assert log_prior(p, PriorSpec.TWO_D_ROSENBLATT) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.2, 2.9), st.floats(0.5, 300.0), st.floats(0.01, 0.97),
       st.sampled_from([10, 100, 5000]))
def test_first_part_coordinate_free(psi, alpha, kappa, ecc, n):
    p = KentParams.from_ecc(psi, alpha, 1.0, kappa, ecc)
    a = first_part_nats(p, n, PriorSpec.THREE_D_KAPPA_BETA)
    b = first_part_nats(p, n, PriorSpec.THREE_D_KAPPA_ECC)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)
    c = first_part_nats(p, n, PriorSpec.TWO_D_KAPPA_BETA)
    d = first_part_nats(p, n, PriorSpec.TWO_D_ROSENBLATT)
    assert c == pytest.approx(d, rel=1e-9, abs=1e-9)
    assert a >= 0.0


def test_bounded_first_part_matches_standard_when_informative():
    p = KentParams.from_ecc(0.5, 1.0, 1.0, 50.0, 0.5)
    std = first_part_nats(p, 1000, PriorSpec.THREE_D_KAPPA_BETA, bounded=False)
    assert std > 20
    assert first_part_nats(p, 1000, PriorSpec.THREE_D_KAPPA_BETA) == pytest.approx(std, rel=1e-12)


def test_uncapped_standard_form_diverges_near_vmf():
    # the raw form runs to -inf as beta -> 0; the guards keep it bounded
    vals = [first_part_nats(KentParams.from_ecc(0.5, 1.0, 1.0, 20.0, e), 50, PriorSpec.THREE_D_KAPPA_BETA,
                            bounded=False, psi_cap=False) for e in (1e-2, 1e-4)]
    assert vals[1] < vals[0] - 4
    guarded = [first_part_nats(KentParams.from_ecc(0.5, 1.0, 1.0, 20.0, e), 50, PriorSpec.THREE_D_KAPPA_BETA)
               for e in (1e-2, 1e-4)]
    assert min(guarded) > 5


def test_capped_log_det_limits():
    p = KentParams.from_ecc(0.5, 1.0, 1.0, 20.0, 0.5)
    fi = fisher_info(p, 200)
    assert capped_log_det(fi, 200, psi_cap=False) == pytest.approx(fi.log_det, rel=1e-12)
    assert capped_log_det(fi, 200) > fi.log_det
    assert fisher_info(KentParams(0.5, 1.0, 1.0, 20.0, 0.0), 10).singular


def test_lattice_constants():
    assert LATTICE_Q[1] == pytest.approx(1 / 12)
    assert LATTICE_Q[2] == pytest.approx(0.0801875, abs=1e-7)
    assert LATTICE_Q[3] == pytest.approx(0.0785433, abs=1e-7)


def test_sufficient_stats_weights_equal_replication():
    x = kent_sample(KentParams.from_ecc(0.2, 0.5, 1.0, 10.0, 0.5), 20, 1)
    w = np.arange(1, 21) % 3 + 1
    a = sufficient_stats(x, w.astype(float))
    b = sufficient_stats(np.repeat(x, w, axis=0))
    assert a.n == b.n
    np.testing.assert_allclose(a.resultant_mean, b.resultant_mean, atol=1e-14)
    np.testing.assert_allclose(a.dispersion, b.dispersion, atol=1e-14)
    with pytest.raises(ValueError):
        sufficient_stats(np.empty((0, 3)))


def test_moment_fit_solves_moment_equations():
    truth = KentParams.from_ecc(1.0, 1.2, 2.0, 25.0, 0.7)
    m = moment_fit(kent_sample(truth, 500, 3))
    assert m.converged
    t = norm_terms(m.params.kappa, m.params.beta, TIGHT)
    assert math.exp(t.log_c_k - t.log_c) == pytest.approx(m.r1, abs=1e-8)
    assert math.exp(t.log_c_b - t.log_c) == pytest.approx(m.r2, abs=1e-8)


def test_moment_recovers_truth_large_sample():
    truth = KentParams.from_ecc(1.0, 1.2, 2.0, 25.0, 0.7)
    p = moment_fit(kent_sample(truth, 100000, 4)).params
    assert p.kappa == pytest.approx(25.0, rel=0.03)
    assert p.ecc == pytest.approx(0.7, abs=0.02)
    assert p.mean @ truth.mean > 0.9999


def test_moment_on_symmetric_cap():
    n = 4000
    x = vmf_sample(VmfParams(1.0, 2.0, 10.0), n, 8)
    p = moment_fit(x).params
    assert p.beta / p.kappa < 3 / math.sqrt(n)


def test_ml_beats_moment_and_is_stationary():
    x = kent_sample(KentParams.from_ecc(0.4, 1.0, 3.0, 10.0, 0.5), 60, 5)
    mom = fit_kent(x, "moment")
    ml = ml_fit(x)
    assert ml.objective <= mom.objective + 1e-12
    polished = refine_fit(x, ml.params, "ml")
    assert polished.objective == pytest.approx(ml.objective, abs=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ml_and_mml_coordinate_invariance(seed):
    x = kent_sample(KentParams.from_ecc(0.0, 0.5 * math.pi, 0.0, 10.0, 0.5), 10, seed)
    a, b = ml_fit(x, coords="kappa_ecc").params, ml_fit(x, coords="kappa_beta").params
    assert a.kappa == pytest.approx(b.kappa, rel=1e-3)
    assert a.beta == pytest.approx(b.beta, rel=1e-3)
    c = mml_fit(x, PriorSpec.THREE_D_KAPPA_BETA).params
    d = mml_fit(x, PriorSpec.THREE_D_KAPPA_ECC).params
    assert c.kappa == pytest.approx(d.kappa, rel=1e-3)
    assert c.beta == pytest.approx(d.beta, rel=1e-3)


def test_mml_objective_is_message_length():
    x = kent_sample(KentParams.from_ecc(0.4, 1.0, 3.0, 10.0, 0.5), 40, 6)
    res = mml_fit(x)
    ml = message_length(x, res.params)
    assert ml.total_bits * LN2 == pytest.approx(res.objective, rel=1e-10)
    assert ml.total_bits == pytest.approx(ml.first_bits + ml.second_bits)
    assert ml.second_bits * LN2 == pytest.approx(negative_log_likelihood(x, res.params) + 2.5, rel=1e-10)
    # an absolute scale adds the same 2 n log2(1/eps) to every model
    abs_ml = message_length(x, res.params, precision=1e-3)
    assert abs_ml.total_bits - ml.total_bits == pytest.approx(-40 * 2 * math.log2(1e-3))


def test_mml_minimizes_message_length():
    x = kent_sample(KentParams.from_ecc(0.4, 1.0, 3.0, 10.0, 0.5), 40, 6)
    best = mml_fit(x)
    for name in ("moment", "ml", "map1"):
        other = fit_kent(x, name).params
        assert message_length(x, other).total_bits >= message_length(x, best.params).total_bits - 1e-6


def test_refine_agrees_with_simplex():
    x = kent_sample(KentParams.from_ecc(2.0, 0.7, 1.0, 30.0, 0.8), 200, 9)
    nm = mml_fit(x)
    sc = refine_fit(x, fit_kent(x, "moment").params, "mml")
    assert sc.method == "refine_mml"
    assert sc.objective == pytest.approx(nm.objective, abs=1e-6)
    assert sc.objective <= nm.objective + 1e-6


def test_mml_floor_flag_on_isotropic_cap():
    x = vmf_sample(VmfParams(1.0, 2.0, 30.0), 15, 1)
    res = mml_fit(x)
    if "beta_at_floor" in res.flags:
        assert res.params.beta == pytest.approx(1e-5 * res.params.kappa)
    assert res.params.ecc < 0.5


def test_estimator_dispatch():
    x = kent_sample(KentParams.from_ecc(0.4, 1.0, 3.0, 10.0, 0.5), 30, 7)
    for name in ESTIMATORS:
        r = fit_kent(x, name)
        assert isinstance(r.params, KentParams)
        assert r.params.kappa > 0
    with pytest.raises(ValueError):
        fit_kent(x, "bogus")


def test_map_estimates_differ_between_coordinates():
    x = kent_sample(KentParams.from_ecc(0.0, 0.5 * math.pi, 0.0, 10.0, 0.5), 10, 0)
    k1, k2 = fit_kent(x, "map1").params.kappa, fit_kent(x, "map2").params.kappa
    assert abs(k1 / k2 - 1) > 0.05


def test_rosenblatt_map_is_ml():
    # the prior is uniform in the transformed coordinates
    x = kent_sample(KentParams.from_ecc(0.0, 0.5 * math.pi, 0.0, 10.0, 0.5), 10, 0)
    a, b = fit_kent(x, "rosenblatt").params, fit_kent(x, "ml").params
    assert a.kappa == pytest.approx(b.kappa, rel=1e-4)
    assert a.beta == pytest.approx(b.beta, rel=1e-4)


def test_vmf_estimates():
    p = VmfParams(1.0, 2.0, 15.0)
    x = vmf_sample(p, 5000, 2)
    ml = vmf_ml_estimate(x)
    assert vmf_mean_resultant(ml.kappa) == pytest.approx(np.linalg.norm(x.mean(axis=0)), rel=1e-9)
    mml = vmf_mml_estimate(x)
    assert mml.kappa == pytest.approx(ml.kappa, rel=0.01)
    assert mml.mean @ ml.mean == pytest.approx(1.0)
    ml_len = vmf_message_length(x, mml).total_bits
    for k in (mml.kappa * 0.98, mml.kappa * 1.02):
        assert vmf_message_length(x, VmfParams(mml.alpha, mml.eta, k)).total_bits > ml_len


def test_vmf_first_part_orientation_free():
    a = vmf_first_part_nats(VmfParams(0.3, 1.0, 12.0), 100)
    b = vmf_first_part_nats(VmfParams(2.0, 4.0, 12.0), 100)
    assert a == pytest.approx(b, rel=1e-12)


def test_vmf_mml_at_pole():
    x = vmf_sample(VmfParams(0.0, 0.0, 20.0), 200, 3)
    assert vmf_mml_estimate(x).kappa > 10
