import math

import numpy as np
import orjson
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from netgame.errors import ConfigError, DomainError, RiccatiError, SpecValidationError
from netgame.models.schemas import RiccatiSolution
from netgame.services.model_service import (
    build_model,
    discretize,
    error_drift,
    load_spec,
    matrix_exponential,
    noise_gramian,
    parse_spec,
    validate_spec,
    weighted_gramians,
)
from netgame.services.riccati_service import solve_game_riccati
from tests.factories import decoupled_game, spec_from

SQRT17 = math.sqrt(17.0)


def _raw(**overrides) -> bytes:
    data = {
        "A": 1.5, "B1": 1, "B2": 0.5, "G": 4, "Q": 4, "R1": 1, "R2": 0.5,
        "lambda": [[25, 17], [25, 15]], "h": 0.01, "Sigma0": 0,
    }
    data.update(overrides)
    return orjson.dumps(data)


# --- ingestion ---

def test_load_example1(example1_spec):
    assert example1_spec.n == 1
    assert example1_spec.A[0, 0] == 1.5
    assert example1_spec.lam.tolist() == [[25.0, 17.0], [25.0, 15.0]]
    assert example1_spec.h == 0.01


def test_scalars_become_1x1_matrices():
    spec = parse_spec(_raw())
    assert spec.B2.shape == (1, 1)
    assert spec.Sigma0.shape == (1, 1)


def test_spec_matrices_are_read_only(example1_spec):
    with pytest.raises(ValueError):
        example1_spec.A[0, 0] = 2.0


def test_malformed_json_reports_location():
    with pytest.raises(ConfigError) as err:
        parse_spec(b'{"A": [[1.5]],\n "B1": }')
    assert err.value.exit_code == 1
    assert err.value.details["line"] == 2


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="Gamma"):
        parse_spec(_raw(Gamma=1))


def test_nonpositive_own_cost_rejected():
    with pytest.raises(ConfigError, match="lambda11"):
        parse_spec(_raw(**{"lambda": [[0, 17], [25, 15]]}))


def test_nonpositive_step_rejected():
    with pytest.raises(ConfigError, match="h"):
        parse_spec(_raw(h=0))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_spec(tmp_path / "nope.json")


# --- validation ---

def test_example_specs_validate(example1_spec, pe_spec, settings):
    assert validate_spec(example1_spec, settings).passed
    assert validate_spec(pe_spec, settings).passed


def test_r2_not_positive_definite_is_named(settings):
    report = validate_spec(parse_spec(_raw(R2=-0.5)), settings)
    assert not report.passed
    assert any("R2" in m for m in report.messages)


def test_dimension_mismatch_raises(settings):
    spec = spec_from(A=np.eye(2), B1=np.ones((3, 1)), B2=np.ones((2, 1)), G=np.eye(2), Q=np.eye(2), R1=1, R2=1)
    with pytest.raises(SpecValidationError, match="A and B1") as err:
        validate_spec(spec, settings)
    assert err.value.exit_code == 2


def test_unstabilizable_unstable_mode(settings):
    spec = spec_from(A=1.0, B1=0.0, B2=1.0, G=1.0, Q=1.0, R1=1.0, R2=1.0)
    report = validate_spec(spec, settings)
    assert not report.stabilizable
    assert "(A, B1) is not stabilizable" in report.messages


def test_unobservable_unstable_mode(settings):
    spec = spec_from(
        A=np.diag([1.0, -1.0]), B1=np.eye(2), B2=np.eye(2), G=np.eye(2),
        Q=np.diag([0.0, 1.0]), R1=np.eye(2), R2=4 * np.eye(2),
    )
    report = validate_spec(spec, settings)
    assert report.stabilizable
    assert not report.observable


def test_build_model_refuses_invalid_spec(settings):
    with pytest.raises(SpecValidationError, match="R1"):
        build_model(parse_spec(_raw(R1=[[0.0]])), settings)


# --- exponentials and integrals ---

def test_scalar_exponential():
    assert matrix_exponential(np.array([[1.5]]), 0.01)[0, 0] == pytest.approx(math.exp(0.015), rel=1e-14)


def test_exponential_rejects_non_square():
    with pytest.raises(DomainError):
        matrix_exponential(np.ones((2, 3)))


def test_noise_gramian_matches_quadrature(rng):
    F = rng.standard_normal((3, 3))
    G = rng.standard_normal((3, 2))
    h = 0.05
    ref, _ = quad_vec(lambda s: expm(F * s) @ G @ G.T @ expm(F.T * s), 0.0, h, epsabs=1e-14)
    assert np.allclose(noise_gramian(F, G, h), ref, rtol=1e-9, atol=1e-14)


def test_weighted_gramians_match_quadrature(rng):
    F = rng.standard_normal((2, 2))
    W = np.diag([1.0, -2.0])
    h = 0.1

    def single(t):
        val, _ = quad_vec(lambda u: expm(F.T * u) @ W @ expm(F * u), 0.0, t, epsabs=1e-14)
        return val

    ref_double, _ = quad_vec(single, 0.0, h, epsabs=1e-13)
    got_single, got_double = weighted_gramians(F, W, h)
    assert np.allclose(got_single, single(h), rtol=1e-9, atol=1e-13)
    assert np.allclose(got_double, ref_double, rtol=1e-7, atol=1e-12)


# --- discretization ---

def test_error_drift_example1(example1_spec, settings):
    riccati = solve_game_riccati(example1_spec, settings)
    P = 3 + SQRT17
    expected = np.array([[1.5 + 0.5 * P, -0.5 * P], [P, 1.5 - P]])
    assert np.allclose(error_drift(example1_spec, riccati), expected, atol=1e-9)
    assert np.allclose(expected, [[5.0616, -3.5616], [7.1231, -5.6231]], atol=1e-4)


def test_discretize_blocks_consistent(example1_model):
    disc, spec = example1_model.disc, example1_model.spec
    assert np.allclose(disc.Phi, expm(disc.A_bar * spec.h), rtol=1e-12)
    assert np.allclose(disc.G_tilde, noise_gramian(disc.A_bar, disc.G_bar, spec.h), rtol=1e-12)
    assert np.allclose(disc.G_bar, [[4.0], [4.0]])
    assert np.allclose(disc.Lambda_tilde, disc.Lambda_tilde.T)


def test_discretized_weights_small_step_limit(example1_model):
    disc, riccati = example1_model.disc, example1_model.riccati
    # Lambda~ -> blockdiag(Lambda1, -Lambda2) and phi(h)/h -> 0 as h -> 0
    lam = np.array([riccati.Lambda1[0, 0], -riccati.Lambda2[0, 0]])
    assert np.allclose(np.diag(disc.Lambda_tilde), lam, rtol=0.15)
    assert abs(disc.phi_over_h) < 0.1 * abs(riccati.Jstar)


def test_singular_gain_rejected(example1_spec, settings):
    riccati = RiccatiSolution(P=[[0.0]], Lambda1=[[0.0]], Lambda2=[[0.0]], Atilde=[[-1.0]], Jstar=0.0)
    with pytest.raises(RiccatiError, match="controller gain undefined"):
        discretize(example1_spec, riccati, settings)


def test_nilpotent_exponential_is_exact():
    N = np.array([[0.0, 1.0], [0.0, 0.0]])
    for t in (0.0, 0.3, -2.0):
        assert np.allclose(matrix_exponential(N, t), [[1.0, t], [0.0, 1.0]], rtol=1e-15, atol=1e-15)


def test_exponential_at_zero_time_is_identity(rng):
    assert np.allclose(matrix_exponential(rng.standard_normal((4, 4)), 0.0), np.eye(4), rtol=0.0, atol=1e-15)


def _shifted(rng, n, stable):
    F = rng.standard_normal((n, n))
    abscissa = np.linalg.eigvals(F).real.max()
    return F - (abscissa + 0.5) * np.eye(n) if stable else F - (abscissa - 0.5) * np.eye(n)


@pytest.mark.parametrize("n", [1, 3, 6])
@pytest.mark.parametrize("stable", [True, False])
def test_block_exponential_integrals_match_quadrature(rng, n, stable):
    F = _shifted(rng, n, stable)
    G = rng.standard_normal((n, 2))
    W = rng.standard_normal((n, n))
    W = W + W.T
    h = 0.05

    ref_noise, _ = quad_vec(lambda s: expm(F * s) @ G @ G.T @ expm(F.T * s), 0.0, h, epsabs=1e-15, epsrel=1e-12)
    ref_single, _ = quad_vec(lambda u: expm(F.T * u) @ W @ expm(F * u), 0.0, h, epsabs=1e-15, epsrel=1e-12)
    # the inner integral over [0, t] integrated over t is a (h - u)-weighted single integral
    ref_double, _ = quad_vec(lambda u: (h - u) * expm(F.T * u) @ W @ expm(F * u), 0.0, h, epsabs=1e-15, epsrel=1e-12)

    got_single, got_double = weighted_gramians(F, W, h)
    for got, ref in ((noise_gramian(F, G, h), ref_noise), (got_single, ref_single), (got_double, ref_double)):
        assert np.linalg.norm(got - ref) <= 1e-8 * np.linalg.norm(ref)


def test_weighted_gramians_keep_psd_weight_psd(rng):
    for n in (1, 2, 4):
        F = rng.standard_normal((n, n))
        M = rng.standard_normal((n, n))
        W = M @ M.T
        G = rng.standard_normal((n, 3))
        single, double = weighted_gramians(F, W, 0.1)
        for K in (single, double):
            assert np.linalg.eigvalsh(K).min() >= -1e-12 * np.linalg.norm(K, 2)
        assert np.trace(G.T @ double @ G) >= 0.0


def test_noise_covariance_is_psd(example1_model, pe_model, rng, settings):
    models = [example1_model, pe_model, build_model(decoupled_game(rng, 3), settings)]
    for model in models:
        Gt = model.disc.G_tilde
        assert np.linalg.eigvalsh(Gt).min() >= -1e-12 * np.linalg.norm(Gt, 2)


def test_noiseless_game_has_no_discrete_noise(settings):
    model = build_model(spec_from(A=1.5, B1=1.0, B2=0.5, G=0.0, Q=4.0, R1=1.0, R2=0.5), settings)
    assert np.array_equal(model.disc.G_tilde, np.zeros((2, 2)))
    assert model.disc.phi_over_h == 0.0


def test_discretized_weights_converge_first_order(settings):
    errors, phis = [], []
    for h in (1e-2, 1e-3, 1e-4):
        model = build_model(spec_from(A=1.5, B1=1.0, B2=0.5, G=4.0, Q=4.0, R1=1.0, R2=0.5, h=h), settings)
        riccati = model.riccati
        limit = np.diag([riccati.Lambda1[0, 0], -riccati.Lambda2[0, 0]])
        errors.append(np.linalg.norm(model.disc.Lambda_tilde - limit))
        phis.append(abs(model.disc.phi_over_h))
    for coarse, fine in ((errors[0], errors[1]), (errors[1], errors[2]), (phis[0], phis[1]), (phis[1], phis[2])):
        assert 0.05 * coarse <= fine <= 0.2 * coarse
