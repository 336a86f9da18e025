import math

import numpy as np
import pytest

from _factories import invertible, rng_for, spd, sym
from cone_contraction.cone import symmetrize, thompson_distance
from cone_contraction.errors import DimensionError
from cone_contraction.gauge import (GaugeFunction, SamplingPlan, audit_nonexpansiveness, build_counterexample,
                                    counterexample_closed_form, finsler_distance, gauge_eval,
                                    gauge_subgradient, necessary_condition_value, spectral_gauge)
from cone_contraction.riccati import grde_dphi, grde_phi

GAUGES = [GaugeFunction(1), GaugeFunction(1.5), GaugeFunction(2), GaugeFunction(3), GaugeFunction.sup()]


class TestGaugeFunction:
    def test_eval_examples(self):
        assert gauge_eval(GaugeFunction(2), [3, 4]) == pytest.approx(5.0)
        assert gauge_eval(GaugeFunction.sup(), [-7, 2]) == 7.0
        assert gauge_eval(GaugeFunction(1), [1, 1, 1]) == pytest.approx(3.0)

    def test_rejects_p_below_one(self):
        with pytest.raises(ValueError):
            GaugeFunction(0.5)

    def test_parse_and_json(self):
        assert GaugeFunction.parse("sup").is_sup
        assert GaugeFunction.parse(" 2 ").p == 2.0
        assert GaugeFunction.sup().to_json() == {"kind": "supNorm"}
        assert GaugeFunction(1.5).to_json() == {"kind": "pNorm", "p": 1.5}


class TestSubgradient:
    def test_examples(self):
        assert np.allclose(gauge_subgradient(GaugeFunction(2), [3, 4]), [0.6, 0.8])
        assert np.array_equal(gauge_subgradient(GaugeFunction.sup(), [1, 5]), [0, 1])

    def test_tie_and_zero_rules(self):
        assert np.array_equal(gauge_subgradient(GaugeFunction.sup(), [2, -2, 1]), [1, 0, 0])
        assert np.array_equal(gauge_subgradient(GaugeFunction(1), [0, -3, 2]), [0, -1, 1])

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            gauge_subgradient(GaugeFunction(2), [0.0, 0.0])

    @pytest.mark.parametrize("nu", GAUGES, ids=lambda g: g.name)
    def test_subgradient_properties(self, nu):
        rng = rng_for(1)
        lams = [rng.standard_normal(4) for _ in range(100)]
        mus = [gauge_subgradient(nu, lam) for lam in lams]
        for lam, mu in zip(lams, mus):
            assert np.all(mu * lam >= 0)
            assert mu @ lam == pytest.approx(nu(lam), rel=1e-12)
        for lam, mu in zip(lams, mus):
            for mu2 in mus[:20]:
                assert (mu - mu2) @ lam >= -1e-12

    @pytest.mark.parametrize("nu", GAUGES[1:4], ids=lambda g: g.name)
    def test_matches_numerical_gradient(self, nu):
        rng = rng_for(2)
        lam = rng.standard_normal(3)
        h = 1e-6
        grad = [(nu(lam + h * e) - nu(lam - h * e)) / (2 * h) for e in np.eye(3)]
        assert np.allclose(gauge_subgradient(nu, lam), grad, atol=1e-7)


class TestSpectral:
    def test_examples(self):
        assert spectral_gauge(GaugeFunction(2), np.diag([3.0, 4.0])) == pytest.approx(5.0)
        P = spd(rng_for(3), 4)
        assert spectral_gauge(GaugeFunction.sup(), P) == pytest.approx(np.max(np.abs(np.linalg.eigvals(P))))

    @pytest.mark.parametrize("nu", GAUGES, ids=lambda g: g.name)
    def test_convexity(self, nu):
        rng = rng_for(4)
        for _ in range(100):
            A, B = sym(rng, 3), sym(rng, 3)
            lhs = spectral_gauge(nu, 0.5 * A + 0.5 * B)
            assert lhs <= 0.5 * spectral_gauge(nu, A) + 0.5 * spectral_gauge(nu, B) + 1e-10


class TestFinsler:
    def test_sup_is_thompson(self):
        rng = rng_for(5)
        for _ in range(50):
            P, Q = spd(rng, 4), spd(rng, 4)
            assert finsler_distance(GaugeFunction.sup(), P, Q) == pytest.approx(thompson_distance(P, Q), abs=1e-10)

    def test_scaled_identity(self):
        assert finsler_distance(GaugeFunction(2), np.eye(2), math.e * np.eye(2)) == pytest.approx(math.sqrt(2))

    @pytest.mark.parametrize("nu", GAUGES, ids=lambda g: g.name)
    def test_symmetry_and_congruence(self, nu):
        rng = rng_for(6)
        for _ in range(30):
            P, Q, g = spd(rng, 3), spd(rng, 3), invertible(rng, 3)
            d = finsler_distance(nu, P, Q)
            assert finsler_distance(nu, Q, P) == pytest.approx(d, abs=1e-10)
            moved = finsler_distance(nu, symmetrize(g @ P @ g.T), symmetrize(g @ Q @ g.T))
            assert moved == pytest.approx(d, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            finsler_distance(GaugeFunction(2), np.eye(2), np.eye(3))


class TestCounterexample:
    def test_normalizations(self):
        e = np.array([1.0, 1.0])
        p = build_counterexample(3, 0.1, e)
        I = np.eye(3)
        assert np.abs(p.R + p.D.T @ p.D - I).max() < 1e-12
        assert np.abs(p.B.T + p.D.T @ p.C - I).max() < 1e-12
        expected = np.zeros((3, 3))
        expected[:2, :2] = np.eye(2)
        expected[:2, 2] = e
        assert np.abs(p.C - p.D - expected).max() < 1e-12
        assert np.array_equal(p.A, I) and np.array_equal(p.L, 0 * I)
        assert np.allclose(p.Q, 0.1 * I) and np.allclose(p.R, 0.1 * I)

    def test_bad_inputs(self):
        for n, eps in ((1, 0.1), (2, 0.0), (2, 1.0)):
            with pytest.raises(ValueError):
                build_counterexample(n, eps)
        with pytest.raises(DimensionError):
            build_counterexample(3, 0.1, [1.0])

    def test_zero_field_gives_zero(self):
        n = 3
        value = necessary_condition_value(lambda Z: 0 * Z, np.zeros((n, n)), np.ones(n),
                                          gauge_subgradient(GaugeFunction(2), np.ones(n)))
        assert value == 0.0

    def test_pairing_equals_symmetrized_pairing(self):
        rng = rng_for(7)
        p = build_counterexample(3, 0.2, [0.5, -1.0])
        I = np.eye(3)
        phi_I = grde_phi(p, I)
        for _ in range(20):
            lam, mu = rng.standard_normal(3), rng.standard_normal(3)
            raw = necessary_condition_value(lambda Z: grde_dphi(p, I, Z), phi_I, lam, mu)
            Z = np.diag(lam)
            sym_expr = grde_dphi(p, I, Z) - symmetrize(Z @ phi_I)
            assert raw == pytest.approx(np.trace(np.diag(mu) @ sym_expr), abs=1e-12)

    def test_closed_form_agreement(self):
        rng = rng_for(8)
        worst = 0.0
        for _ in range(200):
            n = int(rng.integers(2, 6))
            eps = float(rng.uniform(0.01, 0.99))
            e = rng.standard_normal(n - 1)
            lam, mu = rng.standard_normal(n), rng.standard_normal(n)
            p = build_counterexample(n, eps, e)
            I = np.eye(n)
            value = necessary_condition_value(lambda Z: grde_dphi(p, I, Z), grde_phi(p, I), lam, mu)
            worst = max(worst, abs(value - counterexample_closed_form(eps, e, lam, mu)))
        assert worst < 1e-9

    def test_sup_gauge_never_violates_on_fine_grid(self):
        rng = rng_for(9)
        sup = GaugeFunction.sup()
        for _ in range(300):
            n = int(rng.integers(2, 5))
            eps = float(rng.uniform(0.01, 0.99))
            e = rng.standard_normal(n - 1)
            lam = rng.standard_normal(n)
            p = build_counterexample(n, eps, e)
            I = np.eye(n)
            value = necessary_condition_value(lambda Z: grde_dphi(p, I, Z), grde_phi(p, I), lam,
                                              gauge_subgradient(sup, lam))
            assert value <= 1e-9


class TestAudit:
    def test_euclidean_violated(self):
        report = audit_nonexpansiveness(GaugeFunction(2), 2)
        assert report.violated and report.max_value > 0
        for w in report.evaluated:
            assert abs(w.value - w.closed_form) < 1e-9

    def test_one_norm_violated(self):
        assert audit_nonexpansiveness(GaugeFunction(1), 2).max_value > 0

    def test_sup_not_violated(self):
        report = audit_nonexpansiveness(GaugeFunction.sup(), 3)
        assert not report.violated and report.max_value <= 1e-9

    def test_json_shape_and_workers(self):
        plan = SamplingPlan(epsilons=(0.1, 0.3), last_lambdas=(-1.0, 0.5))
        serial = audit_nonexpansiveness(GaugeFunction(2), 2, plan)
        threaded = audit_nonexpansiveness(GaugeFunction(2), 2, plan, workers=4)
        assert serial.to_json() == threaded.to_json()
        obj = serial.to_json()
        assert set(obj) == {"gauge", "n", "witnesses", "maxValue", "maxWitness"}
        assert obj["maxWitness"]["value"] == obj["maxValue"]
        values = [w["value"] for w in obj["witnesses"]]
        assert values == sorted(values, reverse=True)

    def test_small_n_rejected(self):
        with pytest.raises(ValueError):
            audit_nonexpansiveness(GaugeFunction(2), 1)
