import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forlion.design import Design, information_matrix, log_det
from forlion.errors import SingularStart
from forlion.glm import GlmSpec
from forlion.liftone import (WeightProfile, alpha_new_point, alpha_new_point_log,
                             golden_section_max, liftone_general, liftone_glm, log_objective)
from forlion.mlm import MlmSpec

from conftest import house_flies_model, solved


def random_glm_instance(seed, m=6):
    r = np.random.default_rng(seed)
    g = GlmSpec(["1", "x1", "x2", "x1*x2"], r.normal(scale=0.8, size=4),
                ["logit", "probit", "cloglog"][seed % 3], d=2)
    pts = r.uniform(-2, 2, size=(m, 2))
    w = r.dirichlet(np.ones(m))
    return g, pts, w


def path_weights(w, i, z):
    v = np.array(w, dtype=float)
    v[i] = 0.0
    v = v / v.sum() * (1 - z)
    v[i] = z
    return v


class TestAlpha:
    def test_examples(self):
        assert alpha_new_point(1.0, 1.0, 2) == pytest.approx(0.25)
        assert alpha_new_point(3.0, 8.0, 2) == 0.0  # 2^p d = (p+1) b
        assert alpha_new_point(0.0, 1.0, 3) == 0.0

    def test_log_form_agrees(self):
        assert alpha_new_point_log(math.log(3.0), math.log(2.0), 4) == pytest.approx(
            alpha_new_point(3.0, 2.0, 4))
        assert alpha_new_point_log(-math.inf, 0.0, 4) == 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_beats_grid(self, seed):
        g, pts, w = random_glm_instance(seed)
        r = np.random.default_rng(1000 + seed)
        x_new = r.uniform(-2, 2, size=2)
        F_t = information_matrix(Design(pts, w), g)
        F_x = g.fisher_at_point(x_new)
        p = g.p

        def logf(alpha):
            return log_det((1 - alpha) * F_t + alpha * F_x)

        a = alpha_new_point_log(logf(0.5), logf(0.0), p)
        grid = max(logf(al) for al in np.arange(0, 1, 1e-3))
        assert logf(a) >= grid - 1e-10


class TestProfile:
    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 50), st.floats(1e-3, 5), st.integers(1, 8))
    def test_analytic_argmax_matches_golden(self, a, b, p):
        prof = WeightProfile(a, b, p)
        z_star = prof.argmax()
        z_gold, _ = golden_section_max(lambda z: float(prof.value(z)), 0.0, 1.0 - 1e-15)
        assert prof.value(z_star) >= prof.value(z_gold) - 1e-12 * max(1.0, prof.value(z_gold))
        if a <= b * p:
            assert z_star == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_glm_profile_is_polynomial(self, seed):
        g, pts, w = random_glm_instance(seed)
        Fs = g.fisher_batch(pts)
        i = seed % len(w)
        logf = [log_objective(Fs, path_weights(w, i, z)) for z in (0.0, 0.5)]
        prof = WeightProfile.from_log_values(logf[0], logf[1], g.p)
        for z in np.linspace(0, 1, 11)[:-1]:
            actual = math.exp(log_objective(Fs, path_weights(w, i, z)) - logf[1])
            assert prof.value(z) == pytest.approx(actual, rel=1e-9)


class TestLiftOneGlm:
    @pytest.mark.parametrize("seed", range(20))
    def test_analytic_matches_general(self, seed):
        g, pts, w = random_glm_instance(seed)
        Fs = g.fisher_batch(pts)
        a = log_objective(Fs, liftone_glm(pts, w, g, 1e-12))
        b = log_objective(Fs, liftone_general(pts, w, g, 1e-12))
        assert a == pytest.approx(b, abs=1e-6)

    def test_p_points_get_uniform(self, rng):
        g = GlmSpec(["1", "x1", "x2", "x1*x2"], [0.5, -1, 0.3, 0.2], "probit", d=2)
        pts = rng.uniform(-1, 1, size=(4, 2))
        w = liftone_glm(pts, np.array([0.7, 0.1, 0.1, 0.1]), g, 1e-12)
        np.testing.assert_allclose(w, 0.25, atol=1e-8)

    def test_useless_point_zeroed_exactly(self):
        g = GlmSpec(["1", "x1"], [0, 0], "logit", d=1)
        pts = np.array([[-1.0], [0.1], [1.0]])
        w = liftone_glm(pts, np.full(3, 1 / 3), g, 1e-12)
        assert w[1] == 0.0
        Fs = g.fisher_batch(pts)
        # grid oracle along the allocation path of the middle point
        values = [log_objective(Fs, path_weights(w, 1, z)) for z in np.arange(0, 1, 1e-4)]
        assert int(np.argmax(values)) == 0

    def test_singular_start(self):
        g = GlmSpec(["1", "x1"], [0, 0], "logit", d=1)
        with pytest.raises(SingularStart):
            liftone_glm(np.array([[0.0], [1.0]]), np.array([1.0, 0.0]), g, 1e-10)

    def test_rejects_bad_eps(self):
        g, pts, w = random_glm_instance(0)
        with pytest.raises(ValueError):
            liftone_glm(pts, w, g, 0.0)


class TestInvariants:
    @pytest.mark.parametrize("seed", range(6))
    def test_monotone_and_on_simplex(self, seed):
        g, pts, w = random_glm_instance(seed, m=8)
        Fs = g.fisher_batch(pts)
        previous = log_objective(Fs, w)
        for sweeps in range(1, 6):
            out = liftone_general(pts, w, g, 1e-14, max_sweeps=sweeps)
            assert np.all(out >= 0)
            assert out.sum() == pytest.approx(1.0, abs=1e-14)
            value = log_objective(Fs, out)
            assert value >= previous - 1e-12
            previous = value

    @pytest.mark.parametrize("seed", range(6))
    def test_fixed_point_is_coordinatewise_optimal(self, seed):
        g, pts, w = random_glm_instance(seed, m=7)
        Fs = g.fisher_batch(pts)
        eps = 1e-10
        w = liftone_glm(pts, w, g, eps)
        base = log_objective(Fs, w)
        for i in range(len(w)):
            for z in (w[i] - 1e-4, w[i] + 1e-4):
                if 0 <= z < 1:
                    assert log_objective(Fs, path_weights(w, i, z)) <= base + eps


class TestLiftOneGeneral:
    def test_optimal_weights_unchanged(self):
        _, report = solved("house_flies")
        d = report.design
        w = liftone_general(d.points, d.weights, house_flies_model(), 1e-12)
        np.testing.assert_allclose(w, d.weights, atol=1e-6)

    def test_single_full_rank_point(self):
        m = MlmSpec(3, "baseline-category", [["x1"], ["x1"]], [], [0.2, -0.4], d=1)
        w = liftone_general(np.array([[1.0]]), np.array([1.0]), m, 1e-10)
        assert w[0] == 1.0
        assert log_objective(m.fisher_batch(np.array([[1.0]])), w) > -math.inf

    def test_blend_path_from_full_weight(self):
        # every point alone has rank-p information, and all mass starts on one of them
        m = MlmSpec(3, "continuation-ratio", [["x1"], ["x1"]], [], [0.2, -0.4], d=1)
        pts = np.array([[0.5], [1.0], [2.0]])
        w = liftone_general(pts, np.array([1.0, 0.0, 0.0]), m, 1e-12)
        Fs = m.fisher_batch(pts)
        assert log_objective(Fs, w) > log_objective(Fs, np.array([1.0, 0.0, 0.0]))
        assert w.sum() == pytest.approx(1.0, abs=1e-14)

    def test_house_flies_from_uniform(self, hf_model):
        pts = np.array([[80.0], [100.0], [122.78], [140.0], [157.37], [200.0]])
        w = liftone_general(pts, np.full(6, 1 / 6), hf_model, 1e-12)
        Fs = hf_model.fisher_batch(pts)
        assert log_objective(Fs, w) > log_objective(Fs, np.full(6, 1 / 6))
        # the three optimal support points should carry essentially all the mass
        assert w[[0, 2, 4]].sum() > 0.95
