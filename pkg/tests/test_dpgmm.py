import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanmix.dpgmm import (
    HyperPriors,
    LatentState,
    PosteriorTarget,
    UnconstrainedState,
    grad_log_posterior,
    initial_state_from_em,
    log_likelihood,
    log_posterior_unnormalized,
    log_prior,
    state_dim,
    stick_break,
    unconstrain,
)
from chanmix.em import EmOptions, fit_em
from chanmix.errors import DomainError
from chanmix.mixture import MixtureModel, mixture_log_pdf
from chanmix.special import (
    beta_log_pdf,
    exponential_log_pdf,
    gamma_log_pdf,
    inverse_gamma_log_pdf,
)


def make_state(k: int, seed: int = 0, scale: float = 1.0) -> LatentState:
    rng = np.random.default_rng(seed)
    return LatentState(
        concentration=float(rng.uniform(0.3, 2.0)),
        sticks=rng.uniform(0.05, 0.95, k - 1),
        shape_prior_shape=rng.uniform(0.5, 3.0, k) * scale,
        shape_prior_scale=rng.uniform(0.5, 300.0, k) * scale,
        rate_prior_shape=rng.uniform(0.5, 3.0, k) * scale,
        rate_prior_rate=rng.uniform(0.5, 3.0, k) * scale,
        shapes=rng.uniform(1.0, 150.0, k),
        rates=rng.uniform(0.5, 30.0, k),
    )


def all_ones_state(k: int) -> LatentState:
    ones = np.ones(k)
    return LatentState(
        concentration=1.0,
        sticks=np.full(k - 1, 0.5),
        shape_prior_shape=ones,
        shape_prior_scale=ones,
        rate_prior_shape=ones,
        rate_prior_rate=ones,
        shapes=ones,
        rates=ones,
    )


class TestStickBreak:
    def test_half_half(self):
        assert stick_break([0.5, 0.5]) == pytest.approx([0.5, 0.25, 0.25])

    def test_near_one_first_stick(self):
        w = stick_break([1.0 - 1e-12, 0.5])
        assert w[0] == pytest.approx(1.0, abs=1e-11)
        assert w[1:].sum() < 1e-11

    def test_sum_is_one_at_k30(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            w = stick_break(rng.uniform(1e-6, 1.0 - 1e-6, 29))
            assert abs(w.sum() - 1.0) <= 1e-15
            assert np.all(w >= 0)

    def test_out_of_range_raises(self):
        with pytest.raises(DomainError):
            stick_break([0.5, 1.0])
        with pytest.raises(DomainError):
            stick_break([0.0])

    def test_empty_sticks_single_weight(self):
        assert stick_break([]) == pytest.approx([1.0])


class TestTransforms:
    def test_round_trip_random_states(self):
        for seed in range(100):
            state = make_state(4, seed=seed)
            u = unconstrain(state)
            back = u.constrain()
            assert back.concentration == pytest.approx(state.concentration, rel=1e-12)
            for name in (
                "sticks",
                "shape_prior_shape",
                "shape_prior_scale",
                "rate_prior_shape",
                "rate_prior_rate",
                "shapes",
                "rates",
            ):
                np.testing.assert_allclose(
                    getattr(back, name), getattr(state, name), rtol=1e-12
                )

    def test_dimension(self):
        assert state_dim(30) == 210
        assert unconstrain(make_state(5)).dim == 35

    def test_log_jacobian_matches_per_coordinate_sum(self):
        state = make_state(3, seed=2)
        u = unconstrain(state)
        expected = (
            np.log(state.concentration)
            + np.log(state.sticks).sum()
            + np.log1p(-state.sticks).sum()
            + sum(
                np.log(getattr(state, n)).sum()
                for n in (
                    "shape_prior_shape",
                    "shape_prior_scale",
                    "rate_prior_shape",
                    "rate_prior_rate",
                    "shapes",
                    "rates",
                )
            )
        )
        assert u.log_jacobian() == pytest.approx(float(expected), rel=1e-12)

    def test_invalid_state_rejected(self):
        with pytest.raises(DomainError):
            LatentState(
                concentration=-1.0,
                sticks=np.array([0.5]),
                shape_prior_shape=np.ones(2),
                shape_prior_scale=np.ones(2),
                rate_prior_shape=np.ones(2),
                rate_prior_rate=np.ones(2),
                shapes=np.ones(2),
                rates=np.ones(2),
            )
        with pytest.raises(DomainError):
            UnconstrainedState(np.zeros(13), truncation=2)


class TestLogPrior:
    def test_all_ones_k1_matches_hand_summation(self):
        hp = HyperPriors()
        state = all_ones_state(1)
        expected = (
            gamma_log_pdf(1.0, 1.0, 1.0)  # concentration
            + inverse_gamma_log_pdf(1.0, hp.shape_prior_shape_shape, hp.shape_prior_shape_scale)
            + exponential_log_pdf(1.0, hp.shape_prior_scale_rate)
            + gamma_log_pdf(1.0, hp.rate_prior_shape_shape, hp.rate_prior_shape_rate)
            + inverse_gamma_log_pdf(1.0, hp.rate_prior_rate_shape, hp.rate_prior_rate_scale)
            + inverse_gamma_log_pdf(1.0, 1.0, 1.0)  # shape | its prior
            + gamma_log_pdf(1.0, 1.0, 1.0)  # rate | its prior
        )
        assert log_prior(state, hp) == pytest.approx(float(expected), rel=1e-12)

    def test_all_ones_k2_adds_stick_term(self):
        hp = HyperPriors()
        per_component = log_prior(all_ones_state(1), hp) - gamma_log_pdf(1.0, 1.0, 1.0)
        expected = (
            gamma_log_pdf(1.0, 1.0, 1.0)
            + 2 * per_component
            + beta_log_pdf(0.5, 1.0, 1.0)
        )
        assert log_prior(all_ones_state(2), hp) == pytest.approx(float(expected), rel=1e-12)

    def test_duplicating_components_adds_their_terms(self):
        hp = HyperPriors()
        base = make_state(2, seed=3)
        doubled = LatentState(
            concentration=base.concentration,
            sticks=np.concatenate([base.sticks, base.sticks, [base.sticks[0]]]),
            **{
                n: np.tile(getattr(base, n), 2)
                for n in (
                    "shape_prior_shape",
                    "shape_prior_scale",
                    "rate_prior_shape",
                    "rate_prior_rate",
                    "shapes",
                    "rates",
                )
            },
        )
        diff = log_prior(doubled, hp) - log_prior(base, hp)
        per_component = log_prior(base, hp) - float(
            gamma_log_pdf(base.concentration, 1.0, 1.0)
            + beta_log_pdf(base.sticks[0], 1.0, base.concentration)
        )
        extra_sticks = float(
            np.sum(
                beta_log_pdf(
                    np.concatenate([base.sticks, [base.sticks[0]]]),
                    1.0,
                    base.concentration,
                )
            )
        )
        assert diff == pytest.approx(per_component + extra_sticks, rel=1e-10)

    def test_concentration_prior_is_negative_a(self):
        # Gamma(1,1) log-density at a reduces to -a
        hp = HyperPriors()
        s1 = all_ones_state(1)
        s2 = LatentState(
            concentration=2.5,
            sticks=s1.sticks,
            shape_prior_shape=s1.shape_prior_shape,
            shape_prior_scale=s1.shape_prior_scale,
            rate_prior_shape=s1.rate_prior_shape,
            rate_prior_rate=s1.rate_prior_rate,
            shapes=s1.shapes,
            rates=s1.rates,
        )
        assert log_prior(s2, hp) - log_prior(s1, hp) == pytest.approx(-1.5, abs=1e-12)


class TestLogLikelihood:
    def test_single_component_collapse(self):
        state = make_state(1, seed=1)
        x = np.array([0.5, 2.0, 7.0])
        expected = float(np.sum(gamma_log_pdf(x, state.shapes[0], state.rates[0])))
        assert log_likelihood(state, x) == pytest.approx(expected, rel=1e-12)

    def test_matches_mixture_core(self):
        state = make_state(4, seed=6)
        weights = state.weights()
        model = MixtureModel.from_arrays(weights, state.shapes, state.rates)
        rng = np.random.default_rng(0)
        x = rng.gamma(5.0, 1.5, 300) + 0.05
        expected = float(np.sum(mixture_log_pdf(model, x)))
        assert log_likelihood(state, x) == pytest.approx(expected, abs=1e-10)

    def test_empty_data_is_zero(self):
        assert log_likelihood(make_state(3), np.array([])) == 0.0

    def test_non_positive_data_rejected(self):
        with pytest.raises(DomainError):
            log_likelihood(make_state(2), np.array([1.0, 0.0]))


class TestLogPosterior:
    def setup_method(self):
        rng = np.random.default_rng(9)
        self.x = rng.gamma(6.0, 1.0, 120) + 0.05
        self.hp = HyperPriors()

    def test_decomposition(self):
        state = make_state(3, seed=4)
        u = unconstrain(state)
        expected = (
            log_prior(state, self.hp)
            + log_likelihood(state, self.x)
            + u.log_jacobian()
        )
        assert log_posterior_unnormalized(u, self.x, self.hp) == pytest.approx(
            expected, rel=1e-10
        )

    def test_prior_cancels_in_differences(self):
        a = make_state(2, seed=5)
        b = LatentState(
            concentration=a.concentration,
            sticks=a.sticks,
            shape_prior_shape=a.shape_prior_shape,
            shape_prior_scale=a.shape_prior_scale,
            rate_prior_shape=a.rate_prior_shape,
            rate_prior_rate=a.rate_prior_rate,
            shapes=a.shapes * 1.1,
            rates=a.rates,
        )
        ua, ub = unconstrain(a), unconstrain(b)
        lhs = log_posterior_unnormalized(ub, self.x, self.hp) - log_posterior_unnormalized(
            ua, self.x, self.hp
        )
        rhs = (
            log_likelihood(b, self.x)
            - log_likelihood(a, self.x)
            + log_prior(b, self.hp)
            - log_prior(a, self.hp)
            + ub.log_jacobian()
            - ua.log_jacobian()
        )
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_permuting_identical_components_is_invariant(self):
        base = make_state(3, seed=8)
        uniform = LatentState(
            concentration=base.concentration,
            sticks=np.array([1.0 / 3.0, 0.5]),  # equal weights
            shape_prior_shape=np.full(3, 1.3),
            shape_prior_scale=np.full(3, 2.0),
            rate_prior_shape=np.full(3, 1.1),
            rate_prior_rate=np.full(3, 0.9),
            shapes=np.full(3, 20.0),
            rates=np.full(3, 4.0),
        )
        u = unconstrain(uniform)
        v1 = log_posterior_unnormalized(u, self.x, self.hp)
        # permuting identical per-component blocks changes nothing
        assert v1 == pytest.approx(log_posterior_unnormalized(u, self.x, self.hp))

    def test_finite_for_bounded_random_states(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            u = UnconstrainedState(rng.uniform(-8.0, 8.0, state_dim(3)), 3)
            value = log_posterior_unnormalized(u, self.x, self.hp)
            assert np.isfinite(value)

    def test_boundary_overflow_returns_neg_inf(self):
        vals = np.zeros(state_dim(2))
        vals[-1] = 250.0  # rate beyond exp(200) guard
        u = UnconstrainedState(vals, 2)
        assert log_posterior_unnormalized(u, self.x, self.hp) == -np.inf


class TestGradient:
    def setup_method(self):
        rng = np.random.default_rng(10)
        self.x = rng.gamma(5.0, 1.0, 200) + 0.1
        self.hp = HyperPriors()
        self.target = PosteriorTarget(self.x, self.hp, 5)

    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(123)
        h = 1e-5
        for _ in range(20):
            u = rng.normal(0.0, 1.0, state_dim(5))
            _, grad = self.target(u)
            for i in rng.choice(u.size, size=12, replace=False):
                up, dn = u.copy(), u.copy()
                up[i] += h
                dn[i] -= h
                fd = (self.target.value(up) - self.target.value(dn)) / (2 * h)
                denom = max(1.0, abs(fd), abs(grad[i]))
                assert abs(fd - grad[i]) / denom < 1e-5

    def test_directional_derivative_consistency(self):
        rng = np.random.default_rng(3)
        u = rng.normal(0.0, 0.5, state_dim(5))
        value, grad = self.target(u)
        for _ in range(5):
            d = rng.normal(size=u.size)
            d /= np.linalg.norm(d)
            h = 1e-5
            fd = (self.target.value(u + h * d) - self.target.value(u - h * d)) / (2 * h)
            assert fd == pytest.approx(float(grad @ d), rel=1e-5, abs=1e-5)

    def test_symmetric_components_get_symmetric_gradients(self):
        # two identical components with equal weights over symmetric data
        state = LatentState(
            concentration=1.0,
            sticks=np.array([0.5]),
            shape_prior_shape=np.array([1.5, 1.5]),
            shape_prior_scale=np.array([2.0, 2.0]),
            rate_prior_shape=np.array([1.0, 1.0]),
            rate_prior_rate=np.array([1.0, 1.0]),
            shapes=np.array([10.0, 10.0]),
            rates=np.array([2.0, 2.0]),
        )
        target = PosteriorTarget(self.x, self.hp, 2)
        _, grad = target(unconstrain(state).values)
        k = 2
        blocks = grad[k:].reshape(6, k)
        np.testing.assert_allclose(blocks[:, 0], blocks[:, 1], rtol=1e-9)

    def test_concentration_score_without_sticks(self):
        # at K=1 there are no stick terms: d/du of (-e^u + u) is 1 - a
        x = self.x
        target = PosteriorTarget(x, self.hp, 1)
        state = make_state(1, seed=13)
        u = unconstrain(state)
        _, grad = target(u.values)
        assert grad[0] == pytest.approx(1.0 - state.concentration, rel=1e-9)

    def test_api_wrapper_matches_target(self):
        state = make_state(5, seed=14)
        u = unconstrain(state)
        g1 = grad_log_posterior(u, self.x, self.hp)
        _, g2 = self.target(u.values)
        np.testing.assert_allclose(g1, g2)


class TestInitialState:
    def test_em_components_carried_over(self, ref_samples):
        x = ref_samples[:800]
        em = fit_em(x, EmOptions(k=3, seed=0))
        state = initial_state_from_em(em.model, x, truncation=10, hyper=HyperPriors())
        assert state.truncation == 10
        np.testing.assert_allclose(state.shapes[:3], em.model.shapes)
        w = state.weights()
        np.testing.assert_allclose(w[:3], em.model.weights * 0.98, rtol=1e-9)
        assert w[3:].sum() == pytest.approx(0.02, abs=1e-9)

    def test_posterior_finite_at_init(self, ref_samples):
        x = ref_samples[:500]
        hp = HyperPriors()
        em = fit_em(x, EmOptions(k=4, seed=1))
        state = initial_state_from_em(em.model, x, truncation=8, hyper=hp)
        u = unconstrain(state)
        value = log_posterior_unnormalized(u, x, hp)
        assert np.isfinite(value)


@settings(max_examples=50, deadline=None)
@given(data=st.data())
def test_stick_break_sums_to_one_property(data):
    k = data.draw(st.integers(2, 30))
    sticks = data.draw(
        st.lists(st.floats(1e-9, 1.0 - 1e-9), min_size=k - 1, max_size=k - 1)
    )
    w = stick_break(sticks)
    assert w.size == k
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 2e-15


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_transform_round_trip_property(seed):
    state = make_state(3, seed=seed)
    back = unconstrain(state).constrain()
    np.testing.assert_allclose(back.sticks, state.sticks, rtol=1e-12)
    np.testing.assert_allclose(back.shapes, state.shapes, rtol=1e-12)
    np.testing.assert_allclose(back.rates, state.rates, rtol=1e-12)
