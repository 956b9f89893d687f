import math

import numpy as np
import pytest

from errors import (
    BoundsError,
    CapacityError,
    DomainError,
    InsufficientDataError,
    InvalidArgumentError,
    ParseError,
    ValidationError,
)
from hogwild import DelayModel, run_hogwild_batch
from model import Configuration, Graph, IsingModel, build_curie_weiss
from sampler import RngStream, mixing_budget_experiment, sample_batch_array
from stats import (
    EstimateReport,
    MultilinearFunction,
    TensorForm,
    bound_bias_degree_d,
    bound_concentration_tail,
    bound_lipschitz_bias,
    bound_marginals,
    bound_mixing_error,
    bound_variance,
    canonicalize,
    complete_bilinear,
    empirical_distribution,
    empirical_variance,
    estimate_bias,
    estimate_mean,
    evaluate,
    evaluate_many,
    exact_expectation,
    exact_report,
    expand,
    linear_sum,
    lipschitz_burn_in,
    lipschitz_constant,
    monomial,
    parse_function_text,
    polynomial_burn_in,
    quadratic_burn_in,
    total_variation,
    variance_burn_in,
)


# ================== Functions ==================

def test_complete_bilinear_values():
    assert evaluate(complete_bilinear(4), Configuration.ones(4)) == 12
    assert evaluate(complete_bilinear(2), Configuration([1, 1])) == 2
    assert evaluate(complete_bilinear(3), Configuration([1, 1, -1])) == -2
    f = complete_bilinear(5)
    assert f.degree == 2 and f.a_inf == 2.0 and len(f) == 10


def test_complete_bilinear_identity(gen):
    n = 12
    X = np.where(gen.random((10_000, n)) < 0.5, 1, -1).astype(np.int8)
    expected = X.sum(axis=1).astype(np.float64) ** 2 - n
    assert np.allclose(evaluate_many(complete_bilinear(n), X), expected)


def test_monomial_value():
    assert evaluate(monomial((0, 1)), Configuration([1, -1, 1, 1])) == -1


def test_odd_function_flips_sign(gen):
    f = MultilinearFunction({(0,): 1.5, (1, 2, 3): -0.5, (0, 2, 4): 2.0}, n=5)
    assert f.is_odd()
    for _ in range(20):
        x = Configuration(np.where(gen.random(5) < 0.5, 1, -1))
        assert evaluate(f, -x) == pytest.approx(-evaluate(f, x))


def test_mixed_degree_evaluation():
    f = MultilinearFunction({(): 1.0, (2,): 2.0, (0, 1): 3.0, (0, 1, 2): 4.0})
    x = Configuration([1, -1, -1])
    assert evaluate(f, x) == pytest.approx(1.0 - 2.0 - 3.0 + 4.0)
    assert f.n == 3 and f.degree == 3 and f.a_inf == 4.0


def test_function_validation():
    with pytest.raises(ValidationError):
        MultilinearFunction({(1, 1): 1.0})
    with pytest.raises(BoundsError):
        MultilinearFunction({(0, 5): 1.0}, n=3)
    with pytest.raises(BoundsError):
        evaluate(MultilinearFunction({(0, 5): 1.0}), Configuration.ones(3))
    assert MultilinearFunction({(2, 0): 1.0, (0, 2): 1.0}).coefficients == {(0, 2): 2.0}


def test_linear_sum():
    f = linear_sum(4, 0.5)
    assert evaluate(f, Configuration([1, 1, 1, -1])) == pytest.approx(1.0)


# ================== Tensor form ==================

def test_canonicalize_off_diagonal():
    t = TensorForm(2, {(0, 1): 0.25, (1, 0): 0.25})
    assert canonicalize(t).coefficients == {(0, 1): 0.5}


def test_canonicalize_diagonal_is_constant():
    assert canonicalize(TensorForm(2, {(1, 1): 0.7})).coefficients == {(): 0.7}


def test_canonicalize_rejects_asymmetric():
    with pytest.raises(ValidationError):
        TensorForm(2, {(0, 1): 1.0, (1, 0): 2.0})
    with pytest.raises(ValidationError):
        TensorForm(2, {(0, 1, 2): 1.0})


def test_expand_then_canonicalize_round_trip(gen):
    for d in (1, 2, 3, 4):
        for _ in range(5):
            coefficients = {}
            for size in range(d % 2, d + 1, 2):
                for _ in range(3):
                    subset = tuple(sorted(gen.choice(6, size=size, replace=False).tolist()))
                    coefficients[subset] = float(gen.normal())
            f = MultilinearFunction(coefficients, n=6)
            back = canonicalize(expand(f, d))
            assert back.coefficients.keys() == f.coefficients.keys()
            for s, a in f.coefficients.items():
                assert back.coefficients[s] == pytest.approx(a)


def test_expand_rejects_parity_mismatch():
    with pytest.raises(ValidationError):
        expand(MultilinearFunction({(0,): 1.0, (0, 1): 1.0}), 2)


# ================== Oracles and estimators ==================

def test_exact_expectation_pair(pair_model):
    assert exact_expectation(pair_model, monomial((0, 1))) == pytest.approx(0.462117, abs=1e-6)


def test_exact_report_pair(pair_model):
    report = exact_report(pair_model, monomial((0, 1)))
    assert report.mean == pytest.approx(math.tanh(0.5))
    assert (report.method, report.count, report.stderr) == ('exact', 0, 0.0)


def test_exact_expectation_odd_is_zero(cw8):
    assert exact_expectation(cw8, MultilinearFunction({(0, 3, 5): 1.0, (2,): 1.0}, n=8)) == pytest.approx(0.0, abs=1e-12)


def test_exact_expectation_edgeless():
    model = IsingModel(Graph(5, []), [])
    assert exact_expectation(model, complete_bilinear(5)) == pytest.approx(0.0, abs=1e-12)


def test_exact_expectation_capacity():
    with pytest.raises(CapacityError):
        exact_expectation(build_curie_weiss(25, 0.5), linear_sum(25))


def test_estimate_mean_constant():
    f = MultilinearFunction({(): 3.0}, n=2)
    report = estimate_mean(f, [Configuration([1, 1]), Configuration([-1, 1]), Configuration([1, -1])])
    assert report.mean == 3.0 and report.stderr == 0.0 and report.count == 3


def test_estimate_mean_needs_two_samples():
    with pytest.raises(InsufficientDataError):
        estimate_mean(linear_sum(2), [Configuration([1, 1])])
    with pytest.raises(InsufficientDataError):
        empirical_variance(linear_sum(2), [])


def test_duplicated_samples_shrink_stderr(gen):
    X = np.where(gen.random((1000, 4)) < 0.5, 1, -1).astype(np.int8)
    f = complete_bilinear(4)
    single = estimate_mean(f, X)
    double = estimate_mean(f, np.concatenate([X, X]))
    assert double.mean == pytest.approx(single.mean)
    assert single.stderr / double.stderr == pytest.approx(math.sqrt(2), rel=1e-3)


def test_estimate_report_validation():
    with pytest.raises(InvalidArgumentError):
        EstimateReport(0.0, -1.0, 5, 'sequential')
    with pytest.raises(InvalidArgumentError):
        EstimateReport(0.0, 0.0, 5, 'guess')
    assert EstimateReport(0.0, 0.0, 0, 'exact').count == 0


def test_sequential_estimate_matches_oracle(cw8):
    f = monomial((0, 1), n=8)
    samples = sample_batch_array(cw8, 5000, mixing_budget_experiment(8), RngStream(31))
    report = estimate_mean(f, samples)
    assert abs(report.mean - exact_expectation(cw8, f)) <= 4 * report.stderr


def test_single_spin_variance(single_node):
    samples = sample_batch_array(single_node, 5000, 2, RngStream(32))
    assert empirical_variance(linear_sum(1), samples) == pytest.approx(1.0, abs=0.01)
    assert empirical_variance(MultilinearFunction({(): 2.0}, n=1), samples) == 0.0


def test_bias_with_zero_delays(cw8):
    report = estimate_bias(cw8, complete_bilinear(8), DelayModel.constant(0), 2000, 2000, 240, RngStream(33))
    assert report.bias <= 4 * report.stderr + 1e-12
    assert report.errbar == pytest.approx(report.sequential.stdev / math.sqrt(8))
    assert report.sequential.method == 'sequential' and report.hogwild.method == 'hogwild-sim'


def test_linear_statistic_unbiased_under_delays(cw8):
    report = estimate_bias(cw8, linear_sum(8), DelayModel.geometric_with_mean(4.0), 2000, 2000, 240, RngStream(34))
    assert abs(report.hogwild.mean) <= 4 * report.hogwild.stderr


@pytest.mark.slow
def test_linear_statistic_unbiased_cw100():
    model = build_curie_weiss(100, 0.5)
    samples = run_hogwild_batch(model, 5000, mixing_budget_experiment(100), DelayModel.geometric_with_mean(4.0),
                                RngStream(107))
    report = estimate_mean(linear_sum(100), samples, 'hogwild-sim')
    assert abs(report.mean) <= 3 * report.stderr


# ================== Distributions ==================

def test_empirical_distribution_and_tv():
    X = np.array([[1, 1], [1, 1], [-1, 1], [-1, -1]], dtype=np.int8)
    freq = empirical_distribution(X)
    assert freq.tolist() == [0.25, 0.25, 0.0, 0.5]
    assert total_variation(freq, np.full(4, 0.25)) == pytest.approx(0.25)


# ================== Bounds ==================

def test_bound_mixing_error():
    assert bound_mixing_error(2.0, 10, 0.5, 0) == 20.0
    assert bound_mixing_error(0.0, 10, 0.5, 100) == 0.0
    n, alpha, eps = 50, 0.5, 0.01
    t = n * math.log(n / eps) / (1 - alpha)
    assert bound_mixing_error(3.0, n, alpha, t) <= 3.0 * eps * (1 + 1e-9)
    with pytest.raises(DomainError):
        bound_mixing_error(1.0, 10, 1.0, 5)


def test_lipschitz_constant():
    assert lipschitz_constant(complete_bilinear(6)) == pytest.approx(20.0)
    assert lipschitz_constant(linear_sum(5, 3.0)) == pytest.approx(6.0)
    assert lipschitz_constant(monomial((0, 1, 2), -0.5, n=4)) == pytest.approx(1.0)
    assert lipschitz_constant(MultilinearFunction({(): 3.0}, n=2)) == 0.0


def test_lipschitz_constant_bounds_differences(gen):
    f = MultilinearFunction({(0, 1): 1.5, (1, 2, 3): -0.5, (2,): 2.0, (0, 3): 0.25}, n=4)
    K = lipschitz_constant(f)
    for _ in range(200):
        x = Configuration.random(4, gen)
        y = Configuration.random(4, gen)
        distance = int(np.count_nonzero(x.spins != y.spins))
        assert abs(evaluate(f, x) - evaluate(f, y)) <= K * distance + 1e-12


def test_bound_lipschitz_bias():
    assert bound_lipschitz_bias(0.0, 2, 4, 0.5, 100) == 0.0
    assert bound_lipschitz_bias(2.0, 1, 4, 0.5, 100) == pytest.approx(2 * (4 * math.log(100) + 1))


def test_bound_concentration_tail():
    assert bound_concentration_tail(1.0, 2, 0.5, 100, 0.0) == 2.0
    values = [bound_concentration_tail(1.0, 2, 0.5, 100, t, c=8) for t in (0, 10, 50, 100, 500)]
    assert all(a > b for a, b in zip(values, values[1:]))
    with pytest.raises(DomainError):
        bound_concentration_tail(1.0, 2, 1.2, 100, 1.0)


def test_bound_marginals():
    assert bound_marginals(1.0, 100, 2, 0.5) == pytest.approx(14736.5, rel=1e-5)
    assert bound_marginals(1.0, 100, 4, 0.5) > bound_marginals(1.0, 100, 2, 0.5)
    assert abs(exact_expectation(build_curie_weiss(10, 0.5), complete_bilinear(10))) <= bound_marginals(2.0, 10, 2, 0.5)


def test_bound_bias_degree_d():
    assert bound_bias_degree_d(1.0, 2, 0, 0.5, 100) == 0.0
    ratio = bound_bias_degree_d(1.0, 2, 4, 0.5, 400) / bound_bias_degree_d(1.0, 2, 4, 0.5, 100)
    assert ratio == pytest.approx(2.968, abs=1e-3)
    assert bound_bias_degree_d(1.0, 3, 4, 0.5, 100) == pytest.approx(100 * math.log(100))


def test_bounds_monotone_in_n_and_tau():
    assert bound_bias_degree_d(1.0, 2, 4, 0.5, 200) > bound_bias_degree_d(1.0, 2, 4, 0.5, 100)
    assert bound_bias_degree_d(1.0, 2, 5, 0.5, 100) > bound_bias_degree_d(1.0, 2, 4, 0.5, 100)
    assert bound_variance(2.0, 2, 20) > bound_variance(2.0, 2, 10)
    assert bound_variance(2.0, 2, 10, constant=3.0) == pytest.approx(4 * 3 * 100)


def test_burn_in_rules():
    assert polynomial_burn_in(100, 0.5, 2) == math.ceil(600 * math.log(100))
    assert variance_burn_in(100, 0.5, 2) == math.ceil(600 * math.log(100 ** 2))
    assert quadratic_burn_in(2.0, 100, 0.5) == math.ceil(1200 * math.log(400))
    assert lipschitz_burn_in(1.0, 2.0, 100, 0.5) == math.ceil(200 * math.log(100))


# ================== Function files ==================

def test_parse_function_text():
    f = parse_function_text('# pair plus field\nn = 4\n0 1 2.0\n3 -1.0\n0.5\n')
    assert f.n == 4
    assert f.coefficients == {(): 0.5, (3,): -1.0, (0, 1): 2.0}


def test_parse_function_errors():
    with pytest.raises(ParseError) as e:
        parse_function_text('0 1 x\n', source='f.fn')
    assert e.value.line == 1
    with pytest.raises(ParseError):
        parse_function_text('1 1 2.0\n')
