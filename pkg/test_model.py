import math

import numpy as np
import pytest

from errors import BoundsError, CapacityError, DimensionError, InvalidArgumentError, InvalidModelError, ParseError
from model import (
    Configuration,
    Graph,
    IsingModel,
    build_curie_weiss,
    build_model,
    build_torus_grid,
    conditional,
    configuration_index,
    dobrushin_alpha,
    enumerate_configurations,
    exact_distribution,
    influence,
    log_weight,
    parse_model_text,
)


def test_graph_rejects_bad_edges():
    with pytest.raises(InvalidModelError):
        Graph(3, [(1, 1)])
    with pytest.raises(InvalidModelError):
        Graph(3, [(0, 1), (1, 0)])
    with pytest.raises(InvalidModelError):
        Graph(3, [(0, 3)])


def test_configuration_validates_spins():
    with pytest.raises(InvalidArgumentError):
        Configuration(np.array([1, 0, -1]))
    x = Configuration([1, -1, 1])
    assert len(x) == 3
    assert -x == Configuration([-1, 1, -1])
    assert not x.spins.flags.writeable


def test_curie_weiss_weights(cw8):
    assert cw8.n == 8
    assert len(cw8.graph.edges) == 28
    assert cw8.edge_weight(0, 7) == pytest.approx(0.5 / 7)
    assert cw8.zero_field
    with pytest.raises(InvalidModelError):
        build_curie_weiss(1, 0.5)


def test_torus_grid_is_four_regular():
    m = build_torus_grid(5, 0.5)
    assert m.n == 25
    assert len(m.graph.edges) == 50
    assert set(m.degrees) == {4}
    assert m.edge_weight(0, 1) == pytest.approx(0.125)
    assert m.edge_weight(0, 4) == pytest.approx(0.125)
    with pytest.raises(InvalidModelError):
        build_torus_grid(2, 0.5)


def test_build_model_needs_square_torus():
    assert build_model('torus_grid', 196, 0.5).n == 196
    with pytest.raises(InvalidModelError):
        build_model('torus_grid', 200, 0.5)


def test_conditional_of_isolated_site(single_node):
    site = conditional(single_node, Configuration([1]), 0)
    assert site.p_plus == pytest.approx(0.5)


def test_conditional_pair(pair_model):
    site = conditional(pair_model, Configuration([1, 1]), 0)
    assert site.p_plus == pytest.approx(0.5 * (1 + math.tanh(0.5)))
    assert site.as_states() == (site.p_plus, site.p_minus)


def test_conditional_checks_inputs(pair_model):
    with pytest.raises(BoundsError):
        conditional(pair_model, Configuration([1, 1]), 2)
    with pytest.raises(DimensionError):
        conditional(pair_model, Configuration([1, 1, 1]), 0)


def _assert_conditionals_match_enumeration(model):
    dist = exact_distribution(model)
    for x in dist.configurations:
        for i in range(model.n):
            up, down = x.copy(), x.copy()
            up[i], down[i] = 1, -1
            p_up, p_down = dist.probabilities[configuration_index(np.stack([up, down]))]
            assert conditional(model, Configuration(x), i).p_plus == pytest.approx(p_up / (p_up + p_down), abs=1e-12)


def test_conditional_matches_enumeration_on_torus(grid9):
    _assert_conditionals_match_enumeration(grid9)


def test_conditional_matches_enumeration_with_fields():
    model = IsingModel(Graph(4, [(0, 1), (1, 2), (2, 3), (0, 2)]), [0.3, -0.2, 0.4, 0.1], [0.25, -0.5, 0.0, 0.1])
    _assert_conditionals_match_enumeration(model)


def test_conditional_ignores_own_spin(grid9, gen):
    for _ in range(50):
        x = Configuration.random(9, gen)
        i = int(gen.integers(9))
        flipped = x.spins.copy()
        flipped[i] = -flipped[i]
        assert conditional(grid9, x, i).p_plus == conditional(grid9, Configuration(flipped), i).p_plus


def test_zero_field_weights_are_flip_symmetric(cw8):
    dist = exact_distribution(cw8)
    for x in dist.configurations:
        assert log_weight(cw8, Configuration(x)) == pytest.approx(log_weight(cw8, Configuration(-x)))
        assert dist.probability(Configuration(x)) == pytest.approx(dist.probability(Configuration(-x)))


def test_influence_closed_form_matches_enumeration_when_residual_can_vanish(cw8):
    # node 0 has six other neighbours, so their field can sum to zero
    closed = influence(cw8, 1, 0)
    assert closed == pytest.approx(math.tanh(0.5 / 7))
    assert influence(cw8, 1, 0, exact=True) == pytest.approx(closed)


def test_influence_enumeration_below_closed_form_on_torus(grid9):
    w = 0.125
    closed = influence(grid9, 1, 0)
    exact = influence(grid9, 1, 0, exact=True)
    assert closed == pytest.approx(math.tanh(w))
    assert exact == pytest.approx(math.tanh(2 * w) / 2)
    assert exact < closed


def test_influence_of_non_neighbour_and_self(grid9):
    assert influence(grid9, 4, 0) == 0.0
    with pytest.raises(InvalidArgumentError):
        influence(grid9, 0, 0)


def test_dobrushin_alpha_below_build_parameter(cw8):
    alpha = dobrushin_alpha(cw8)
    assert alpha == pytest.approx(7 * math.tanh(0.5 / 7))
    assert alpha < 0.5


def test_enumeration_order():
    states = enumerate_configurations(2)
    assert states.tolist() == [[-1, -1], [-1, 1], [1, -1], [1, 1]]
    assert configuration_index(states).tolist() == [0, 1, 2, 3]


def test_exact_distribution_pair(pair_model):
    dist = exact_distribution(pair_model)
    z = 2 * math.exp(0.5) + 2 * math.exp(-0.5)
    assert dist.probability(Configuration([1, 1])) == pytest.approx(math.exp(0.5) / z)
    assert dist.probability(Configuration([1, -1])) == pytest.approx(math.exp(-0.5) / z)
    assert sum(dist.as_dict().values()) == pytest.approx(1.0)
    product = dist.configurations[:, 0] * dist.configurations[:, 1]
    assert dist.expectation(product) == pytest.approx(math.tanh(0.5))


def test_exact_distribution_capacity():
    with pytest.raises(CapacityError):
        exact_distribution(build_curie_weiss(12, 0.5), limit=10)


def test_log_weight(pair_model):
    assert log_weight(pair_model, Configuration([1, -1])) == pytest.approx(-0.5)


def test_parse_explicit_model():
    text = """
    # triangle
    type = explicit
    n = 3
    0 1 0.2
    1 2 0.3
    field 2 -0.1
    """
    m = parse_model_text(text)
    assert m.n == 3
    assert m.edge_weight(2, 1) == pytest.approx(0.3)
    assert m.node_weights[2] == pytest.approx(-0.1)
    assert not m.zero_field


def test_parse_preset_model():
    m = parse_model_text('type = torus_grid\nk = 4\nalpha = 0.5\n')
    assert m.n == 16


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as e:
        parse_model_text('type = explicit\nn = 2\n0 0 1.0\n', source='bad.model')
    assert e.value.line == 3
    assert e.value.path == 'bad.model'
    with pytest.raises(ParseError) as e:
        parse_model_text('type = explicit\nn = 2\n0 1 heavy\n')
    assert e.value.line == 3
