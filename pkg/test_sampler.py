import numpy as np
import pandas as pd
import pytest

from errors import DomainError, InvalidArgumentError
from model import Configuration, build_curie_weiss, exact_distribution
from sampler import (
    ChainState,
    RngStream,
    gibbs_step,
    mixing_budget_experiment,
    mixing_budget_theory,
    pick_site,
    run_sequential,
    sample_batch,
    sample_batch_array,
    sample_thinned,
    write_trajectory_csv,
)
from stats import tv_to_exact


def test_rng_stream_needs_seed():
    with pytest.raises(InvalidArgumentError):
        RngStream(None)


def test_rng_stream_channels_are_distinct():
    rng = RngStream(5)
    assert rng.spins.random() != rng.delays.random()
    assert RngStream(5).spins.random(3).tolist() == RngStream(5).spins.random(3).tolist()
    assert RngStream(5).child(0).spins.random() != RngStream(5).child(1).spins.random()


def test_pick_site_never_returns_n():
    assert pick_site(0.0, 5) == 0
    assert pick_site(np.nextafter(1.0, 0.0), 3) == 2
    assert pick_site(0.5, 4) == 2


def test_gibbs_step_changes_at_most_one_site(cw8):
    state = ChainState(Configuration.ones(8))
    i, nxt = gibbs_step(cw8, state, RngStream(1))
    assert nxt.step == 1
    changed = np.flatnonzero(nxt.config.spins != state.config.spins)
    assert set(changed.tolist()) <= {i}


def test_zero_steps_returns_init(cw8):
    init = Configuration.ones(8)
    assert run_sequential(cw8, 0, init, RngStream(3)).config == init
    with pytest.raises(InvalidArgumentError):
        run_sequential(cw8, -1, init, RngStream(3))


def test_same_seed_same_chain(grid9):
    a = run_sequential(grid9, 500, None, RngStream(11))
    b = run_sequential(grid9, 500, None, RngStream(11))
    assert a.config == b.config
    assert a.step == 500


def test_scalar_steps_match_blocked_run(grid9):
    init = Configuration.ones(9)
    rng = RngStream(4)
    state = ChainState(init)
    for _ in range(300):
        _, state = gibbs_step(grid9, state, rng)
    assert state.config == run_sequential(grid9, 300, init, RngStream(4)).config


def test_trajectory_rows(grid9, tmp_path):
    rows = []
    final = run_sequential(grid9, 40, Configuration.ones(9), RngStream(2), trajectory=rows)
    assert [r[0] for r in rows] == list(range(1, 41))
    x = np.ones(9, dtype=np.int8)
    for _, site, value in rows:
        x[site] = value
    assert Configuration(x) == final.config
    path = tmp_path / 'trajectory.csv'
    write_trajectory_csv(rows, str(path))
    df = pd.read_csv(path)
    assert list(df.columns) == ['step', 'site', 'new_value']
    assert len(df) == 40


def test_mixing_budget_theory():
    # 400 ln(20000) = 3961.39...
    assert mixing_budget_theory(200, 0.5, 0.01) == 3962
    with pytest.raises(DomainError):
        mixing_budget_theory(200, 1.0, 0.01)
    with pytest.raises(DomainError):
        mixing_budget_theory(200, 0.5, 0.0)


def test_mixing_budget_experiment():
    assert mixing_budget_experiment(8) == 240
    assert mixing_budget_experiment(100) == 6644
    with pytest.raises(InvalidArgumentError):
        mixing_budget_experiment(1)


def test_batch_of_one_equals_scalar_run(cw8):
    batch = sample_batch(cw8, 1, 120, RngStream(9))
    scalar = run_sequential(cw8, 120, None, RngStream(9).child(0))
    assert batch[0] == scalar.config


def test_batch_rows_follow_their_streams(grid9):
    rng = RngStream(21)
    X = sample_batch_array(grid9, 5, 200, rng)
    for k in range(5):
        assert Configuration(X[k]) == run_sequential(grid9, 200, None, rng.child(k)).config


def test_batch_independent_of_worker_count(grid9):
    a = sample_batch_array(grid9, 6, 100, RngStream(8), workers=1)
    b = sample_batch_array(grid9, 6, 100, RngStream(8), workers=2)
    assert np.array_equal(a, b)


def test_isolated_site_is_uniform(single_node):
    X = sample_batch_array(single_node, 4000, 3, RngStream(13))
    assert abs(X.mean()) < 4 / np.sqrt(4000)


def test_sample_thinned_shape(cw8):
    out = sample_thinned(cw8, 50, 8, 30, RngStream(6))
    assert out.shape == (30, 8)
    assert set(np.unique(out).tolist()) <= {-1, 1}


def test_thinned_chain_close_to_oracle_small(cw8):
    samples = sample_thinned(cw8, 240, 8, 20000, RngStream(17))
    assert tv_to_exact(samples, exact_distribution(cw8)) < 0.08


@pytest.mark.slow
def test_thinned_chain_matches_oracle():
    model = build_curie_weiss(8, 0.5)
    samples = sample_thinned(model, mixing_budget_experiment(8), 8, 100_000, RngStream(101))
    assert tv_to_exact(samples, exact_distribution(model)) <= 0.02


def test_distance_to_oracle_shrinks_with_run_length():
    model = build_curie_weiss(8, 0.9)
    dist = exact_distribution(model)
    tvs = [tv_to_exact(sample_batch_array(model, 20_000, steps, RngStream(40 + k)), dist)
           for k, steps in enumerate((0, 16, 64, 1000))]
    assert all(a > b for a, b in zip(tvs, tvs[1:]))
    assert tvs[-1] < 0.06
