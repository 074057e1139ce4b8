import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipshield.intervals import (
    INDEPENDENCE_PRODUCT,
    AlphaBudget,
    CountsTable,
    InvalidCounts,
    build_emission_intervals,
    clopper_pearson,
    point_estimate,
)

# golden values frozen from an independent bisection oracle on the exact
# binomial tail sums P(X >= k) = a/2 and P(X <= k) = a/2 (math.comb terms)
GOLDEN = {
    (3, 10, 0.05): (0.066739511177758, 0.6524528500599729),
    (0, 20, 0.05): (0.0, 0.16843347098310346),
    (20, 20, 0.05): (0.8315665290168965, 1.0),
    (3, 10, 0.025): (0.05154625578958871, 0.6915018049394064),
    (7, 10, 0.025): (0.3084981950605936, 0.9484537442104113),
}


@pytest.mark.parametrize("key,expect", sorted(GOLDEN.items()))
def test_clopper_pearson_matches_binomial_tail_oracle(key, expect):
    k, n, a = key
    lo, hi = clopper_pearson(k, n, a)
    assert lo == pytest.approx(expect[0], abs=2e-10)
    assert hi == pytest.approx(expect[1], abs=2e-10)


def test_edge_conventions():
    lo, hi = clopper_pearson(0, 20, 0.05)
    assert lo == 0.0 and 0 < hi < 1
    lo, hi = clopper_pearson(20, 20, 0.05)
    assert hi == 1.0 and 0 < lo < 1
    lo, hi = clopper_pearson(0, 1, 0.5)
    assert lo == 0.0


def test_interval_brackets_point_estimate():
    for k, n in [(0, 5), (2, 7), (5, 5), (13, 40)]:
        lo, hi = clopper_pearson(k, n, 0.1)
        assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_invalid_counts():
    with pytest.raises(InvalidCounts):
        clopper_pearson(3, 0, 0.05)
    with pytest.raises(InvalidCounts):
        clopper_pearson(5, 3, 0.05)
    with pytest.raises(ValueError):
        clopper_pearson(1, 3, 1.5)


@settings(max_examples=60, deadline=None)
@given(
    k=st.integers(min_value=0, max_value=30),
    n=st.integers(min_value=1, max_value=30),
    a1=st.floats(min_value=0.01, max_value=0.4),
    shrink=st.floats(min_value=0.1, max_value=0.9),
)
def test_smaller_alpha_widens_interval(k, n, a1, shrink):
    k = min(k, n)
    a2 = a1 * shrink  # a2 < a1
    lo1, hi1 = clopper_pearson(k, n, a1)
    lo2, hi2 = clopper_pearson(k, n, a2)
    assert lo2 <= lo1 + 1e-9
    assert hi2 >= hi1 - 1e-9


def test_coverage_monte_carlo(rng):
    # empirical coverage >= 1 - alpha minus 3 binomial standard errors
    trials = 4000
    for p in (0.05, 0.5):
        for n in (15, 60):
            alpha = 0.1
            ks = rng.binomial(n, p, size=trials)
            hit = 0
            cache = {}
            for k in ks:
                if k not in cache:
                    cache[k] = clopper_pearson(int(k), n, alpha)
                lo, hi = cache[k]
                hit += lo <= p <= hi
            cover = hit / trials
            se = np.sqrt(alpha * (1 - alpha) / trials)
            assert cover >= 1 - alpha - 3 * se, (p, n, cover)


def test_counts_table_validation():
    with pytest.raises(ValueError):
        CountsTable(n=np.array([3, 3]), k=np.array([[1, 1], [3, 0]]))
    with pytest.raises(ValueError):
        CountsTable(n=np.array([-1]), k=np.array([[-1, 0]]))
    t = CountsTable(n=np.array([4]), k=np.array([[1, 3]]))
    assert t.num_states == 1 and t.num_observations == 2


def test_uniform_budget_lambda_union():
    counts = CountsTable(n=np.full(4, 10), k=np.tile([4, 3, 2, 1], (4, 1)))
    budget = AlphaBudget(alpha_total=0.08)
    ivals, lam = build_emission_intervals(counts, budget)
    assert lam == pytest.approx(0.92, abs=1e-12)
    # uniform per-entry budget is alpha/16 = 0.005
    lo, hi = clopper_pearson(4, 10, 0.005)
    assert ivals.lower[0, 0] == pytest.approx(lo, abs=1e-12)
    assert ivals.upper[0, 0] == pytest.approx(hi, abs=1e-12)


def test_lambda_independence_product():
    counts = CountsTable(n=np.full(4, 10), k=np.tile([4, 3, 2, 1], (4, 1)))
    alloc = np.full((4, 4), 0.01)
    budget = AlphaBudget(alpha_total=0.2, allocation=alloc, combiner=INDEPENDENCE_PRODUCT)
    _, lam = build_emission_intervals(counts, budget)
    assert lam == pytest.approx(0.99 ** 16, abs=1e-12)


def test_union_lambda_never_exceeds_independence():
    counts = CountsTable(n=np.full(2, 8), k=np.tile([5, 3], (2, 1)))
    alloc = np.full((2, 2), 0.02)
    _, lam_union = build_emission_intervals(
        counts, AlphaBudget(0.1, allocation=alloc)
    )
    _, lam_indep = build_emission_intervals(
        counts, AlphaBudget(0.1, allocation=alloc, combiner=INDEPENDENCE_PRODUCT)
    )
    assert lam_union <= lam_indep


def test_row_example_contains_truth():
    counts = CountsTable(n=np.array([10]), k=np.array([[3, 7]]))
    alloc = np.full((1, 2), 0.025)
    ivals, _ = build_emission_intervals(counts, AlphaBudget(0.05, allocation=alloc))
    assert ivals.lower[0, 0] <= 0.3 <= ivals.upper[0, 0]
    assert ivals.lower[0, 1] <= 0.7 <= ivals.upper[0, 1]
    assert ivals.lower[0, 0] == pytest.approx(0.05154625578958871, abs=2e-10)
    assert ivals.upper[0, 1] == pytest.approx(0.9484537442104113, abs=2e-10)


def test_rows_remain_feasible_and_contain_empirical(rng):
    for _ in range(20):
        no = int(rng.integers(2, 5))
        ns = int(rng.integers(1, 4))
        n = rng.integers(1, 40, size=ns)
        k = np.array([rng.multinomial(ni, rng.dirichlet(np.ones(no))) for ni in n])
        counts = CountsTable(n=n, k=k)
        ivals, lam = build_emission_intervals(counts, AlphaBudget(0.1))
        emp = k / n[:, None]
        assert np.all(ivals.lower <= emp + 1e-12)
        assert np.all(ivals.upper >= emp - 1e-12)
        assert np.all(ivals.lower.sum(axis=1) <= 1 + 1e-9)
        assert np.all(ivals.upper.sum(axis=1) >= 1 - 1e-9)
        assert 0 < lam < 1


def test_empty_state_gets_vacuous_interval_and_warning():
    counts = CountsTable(n=np.array([0, 4]), k=np.array([[0, 0], [2, 2]]))
    with pytest.warns(UserWarning, match="no samples"):
        ivals, _ = build_emission_intervals(counts, AlphaBudget(0.1))
    assert np.all(ivals.lower[0] == 0.0) and np.all(ivals.upper[0] == 1.0)


def test_point_estimate():
    counts = CountsTable(n=np.array([10, 10]), k=np.array([[10, 0], [3, 7]]))
    pe = point_estimate(counts)
    assert np.allclose(pe.probs, [[1.0, 0.0], [0.3, 0.7]])
    with pytest.raises(InvalidCounts):
        point_estimate(CountsTable(n=np.array([0]), k=np.array([[0]])))


def test_point_estimate_inside_intervals_any_alpha(rng):
    counts = CountsTable(n=np.array([12]), k=np.array([[5, 4, 3]]))
    pe = point_estimate(counts)
    for alpha in (0.01, 0.2, 0.6, 0.95):
        ivals, _ = build_emission_intervals(counts, AlphaBudget(alpha))
        assert ivals.contains(pe.probs)
