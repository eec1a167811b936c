import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moser_transport import (
    ConfigurationError,
    QuantileFunction,
    build_quantile,
    builtin_family,
    expectation_curve,
    lipschitz_obstruction,
    parse_density_expression,
    w_infinity_1d,
)

# dense-oracle value for the example1 pair (x=0.1 vs x=0), frozen from a
# closed-form maximisation of the quantile difference
W_EX1_01 = 0.07042507562


def test_quantile_uniform():
    q = build_quantile(lambda m: np.ones_like(np.asarray(m)))
    for p in (0.0, 0.25, 0.7, 1.0):
        assert q.inverse(p) == pytest.approx(p, abs=1e-9)
    assert q.cdf(0.3) == pytest.approx(0.3, abs=1e-9)


def test_quantile_example1_at_zero():
    fam = builtin_family("example1")
    q = QuantileFunction.from_cdf_fn(lambda m: fam.cdf(0.0, m))
    assert q.inverse(1.0 / 32.0) == pytest.approx(0.5, abs=1e-9)


def test_quantile_affine_cdf_value():
    fam = builtin_family("affine")
    q = QuantileFunction.from_cdf_fn(lambda m: fam.cdf(0.5, m))
    assert q.cdf(0.5) == pytest.approx(3.0 / 8.0, abs=1e-9)


def test_quantile_negative_density_rejected():
    with pytest.raises(ConfigurationError):
        build_quantile(lambda m: np.asarray(m) - 0.5)


def test_generalized_inverse_flat_segment():
    # density vanishing on (0.4, 0.6): inverse at the flat level sits at the
    # right end of the flat CDF run
    def dens(m):
        m = np.asarray(m, dtype=float)
        return np.where((m <= 0.4) | (m >= 0.6), 1.25, 0.0)

    q = build_quantile(dens, grid=np.linspace(0, 1, 2 ** 14 + 1))
    assert q.inverse(0.5) == pytest.approx(0.6, abs=1e-3)


@settings(max_examples=30, deadline=None)
@given(m=st.floats(0.05, 0.95))
def test_quantile_round_trip_strictly_increasing(m):
    fam = builtin_family("affine")
    q = _AFFINE_Q
    assert q.inverse(q.cdf(m)) == pytest.approx(m, abs=1e-6)


_AFFINE_Q = QuantileFunction.from_cdf_fn(
    lambda m: builtin_family("affine").cdf(0.25, m)
)


def test_w_infinity_identical_zero():
    fam = builtin_family("example1")
    q = QuantileFunction.from_cdf_fn(lambda m: fam.cdf(0.3, m))
    w, _ = w_infinity_1d(q, q)
    assert w == 0.0


def test_w_infinity_symmetric():
    fam = builtin_family("example1")
    qa = QuantileFunction.from_cdf_fn(lambda m: fam.cdf(0.3, m))
    qb = QuantileFunction.from_cdf_fn(lambda m: fam.cdf(0.0, m))
    w1, _ = w_infinity_1d(qa, qb)
    w2, _ = w_infinity_1d(qb, qa)
    assert w1 == pytest.approx(w2, rel=1e-12)


def test_w_infinity_triangle_inequality_sampled():
    fam = builtin_family("example1")
    qs = [QuantileFunction.from_cdf_fn(lambda m, xx=x: fam.cdf(xx, m))
          for x in (0.0, 0.2, 0.5)]
    w01, _ = w_infinity_1d(qs[0], qs[1])
    w12, _ = w_infinity_1d(qs[1], qs[2])
    w02, _ = w_infinity_1d(qs[0], qs[2])
    tol = 2e-4  # 2x grid tolerance
    assert w02 <= w01 + w12 + tol


def test_w_infinity_spike_fixture():
    # uniform vs narrow uniform at the right end: distance 1 - width
    for width in (0.1, 0.01):
        def spike(m, w=width):
            m = np.asarray(m, dtype=float)
            return np.where(m >= 1 - w, 1.0 / w, 0.0)

        qu = build_quantile(lambda m: np.ones_like(np.asarray(m)))
        qs = build_quantile(spike)
        w_val, _ = w_infinity_1d(qu, qs)
        assert w_val == pytest.approx(1 - width, abs=2e-3)


def test_w_infinity_example1_oracle_reproducible():
    fam = builtin_family("example1")
    qa = QuantileFunction.from_cdf_fn(lambda m: fam.cdf(0.1, m))
    qb = QuantileFunction.from_cdf_fn(lambda m: fam.cdf(0.0, m))
    w, _ = w_infinity_1d(qa, qb)
    assert w == pytest.approx(W_EX1_01, abs=1e-3)
    # numeric-density path reproduces the oracle as well
    qa_n = build_quantile(lambda m: fam.fn(0.1, m))
    qb_n = build_quantile(lambda m: fam.fn(0.0, m))
    w_n, _ = w_infinity_1d(qa_n, qb_n)
    assert w_n == pytest.approx(W_EX1_01, abs=1e-3)


def test_lipschitz_constant_family_bounded():
    rep = lipschitz_obstruction(
        builtin_family("constant"), [(0.1, 0.0), (0.01, 0.0), (0.001, 0.0)]
    )
    assert rep.verdict == "BOUNDED-CONSISTENT"
    assert rep.sup_ratio <= 1e-8


def test_lipschitz_degenerate_schedule():
    with pytest.raises(ConfigurationError):
        lipschitz_obstruction(builtin_family("constant"), [(0.1, 0.0), (0.01, 0.0)])
    with pytest.raises(ConfigurationError):
        lipschitz_obstruction(
            builtin_family("constant"), [(0.1, 0.1), (0.01, 0.0), (0.2, 0.0)]
        )


def test_lipschitz_example1_blowup_short_schedule():
    rep = lipschitz_obstruction(
        builtin_family("example1"), [(1e-1, 0.0), (3e-2, 0.0), (1e-2, 0.0)]
    )
    assert rep.verdict == "BLOWUP-DETECTED"
    ratios = [r["ratio"] for r in rep.pairs]
    assert ratios[-1] > ratios[0]


def test_expectation_fixtures():
    fam = builtin_family("example1")
    h = parse_density_expression("m", variables=("m",))
    xs = np.linspace(-0.8, 0.8, 9)
    rep = expectation_curve(fam, h, xs, k=2)
    i0 = 4
    assert rep.values[i0] == pytest.approx(5.0 / 6.0, abs=1e-9)
    assert rep.derivatives[2][i0] == pytest.approx(-1.0 / 3.0, abs=1e-6)
    assert rep.verdict == "SMOOTH-CONSISTENT"


def test_expectation_total_mass():
    fam = builtin_family("affine")
    one = parse_density_expression("1 + 0*m", variables=("m",))
    rep = expectation_curve(fam, one, np.linspace(-0.4, 0.4, 5), k=1)
    for v in rep.values:
        assert v == pytest.approx(1.0, abs=1e-9)


def test_expectation_constant_family_flat():
    fam = builtin_family("constant")
    h = parse_density_expression("m^2", variables=("m",))
    rep = expectation_curve(fam, h, np.linspace(-0.5, 0.5, 5), k=1)
    assert max(rep.values) - min(rep.values) <= 1e-12
    assert max(abs(v) for v in rep.derivatives[1] if v is not None) <= 1e-8


def test_expectation_linearity():
    fam = builtin_family("example1")
    h1 = parse_density_expression("m", variables=("m",))
    h2 = parse_density_expression("m^3", variables=("m",))
    combo = parse_density_expression("2*m + 3*m^3", variables=("m",))
    xs = np.linspace(-0.5, 0.5, 3)
    r1 = expectation_curve(fam, h1, xs, k=1)
    r2 = expectation_curve(fam, h2, xs, k=1)
    rc = expectation_curve(fam, combo, xs, k=1)
    for a, b, c in zip(r1.values, r2.values, rc.values):
        assert c == pytest.approx(2 * a + 3 * b, abs=1e-9)
