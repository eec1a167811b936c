import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moser_transport import (
    ConfigurationError,
    DegeneracyError,
    builtin_family,
    check_decay_assumptions,
    eval_density,
    family_from_expression,
    library_envelopes,
    make_domain,
    make_envelope,
    make_reference,
)


def test_example1_point_values():
    fam = builtin_family("example1")
    assert eval_density(fam, 1.0, 0.5) == pytest.approx(1.0)
    assert eval_density(fam, 0.0, 1.0) == pytest.approx(5.0)


def test_constant_family():
    fam = builtin_family("constant")
    assert eval_density(fam, 0.3, 0.7) == 1.0


def test_out_of_domain_arguments():
    fam = builtin_family("example1")
    with pytest.raises(ConfigurationError):
        fam.rho(2.0, 0.5)
    with pytest.raises(ConfigurationError):
        fam.rho(0.5, 1.5)


def test_unknown_builtin():
    with pytest.raises(ConfigurationError):
        builtin_family("nope")
    with pytest.raises(ConfigurationError):
        builtin_family("h_power", alpha=-1.0)


@pytest.mark.parametrize("name,params", [
    ("constant", {}),
    ("example1", {}),
    ("affine", {}),
    ("h_power", {"alpha": 2.0}),
    ("h_stretched", {"alpha": 1.0}),
    ("h_loglog", {}),
    ("example2", {}),
])
def test_builtins_normalised(name, params):
    fam = builtin_family(name, k=2, **params)
    lo, hi = fam.x_range
    for x in np.linspace(lo, hi, 5):
        assert fam.mass(x) == pytest.approx(1.0, abs=5e-8)


def test_affine_min_density():
    fam = builtin_family("affine")
    nodes = np.linspace(0, 1, 101)
    worst = min(fam.fn(x, nodes).min() for x in (-0.5, 0.5))
    assert worst == pytest.approx(0.5)


@pytest.mark.parametrize("pair", [(1, 0), (0, 1), (1, 1), (2, 0), (0, 2)])
def test_derivative_consistency_observed_order(pair):
    # central FD of rho converges to the attached closed form at order >= 1.8;
    # h_power has genuinely non-polynomial dependence in both arguments
    fam = builtin_family("h_power", alpha=2.5)
    bx, jt = pair
    x0, m0 = 0.37, 0.53
    exact = float(fam.derivative(x0, (m0,), bx, jt))

    def fd(h):
        if bx and jt:
            vals = [
                fam.rho(x0 + sx * h, m0 + sm * h) * sx * sm
                for sx in (1, -1) for sm in (1, -1)
            ]
            return sum(vals) / (4 * h * h)
        if bx == 2 or jt == 2:
            f = (lambda d: fam.rho(x0 + d, m0)) if bx else (lambda d: fam.rho(x0, m0 + d))
            return (f(h) - 2 * f(0.0) + f(-h)) / (h * h)
        f = (lambda d: fam.rho(x0 + d, m0)) if bx else (lambda d: fam.rho(x0, m0 + d))
        return (f(h) - f(-h)) / (2 * h)

    errs = [abs(fd(h) - exact) for h in (1e-2, 5e-3)]
    if errs[1] < 1e-12:
        return  # below rounding floor; nothing to rate
    order = np.log2(errs[0] / errs[1])
    assert order >= 1.8


def test_make_reference_constant():
    ref = make_reference(builtin_family("constant"), margin=0.5)
    assert ref.value_at(0.37) == pytest.approx(0.5)
    assert ref.mass == pytest.approx(0.5, rel=1e-6)


def test_make_reference_affine_flat_quarter():
    ref = make_reference(builtin_family("affine"), margin=0.5)
    for m in (0.05, 0.3, 0.77, 0.99):
        assert ref.value_at(m) == pytest.approx(0.25, rel=1e-9)


def test_make_reference_example1_endpoint():
    ref = make_reference(builtin_family("example1"), margin=0.5)
    assert ref.value_at(1.0) == pytest.approx(1.0, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-1.0, 1.0), m=st.floats(1e-4, 1.0))
def test_reference_domination(x, m):
    fam = builtin_family("example1")
    ref = _EX1_REF
    assert fam.rho(x, m) > ref.value_at(m)


_EX1_REF = make_reference(builtin_family("example1"), margin=0.5)


def test_reference_monotone_along_collar():
    ts = np.geomspace(1e-6, 1.0, 200)
    vals = _EX1_REF.profile(ts)
    assert np.all(np.diff(vals) >= -1e-14)


def test_degenerate_family_rejected():
    # vanishing on the right half of the interval -> degenerate reference
    fam = family_from_expression("m * max(0, 0.5 - m)", x_range=(0.0, 1.0), normalize=False)
    with pytest.raises(DegeneracyError):
        make_reference(fam, margin=0.5)


def test_envelope_library_invariants():
    ts = np.geomspace(1e-6, 1.0, 64)
    for name, env in library_envelopes(k=2, alpha=2.0).items():
        E = env.E_fn(ts)
        B = env.B_fn(ts)
        assert np.all(E >= 1.0), name
        assert np.all(B >= 1.0), name
        assert np.all(E ** 2 <= env.A * B * (1 + 1e-12)), name


def test_envelope_unknown():
    with pytest.raises(ConfigurationError):
        make_envelope("mystery", k=2)
    with pytest.raises(ConfigurationError):
        make_envelope("power", k=2, alpha=2.0, junk=1.0)


def test_check_constant_family_all_margins_at_most_one():
    fam = builtin_family("constant")
    ref = make_reference(fam, margin=0.5)
    env = make_envelope("constant", k=2, E0=1.0, B0=1.0, A=1.0)
    rep = check_decay_assumptions(fam, ref, env, k=2, t_nodes=8)
    assert rep.verdict == "PASS"
    assert rep.worst_margin <= 1.0 + 1e-9


def test_check_h_power_passes_matching_envelope():
    fam = builtin_family("h_power", alpha=2.0)
    ref = make_reference(fam, margin=0.5)
    env = make_envelope("power", k=2, alpha=2.0)
    rep = check_decay_assumptions(fam, ref, env, k=2, t_nodes=8)
    assert rep.verdict == "PASS"
    assert rep.codomain_ok


def test_check_stretched_and_loglog_pass_matching_envelopes():
    # stretched decay underflows below t ~ 1/709 in double precision and the
    # inequality window there is narrower than quadrature noise, so the probe
    # floor sits above that scale
    fam = builtin_family("h_stretched", alpha=1.0)
    ref = make_reference(fam, margin=0.5, t_floor=2e-3)
    env = make_envelope("stretched", k=2, alpha=1.0)
    rep = check_decay_assumptions(fam, ref, env, k=2, t_nodes=8, t_floor=2e-2)
    assert rep.verdict == "PASS"
    assert rep.probe_meta["domination_margin"] > 0

    fam = builtin_family("h_loglog")
    ref = make_reference(fam, margin=0.5)
    env = make_envelope("loglog", k=2)
    rep = check_decay_assumptions(fam, ref, env, k=2, t_nodes=8)
    assert rep.verdict == "PASS"


def test_check_example1_fails_with_first_order_witness():
    fam = builtin_family("example1")
    ref = _EX1_REF
    env = make_envelope("power", k=2, alpha=2.0)
    rep = check_decay_assumptions(fam, ref, env, k=2, t_nodes=8)
    assert rep.verdict == "FAIL"
    rec = rep.margins[("derivative", 1, 0)]
    assert rec["margin"] > 1.0
    assert rec["witness"]["beta"] == 1 and rec["witness"]["j"] == 0


def test_expression_family_normalises():
    fam = family_from_expression("1 + x*(2*m - 1)", x_range=(-0.5, 0.5))
    assert fam.mass(0.25) == pytest.approx(1.0, abs=1e-9)


def test_expression_family_nonpositive_mass():
    fam = family_from_expression("0 * m", x_range=(0.0, 1.0))
    with pytest.raises(DegeneracyError):
        fam.rho(0.5, 0.5)


def test_reference_integral_consistency():
    # integral(t) must antidifferentiate the profile
    ref = _EX1_REF
    for t in (0.01, 0.2, 0.7, 0.98):
        dt = 1e-5
        num = (ref.integral(t + dt) - ref.integral(t - dt)) / (2 * dt)
        assert num == pytest.approx(float(ref.profile(t)), rel=1e-4, abs=1e-10)
