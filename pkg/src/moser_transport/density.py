"""Parametrised density families, reference densities, and decay envelopes.

A family is an evaluator rho(x, .) over a model domain together with partial
derivative evaluators D_x^beta D_t^j rho for |beta| + j <= k (closed-form
where tractable, central finite differences otherwise), an optional closed
CDF for 1D domains, and a provenance tag.

The decay machinery consists of envelope pairs (E, B) with a closure
constant A, a small library of candidate envelopes, and a sampling-based
checker for the three decay inequalities.  A PASS is evidence at probe
resolution, not a proof, and the report says so.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate, special

from .errors import ConfigurationError, DegeneracyError
from .expressions import parse_density_expression
from .geometry import CYLINDER, INTERVAL, TORUS, Domain, collar_chart, make_domain

_X_EPS = 1e-9


@dataclass
class DensityFamily:
    """Evaluator bundle for a parametrised density family.

    ``fn(x, *coords)`` accepts scalar or ndarray coordinates.  For 1D
    domains coords is ``(m,)``; for 2D domains ``(a, t)`` with ``t`` the
    collar coordinate.  All evaluators are pure, so concurrent evaluation
    is safe.
    """

    domain: Domain
    x_range: tuple
    k: int
    name: str
    provenance: str
    fn: object
    exact_derivs: dict = field(default_factory=dict)
    cdf_fn: object = None
    fd_step_x: float = 1e-5
    fd_rel_t: float = 0.125

    def _check_x(self, x):
        lo, hi = self.x_range
        pad = _X_EPS * max(1.0, hi - lo)
        if x < lo - pad or x > hi + pad:
            raise ConfigurationError(f"parameter x={x} outside X=[{lo}, {hi}]")

    def rho(self, x, *coords):
        self._check_x(x)
        for c in coords:
            arr = np.asarray(c)
            if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
                raise ConfigurationError("point outside the domain")
        return self.fn(x, *coords)

    def derivative(self, x, coords, bx=0, jt=0):
        """D_x^bx D_t^jt rho at (x, coords), exact where attached else FD."""
        if bx == 0 and jt == 0:
            return self.fn(x, *coords)
        exact = self.exact_derivs.get((bx, jt))
        if exact is not None:
            return exact(x, *coords)
        if bx > 0:
            lo, hi = self.x_range
            h = min(self.fd_step_x, 0.25 * (hi - lo))
            if x - h < lo:
                f0 = self.derivative(x, coords, bx - 1, jt)
                f1 = self.derivative(x + h, coords, bx - 1, jt)
                f2 = self.derivative(x + 2 * h, coords, bx - 1, jt)
                return (-3 * f0 + 4 * f1 - f2) / (2 * h)
            if x + h > hi:
                f0 = self.derivative(x, coords, bx - 1, jt)
                f1 = self.derivative(x - h, coords, bx - 1, jt)
                f2 = self.derivative(x - 2 * h, coords, bx - 1, jt)
                return (3 * f0 - 4 * f1 + f2) / (2 * h)
            return (
                self.derivative(x + h, coords, bx - 1, jt)
                - self.derivative(x - h, coords, bx - 1, jt)
            ) / (2 * h)
        # t-derivative along the collar coordinate (last coordinate)
        *rest, t = coords
        t = float(t)
        h = max(t * self.fd_rel_t, 1e-12)
        if t + h > 1.0:
            h = (1.0 - t) if 1.0 - t > 0 else 1e-6
        if t - h < 0:
            h = 0.5 * t if t > 0 else 1e-8
        up = self.derivative(x, (*rest, t + h), bx, jt - 1)
        dn = self.derivative(x, (*rest, t - h), bx, jt - 1)
        return (up - dn) / (2 * h)

    def cdf(self, x, m):
        """CDF along the 1D domain; closed-form when the family carries one."""
        if self.domain.dim != 1:
            raise ConfigurationError("cdf is defined for 1D families only")
        self._check_x(x)
        if self.cdf_fn is not None:
            return self.cdf_fn(x, np.asarray(m, dtype=float))
        return self._numeric_cdf(x, m)

    def _numeric_cdf(self, x, m):
        nodes = _dense_unit_grid()
        vals = self.fn(x, nodes)
        cum = integrate.cumulative_trapezoid(vals, nodes, initial=0.0)
        cum /= cum[-1]
        return np.interp(np.asarray(m, dtype=float), nodes, cum)

    def mass(self, x):
        self._check_x(x)
        if self.domain.dim == 1:
            val, _ = integrate.quad(lambda s: float(self.fn(x, s)), 0.0, 1.0, limit=200)
            return val
        n = 256
        a = np.arange(n) * (self.domain.circumference / n)
        t = np.linspace(0.0, 1.0, n)
        aa, tt = np.meshgrid(a, t, indexing="ij")
        vals = self.fn(x, aa, tt)
        wt = np.full(n, 1.0 / (n - 1))
        wt[0] = wt[-1] = 0.5 / (n - 1)
        wa = np.full(n, self.domain.circumference / n)
        if self.domain.kind == TORUS:
            wt = np.full(n, 1.0 / n)
        return float(np.sum(np.multiply.outer(wa, wt) * vals))

    def validate(self, x_samples=9, tol_norm=1e-4, positivity_floor=0.0):
        """Normalisation and interior positivity on a sample grid."""
        lo, hi = self.x_range
        for x in np.linspace(lo, hi, x_samples):
            m = self.mass(x)
            if abs(m - 1.0) > tol_norm:
                raise ConfigurationError(
                    f"family {self.name!r} not normalised at x={x:g}: mass={m!r}"
                )
            if self.domain.dim == 1:
                pts = np.geomspace(1e-6, 1.0, 64)
                vals = self.fn(x, pts)
            else:
                a = np.linspace(0, self.domain.circumference, 17)[:-1]
                t = np.geomspace(1e-6, 1.0, 17)
                aa, tt = np.meshgrid(a, t, indexing="ij")
                vals = self.fn(x, aa, tt)
            if np.any(np.asarray(vals) <= positivity_floor):
                raise DegeneracyError(
                    f"family {self.name!r} not positive on the interior at x={x:g}"
                )

    def min_density(self, x_samples=17, n=129):
        lo, hi = self.x_range
        worst = np.inf
        for x in np.linspace(lo, hi, x_samples):
            if self.domain.dim == 1:
                vals = self.fn(x, np.linspace(0.0, 1.0, n))
            else:
                a = np.linspace(0, self.domain.circumference, n)[:-1]
                t = np.linspace(0.0, 1.0, n)
                aa, tt = np.meshgrid(a, t, indexing="ij")
                vals = self.fn(x, aa, tt)
            worst = min(worst, float(np.min(vals)))
        return worst


_DENSE_GRID = None


def _dense_unit_grid():
    global _DENSE_GRID
    if _DENSE_GRID is None:
        core = np.linspace(0.0, 1.0, 2 ** 14 + 1)
        tail = np.geomspace(1e-10, 1e-3, 400)
        _DENSE_GRID = np.unique(np.concatenate([core, tail, 1.0 - tail]))
    return _DENSE_GRID


def eval_density(fam, x, m):
    """rho(x, m) with argument validation; thin wrapper over fam.rho."""
    return fam.rho(x, m)


# ---------------------------------------------------------------------------
# builtin families


def _interval():
    return make_domain(INTERVAL)


def _constant_family(k):
    dom = _interval()
    zero = lambda x, m: np.zeros_like(np.asarray(m, dtype=float))
    derivs = {(b, j): zero for b in range(0, k + 1) for j in range(0, k + 1) if 0 < b + j <= k}
    return DensityFamily(
        domain=dom,
        x_range=(-1.0, 1.0),
        k=k,
        name="constant",
        provenance="builtin",
        fn=lambda x, m: np.ones_like(np.asarray(m, dtype=float)),
        exact_derivs=derivs,
        cdf_fn=lambda x, m: np.asarray(m, dtype=float),
    )


def _example1_family(k):
    dom = _interval()

    def fn(x, m):
        m = np.asarray(m, dtype=float)
        return 2 * x * x * m + 5 * (1 - x * x) * m ** 4

    derivs = {
        (1, 0): lambda x, m: 4 * x * np.asarray(m, float) - 10 * x * np.asarray(m, float) ** 4,
        (2, 0): lambda x, m: 4 * np.asarray(m, float) - 10 * np.asarray(m, float) ** 4,
        (0, 1): lambda x, m: 2 * x * x + 20 * (1 - x * x) * np.asarray(m, float) ** 3,
        (0, 2): lambda x, m: 60 * (1 - x * x) * np.asarray(m, float) ** 2,
        (1, 1): lambda x, m: 4 * x - 40 * x * np.asarray(m, float) ** 3,
        (2, 1): lambda x, m: 4 - 40 * np.asarray(m, float) ** 3,
        (1, 2): lambda x, m: -120 * x * np.asarray(m, float) ** 2,
        (0, 3): lambda x, m: 120 * (1 - x * x) * np.asarray(m, float),
    }

    def cdf(x, m):
        m = np.asarray(m, dtype=float)
        return x * x * m * m + (1 - x * x) * m ** 5

    return DensityFamily(
        domain=dom, x_range=(-1.0, 1.0), k=k, name="example1",
        provenance="builtin", fn=fn, exact_derivs=derivs, cdf_fn=cdf,
    )


def _affine_family(k, c=0.5):
    if not 0 < c < 1:
        raise ConfigurationError(f"affine family needs 0 < c < 1, got {c}")
    dom = _interval()

    def fn(x, m):
        m = np.asarray(m, dtype=float)
        return 1.0 + x * (2 * m - 1)

    derivs = {
        (1, 0): lambda x, m: 2 * np.asarray(m, float) - 1,
        (0, 1): lambda x, m: 2 * x * np.ones_like(np.asarray(m, float)),
        (1, 1): lambda x, m: 2.0 * np.ones_like(np.asarray(m, float)),
        (2, 0): lambda x, m: np.zeros_like(np.asarray(m, float)),
        (0, 2): lambda x, m: np.zeros_like(np.asarray(m, float)),
    }
    return DensityFamily(
        domain=dom, x_range=(-c, c), k=k, name="affine",
        provenance="builtin", fn=fn, exact_derivs=derivs,
        cdf_fn=lambda x, m: np.asarray(m, float) + x * (np.asarray(m, float) ** 2 - np.asarray(m, float)),
    )


_HALF_T = (
    lambda t: np.asarray(t, dtype=float) / 2,
    lambda t: np.full_like(np.asarray(t, dtype=float), 0.5),
    lambda t: np.zeros_like(np.asarray(t, dtype=float)),
)


def _modulated_family(name, k, base, base_d1, base_d2, n0, ns, cdf_base=None,
                      mod=_HALF_T):
    """Family (1 + x s(t)) base(t) / (n0 + x ns) on [0,1], X = [0,1].

    ``mod`` supplies (s, s', s''); the default is s(t) = t/2.  n0 is the
    integral of base and ns the integral of s * base, so the mass is one
    for every x.  cdf_base, when given, maps t to the partial integrals
    (int_0^t base, int_0^t s * base).
    """
    s, s1, s2 = mod

    def N(x):
        return n0 + x * ns

    def fn(x, t):
        t = np.asarray(t, dtype=float)
        return (1 + x * s(t)) * base(t) / N(x)

    def dx(x, t):
        t = np.asarray(t, dtype=float)
        A_x = s(t) * base(t)
        return A_x / N(x) - fn(x, t) * ns / N(x)

    def dxx(x, t):
        t = np.asarray(t, dtype=float)
        A = (1 + x * s(t)) * base(t)
        A_x = s(t) * base(t)
        return (-2 * A_x * ns + 2 * A * ns * ns / N(x)) / N(x) ** 2

    def dt(x, t):
        t = np.asarray(t, dtype=float)
        return (base_d1(t) + x * (s1(t) * base(t) + s(t) * base_d1(t))) / N(x)

    def dtt(x, t):
        t = np.asarray(t, dtype=float)
        return (
            base_d2(t)
            + x * (s2(t) * base(t) + 2 * s1(t) * base_d1(t) + s(t) * base_d2(t))
        ) / N(x)

    def dxt(x, t):
        t = np.asarray(t, dtype=float)
        dA_x = s1(t) * base(t) + s(t) * base_d1(t)
        dA = base_d1(t) + x * (s1(t) * base(t) + s(t) * base_d1(t))
        return dA_x / N(x) - dA * ns / N(x) ** 2

    derivs = {(1, 0): dx, (2, 0): dxx, (0, 1): dt, (0, 2): dtt, (1, 1): dxt}

    cdf_fn = None
    if cdf_base is not None:
        def cdf_fn(x, m):
            b0, bs = cdf_base(np.asarray(m, dtype=float))
            return (b0 + x * bs) / N(x)

    return DensityFamily(
        domain=_interval(), x_range=(0.0, 1.0), k=k, name=name,
        provenance="builtin", fn=fn, exact_derivs=derivs, cdf_fn=cdf_fn,
    )


def _h_power_family(k, alpha=2.0):
    if not alpha > 0:
        raise ConfigurationError(f"h_power needs alpha > 0, got {alpha}")
    a = float(alpha)
    base = lambda t: np.asarray(t, float) ** a
    d1 = lambda t: a * np.asarray(t, float) ** (a - 1)
    d2 = lambda t: a * (a - 1) * np.asarray(t, float) ** (a - 2)
    n0 = 1.0 / (a + 1)
    ns = 0.5 / (a + 2)

    def cdf_base(m):
        return m ** (a + 1) / (a + 1), m ** (a + 2) / (2 * (a + 2))

    return _modulated_family("h_power", k, base, d1, d2, n0, ns, cdf_base)


def _tabulated_cdf_base(base, s_fn, t_floor=1e-9, n=8001):
    """Partial-integral tables (int base, int s*base) for a positive base.

    Table values back the CDF; the totals that normalise the family come
    from adaptive quadrature so masses are exact to quadrature tolerance.
    """
    ts = np.concatenate([[0.0], np.geomspace(t_floor, 1.0, n)])
    vals = np.concatenate([[0.0], base(ts[1:])])
    b0 = integrate.cumulative_trapezoid(vals, ts, initial=0.0)
    bs = integrate.cumulative_trapezoid(vals * s_fn(ts), ts, initial=0.0)
    n0, _ = integrate.quad(lambda s: float(base(np.asarray(s))), 0.0, 1.0, limit=200)
    ns, _ = integrate.quad(
        lambda s: float(s_fn(np.asarray(s))) * float(base(np.asarray(s))),
        0.0, 1.0, limit=200,
    )
    b0 *= n0 / b0[-1]
    bs *= ns / bs[-1]

    def cdf_base(m):
        m = np.asarray(m, dtype=float)
        return np.interp(m, ts, b0), np.interp(m, ts, bs)

    return cdf_base, float(n0), float(ns)


def _h_stretched_family(k, alpha=1.0):
    if not alpha > 0:
        raise ConfigurationError(f"h_stretched needs alpha > 0, got {alpha}")
    a = float(alpha)

    def base(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t > 0
        with np.errstate(under="ignore"):
            out[pos] = np.exp(-t[pos] ** (-a))
        return out if out.ndim else float(out)

    def d1(t):
        t = np.asarray(t, dtype=float)
        return a * t ** (-a - 1) * base(t)

    def d2(t):
        t = np.asarray(t, dtype=float)
        return (a * a * t ** (-2 * a - 2) - a * (a + 1) * t ** (-a - 2)) * base(t)

    cdf_base, n0, ns = _tabulated_cdf_base(base, _HALF_T[0])
    return _modulated_family("h_stretched", k, base, d1, d2, n0, ns, cdf_base)


# modulation for the log-log family: vanishes to second order at t = 1, so
# the parameter dependence does not tighten the razor-thin envelope window
# at the interior end of the collar
_LOGLOG_MOD = (
    lambda t: np.asarray(t, float) ** 2 * (1 - np.asarray(t, float)) ** 3,
    lambda t: np.asarray(t, float) * (1 - np.asarray(t, float)) ** 2
    * (2 - 5 * np.asarray(t, float)),
    lambda t: (1 - np.asarray(t, float))
    * (2 - 16 * np.asarray(t, float) + 20 * np.asarray(t, float) ** 2),
)


def _h_loglog_family(k):
    # decay profile 1 / log(2/t): doubly-logarithmic exponent shape near 0
    def L(t):
        return np.log(2.0 / np.asarray(t, dtype=float))

    def base(t):
        t = np.asarray(t, dtype=float)
        return 1.0 / L(t)

    def d1(t):
        t = np.asarray(t, dtype=float)
        return 1.0 / (t * L(t) ** 2)

    def d2(t):
        t = np.asarray(t, dtype=float)
        return -1.0 / (t * t * L(t) ** 2) + 2.0 / (t * t * L(t) ** 3)

    cdf_base, n0, ns = _tabulated_cdf_base(base, _LOGLOG_MOD[0])
    return _modulated_family("h_loglog", k, base, d1, d2, n0, ns, cdf_base,
                             mod=_LOGLOG_MOD)


# Example 2 support: I(m) = int_0^m s^5 sin^2(1/s) ds, tabulated once.
_EX2_TABLE = None


def _ex2_oscillatory_integral():
    global _EX2_TABLE
    if _EX2_TABLE is None:
        s = np.geomspace(1e-4, 1.0, 300001)
        vals = s ** 5 * np.sin(1.0 / s) ** 2
        cum = integrate.cumulative_trapezoid(vals, s, initial=0.0)
        cum += s[0] ** 6 / 12.0  # tail below the table: oscillation negligible there
        _EX2_TABLE = (s, cum)
    return _EX2_TABLE


def _ex2_I(m):
    s, cum = _ex2_oscillatory_integral()
    m = np.asarray(m, dtype=float)
    out = np.interp(m, s, cum)
    small = m < s[0]
    if np.any(small):
        out = np.where(small, m ** 6 / 12.0, out)
    return out


def _example2_family(k):
    q = k + 1  # bump degree 2q >= 2k + 2
    sigma_mass = 0.5 * special.beta(q + 1, q + 1)
    I1 = float(_ex2_I(1.0))

    def c_of_x(x):
        return (1.0 - (2.0 + x) * I1 - 1.0 / 31.0) / sigma_mass

    c_slope = -I1 / sigma_mass

    def sigma(m):
        m = np.asarray(m, dtype=float)
        u = 4.0 * (m - 0.5) * (1.0 - m)
        out = np.where((m >= 0.5) & (m <= 1.0), np.maximum(u, 0.0) ** q, 0.0)
        return out

    def sigma_d1(m):
        m = np.asarray(m, dtype=float)
        u = 4.0 * (m - 0.5) * (1.0 - m)
        du = 6.0 - 8.0 * m
        inside = (m > 0.5) & (m < 1.0)
        return np.where(inside, q * np.maximum(u, 0.0) ** (q - 1) * du, 0.0)

    def sigma_d2(m):
        m = np.asarray(m, dtype=float)
        u = 4.0 * (m - 0.5) * (1.0 - m)
        du = 6.0 - 8.0 * m
        inside = (m > 0.5) & (m < 1.0)
        term = q * (q - 1) * np.maximum(u, 0.0) ** (q - 2) * du * du - 8.0 * q * np.maximum(u, 0.0) ** (q - 1)
        return np.where(inside, term, 0.0)

    def sigma_int(m):
        m = np.asarray(m, dtype=float)
        u = np.clip(2.0 * m - 1.0, 0.0, 1.0)
        return 0.5 * special.beta(q + 1, q + 1) * special.betainc(q + 1, q + 1, u)

    def fn(x, m):
        m = np.asarray(m, dtype=float)
        osc = np.zeros_like(m)
        pos = m > 0
        osc[pos] = np.sin(1.0 / m[pos]) ** 2
        with np.errstate(under="ignore"):
            return (2.0 + x) * m ** 5 * osc + m ** 30 + c_of_x(x) * sigma(m)

    def dx(x, m):
        m = np.asarray(m, dtype=float)
        osc = np.zeros_like(m)
        pos = m > 0
        osc[pos] = np.sin(1.0 / m[pos]) ** 2
        return m ** 5 * osc + c_slope * sigma(m)

    def dt(x, m):
        m = np.asarray(m, dtype=float)
        out = np.zeros_like(m)
        pos = m > 0
        mp = m[pos]
        out[pos] = (
            (2.0 + x) * (5 * mp ** 4 * np.sin(1.0 / mp) ** 2 - mp ** 3 * np.sin(2.0 / mp))
            + 30 * mp ** 29
        )
        return out + c_of_x(x) * sigma_d1(m)

    def dtt(x, m):
        m = np.asarray(m, dtype=float)
        out = np.zeros_like(m)
        pos = m > 0
        mp = m[pos]
        out[pos] = (2.0 + x) * (
            20 * mp ** 3 * np.sin(1.0 / mp) ** 2
            - 8 * mp ** 2 * np.sin(2.0 / mp)
            + 2 * mp * np.cos(2.0 / mp)
        ) + 870 * mp ** 28
        return out + c_of_x(x) * sigma_d2(m)

    def dxt(x, m):
        m = np.asarray(m, dtype=float)
        out = np.zeros_like(m)
        pos = m > 0
        mp = m[pos]
        out[pos] = 5 * mp ** 4 * np.sin(1.0 / mp) ** 2 - mp ** 3 * np.sin(2.0 / mp)
        return out + c_slope * sigma_d1(m)

    derivs = {
        (1, 0): dx,
        (2, 0): lambda x, m: np.zeros_like(np.asarray(m, float)),
        (0, 1): dt,
        (0, 2): dtt,
        (1, 1): dxt,
        (2, 1): lambda x, m: np.zeros_like(np.asarray(m, float)),
    }

    def cdf(x, m):
        m = np.asarray(m, dtype=float)
        return (2.0 + x) * _ex2_I(m) + m ** 31 / 31.0 + c_of_x(x) * sigma_int(m)

    return DensityFamily(
        domain=_interval(), x_range=(-1.0, 1.0), k=k, name="example2",
        provenance="builtin", fn=fn, exact_derivs=derivs, cdf_fn=cdf,
    )


_BUILTINS = {
    "constant": _constant_family,
    "example1": _example1_family,
    "example2": _example2_family,
    "affine": _affine_family,
    "h_power": _h_power_family,
    "h_stretched": _h_stretched_family,
    "h_loglog": _h_loglog_family,
}


def builtin_family(name, k=2, **params):
    """Construct one of the built-in families by name."""
    if name not in _BUILTINS:
        raise ConfigurationError(
            f"unknown builtin family {name!r}; available: {sorted(_BUILTINS)}"
        )
    if k < 1:
        raise ConfigurationError("smoothness budget k must be a positive integer")
    return _BUILTINS[name](k, **params)


def family_from_expression(text, domain=None, x_range=(0.0, 1.0), k=2, normalize=True):
    """Family from an expression in (x, m) on the interval or (x, a, t) on 2D domains.

    When ``normalize`` is set, the evaluator is divided by the per-x mass
    (computed by quadrature and cached), so the family is a probability
    density for every sampled x.
    """
    domain = domain or _interval()
    variables = ("x", "m") if domain.dim == 1 else ("x", "a", "t")
    ast = parse_density_expression(text, variables=variables)
    cache = {}

    if domain.dim == 1:
        def raw(x, m):
            return np.asarray(ast.evaluate(x=x, m=np.asarray(m, dtype=float)), dtype=float)
    else:
        def raw(x, a, t):
            a = np.asarray(a, dtype=float)
            t = np.asarray(t, dtype=float)
            return np.asarray(ast.evaluate(x=x, a=a, t=t), dtype=float)

    fam = DensityFamily(
        domain=domain, x_range=tuple(x_range), k=k,
        name=f"expression({text})", provenance="expression", fn=raw,
    )
    if not normalize:
        return fam

    def norm(x):
        key = round(float(x), 15)
        if key not in cache:
            cache[key] = fam.mass(x)
            if not cache[key] > 0:
                raise DegeneracyError(f"expression family has non-positive mass at x={x:g}")
        return cache[key]

    if domain.dim == 1:
        normalized = lambda x, m: raw(x, m) / norm(x)
    else:
        normalized = lambda x, a, t: raw(x, a, t) / norm(x)
    return DensityFamily(
        domain=domain, x_range=tuple(x_range), k=k,
        name=f"expression({text})", provenance="expression", fn=normalized,
    )


# ---------------------------------------------------------------------------
# reference densities


@dataclass
class ReferenceDensity:
    """Sub-probability reference density dominated by the family.

    The profile is a function of the collar coordinate t of the designated
    boundary side; in the collar it does not depend on the boundary
    coordinate a.  ``integral(t)`` is the exact antiderivative int_0^t f.
    """

    domain: Domain
    k: int
    side: int
    profile_fn: object
    integral_fn: object
    deriv_fn: object = None
    collar_constant: bool = True
    monotone: bool = True
    tab_nodes: object = None
    provenance: str = "constructed"

    def profile(self, t):
        return self.profile_fn(np.asarray(t, dtype=float))

    def integral(self, t):
        return self.integral_fn(np.asarray(t, dtype=float))

    def value_at(self, m):
        """Evaluate at a 1D domain point (converts m to the collar coordinate)."""
        m = np.asarray(m, dtype=float)
        t = m if self.side == 0 else 1.0 - m
        return self.profile(t)

    def derivative(self, t, j=1):
        if self.deriv_fn is None:
            h = np.maximum(np.asarray(t, float) * 1e-4, 1e-9)
            if j == 1:
                return (self.profile(t + h) - self.profile(np.maximum(t - h, 0))) / (2 * h)
            raise ConfigurationError("no derivative evaluator attached")
        return self.deriv_fn(np.asarray(t, dtype=float), j)

    @property
    def mass(self):
        return float(self.integral(1.0))


def reference_from_profile(profile_fn, integral_fn=None, domain=None, k=2, side=0):
    """Reference density from closed-form callables (mainly for tests/fixtures)."""
    domain = domain or _interval()
    if integral_fn is None:
        def integral_fn(t):
            t_arr = np.atleast_1d(np.asarray(t, dtype=float))
            out = np.array(
                [integrate.quad(lambda s: float(profile_fn(s)), 0.0, ti, limit=200)[0] for ti in t_arr]
            )
            return out if np.ndim(t) else float(out[0])
    return ReferenceDensity(
        domain=domain, k=k, side=side,
        profile_fn=profile_fn, integral_fn=integral_fn, provenance="callable",
    )


def make_reference(fam, margin=0.5, side=0, x_samples=41, n_nodes=500, t_floor=1e-8):
    """Reference f = (1-margin) * min_x rho, collar-constant and monotone in t.

    The pointwise minimum over sampled x (and over the boundary coordinate
    for 2D domains) is tabulated on a log-refined t-grid, pushed down to a
    nondecreasing-in-t envelope (suffix minimum from the interior), and
    interpolated monotonically.  Below the first node the profile continues
    by its fitted power law.
    """
    if not 0 < margin < 1:
        raise ConfigurationError(f"margin must lie in (0, 1), got {margin}")
    dom = fam.domain
    ts = np.geomspace(t_floor, 1.0, n_nodes)
    ts[-1] = 1.0
    lo, hi = fam.x_range
    xs = np.linspace(lo, hi, x_samples)

    if dom.dim == 1:
        pts = collar_chart(dom, float(side), ts, side=side) if dom.has_boundary else ts
        raw = np.min(np.stack([np.asarray(fam.fn(x, pts), dtype=float) for x in xs]), axis=0)
    else:
        a_nodes = np.linspace(0.0, dom.circumference, 17)[:-1]
        aa, tt = np.meshgrid(a_nodes, ts, indexing="ij")
        stacked = np.stack([np.asarray(fam.fn(x, aa, tt), dtype=float) for x in xs])
        raw = stacked.min(axis=0).min(axis=0)  # min over x then over a

    raw = (1.0 - margin) * raw
    if dom.has_boundary:
        mono = np.minimum.accumulate(raw[::-1])[::-1]
    else:
        mono = np.full_like(raw, raw.min())

    if np.any(mono[ts >= 0.02] <= 0.0):
        raise DegeneracyError(
            "constructed reference vanishes on an interior region; family is degenerate"
        )
    if np.any(mono <= 0.0):
        raise DegeneracyError(
            "constructed reference not positive on the interior "
            "(raise t_floor above the family's underflow scale)"
        )

    # interpolate in log-log space: linear-space interpolation between the
    # log-refined knots overshoots by orders of magnitude for fast-decaying
    # profiles, which would break the domination rho > f between knots
    log_spline = interpolate.PchipInterpolator(np.log(ts), np.log(mono),
                                               extrapolate=False)
    dlog1 = log_spline.derivative(1)
    dlog2 = log_spline.derivative(2)

    t0, t1 = ts[0], ts[1]
    f0 = mono[0]
    q_hat = min(max(float(dlog1(np.log(t0))), 0.0), 200.0)
    tail_mass = f0 * t0 / (q_hat + 1.0)

    def profile_fn(t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        low = t < t0
        high = t > 1.0
        mid = ~low & ~high
        with np.errstate(under="ignore"):
            out[mid] = np.exp(log_spline(np.log(np.clip(t[mid], t0, 1.0))))
            out[low] = f0 * np.power(np.maximum(t[low], 0.0) / t0, q_hat)
        out[high] = mono[-1]
        return out if out.ndim else float(out)

    # cumulative mass by per-interval Gauss quadrature of the interpolant
    xg, wg = np.polynomial.legendre.leggauss(24)
    seg = np.zeros(len(ts))
    for i in range(1, len(ts)):
        mid_pt, half = 0.5 * (ts[i] + ts[i - 1]), 0.5 * (ts[i] - ts[i - 1])
        seg[i] = half * float(np.sum(wg * profile_fn(mid_pt + half * xg)))
    cum = tail_mass + np.cumsum(seg)

    def integral_fn(t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t_arr = np.atleast_1d(t).astype(float)
        out = np.empty_like(t_arr)
        low = t_arr < t0
        out[low] = tail_mass * np.power(np.maximum(t_arr[low], 0.0) / t0, q_hat + 1.0)
        hi = ~low
        if np.any(hi):
            tc = np.clip(t_arr[hi], t0, 1.0)
            idx = np.clip(np.searchsorted(ts, tc, side="right") - 1, 0, len(ts) - 2)
            base = cum[idx]
            partial = np.empty_like(tc)
            for j, (i0, tv) in enumerate(zip(idx, tc)):
                mid_pt, half = 0.5 * (tv + ts[i0]), 0.5 * (tv - ts[i0])
                partial[j] = half * float(np.sum(wg * profile_fn(mid_pt + half * xg)))
            out[hi] = base + partial
        return float(out[0]) if scalar else out

    def deriv_fn(t, j):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, t0, 1.0)
        s = np.log(tc)
        p = profile_fn(tc)
        if j == 1:
            out = p * np.asarray(dlog1(s)) / tc
            low = t < t0
            if np.any(low) and q_hat > 0:
                tl = np.maximum(t, 1e-300)
                out = np.where(low, q_hat * profile_fn(tl) / tl, out)
            return out if np.ndim(out) else float(out)
        if j == 2:
            g1 = np.asarray(dlog1(s))
            g2 = np.asarray(dlog2(s))
            out = p * (g1 * g1 + g2 - g1) / (tc * tc)
            return out if np.ndim(out) else float(out)
        raise ConfigurationError("reference derivatives available up to order 2")

    ref = ReferenceDensity(
        domain=dom, k=fam.k, side=side,
        profile_fn=profile_fn, integral_fn=integral_fn, deriv_fn=deriv_fn,
        collar_constant=dom.has_boundary, tab_nodes=(ts, mono),
    )

    # domination on a verification grid denser in x than the build grid
    check_x = np.linspace(lo, hi, 2 * x_samples + 1)
    check_t = np.geomspace(t_floor, 1.0, 97)
    fvals = ref.profile(check_t)
    for x in check_x:
        if dom.dim == 1:
            pts = collar_chart(dom, float(side), check_t, side=side)
            rv = np.asarray(fam.fn(x, pts), dtype=float)
        else:
            a_nodes = np.linspace(0.0, dom.circumference, 9)[:-1]
            aa, tt = np.meshgrid(a_nodes, check_t, indexing="ij")
            rv = np.asarray(fam.fn(x, aa, tt), dtype=float).min(axis=0)
        if np.any(rv - fvals <= 0):
            raise DegeneracyError(
                f"reference domination rho > f violated at x={x:g} on the verification grid"
            )
    return ref


# ---------------------------------------------------------------------------
# decay envelopes


@dataclass(frozen=True)
class DecayEnvelope:
    """Envelope pair (E, B) with closure constant A.

    The checker enforces the weak form E, B > 0; whether the strong
    codomain form E, B >= 1 also holds is reported separately.
    """

    name: str
    E_fn: object
    B_fn: object
    A: float
    params: dict

    def E(self, a, t):
        return self.E_fn(np.asarray(t, dtype=float))

    def B(self, a, t):
        return self.B_fn(np.asarray(t, dtype=float))


def _sized_A(E_fn, B_fn, k, safety=2.0):
    ts = np.geomspace(1e-8, 1.0, 400)
    return float(safety * np.max(E_fn(ts) ** k / B_fn(ts)))


def make_envelope(name, k=2, **params):
    """Construct a library envelope.

    * ``power(alpha, E0=2, b=1.3)``      -- E = E0, B = b*alpha/t
    * ``stretched(alpha, E0=2, b=1.3)``  -- E = E0, B = b*alpha*t^(-alpha-1)
    * ``loglog(C1=4, C2=2)``             -- E = C2*(1+log(2/t)), B = C1/t
    * ``constant(E0=1, B0=1)``           -- constants
    """
    if name == "power":
        alpha = float(params.pop("alpha"))
        E0 = float(params.pop("E0", 2.0))
        b = float(params.pop("b", 1.3))
        E_fn = lambda t: np.full_like(np.asarray(t, float), E0)
        B_fn = lambda t: b * alpha / np.asarray(t, float)
        chosen = {"alpha": alpha, "E0": E0, "b": b}
    elif name == "stretched":
        # the window between the derivative and integrated inequalities for
        # exp(-t^-alpha) decay has relative width O(t^alpha); the tapered
        # (alpha+1)/alpha correction is the matching Laplace-expansion
        # constant near 0, reduced toward the interior end where the sharp
        # mass ratio caps B from above
        alpha = float(params.pop("alpha"))
        E0 = float(params.pop("E0", 2.0))
        E_fn = lambda t: np.full_like(np.asarray(t, float), E0)

        def B_fn(t):
            t = np.asarray(t, dtype=float)
            return alpha * t ** (-alpha - 1.0) * (
                1.0 + 0.75 * ((alpha + 1.0) / alpha) * t ** alpha * (1.0 - t / 2.0)
            )

        chosen = {"alpha": alpha, "E0": E0}
    elif name == "loglog":
        # a pure C1/t cannot satisfy the integrated inequality near 0 and the
        # derivative inequalities near 1 simultaneously; the 1/log correction
        # bridges the two regimes and recovers ~C1/t asymptotically
        C1 = float(params.pop("C1", 0.85))
        C1b = float(params.pop("C1b", 0.56))
        C2 = float(params.pop("C2", 2.0))
        E_fn = lambda t: C2 * (1.0 + np.log(2.0 / np.asarray(t, float)))

        def B_fn(t):
            t = np.asarray(t, dtype=float)
            return (C1 + C1b / np.log(2.0 / t)) / t

        chosen = {"C1": C1, "C1b": C1b, "C2": C2}
    elif name == "constant":
        E0 = float(params.pop("E0", 1.0))
        B0 = float(params.pop("B0", 1.0))
        E_fn = lambda t: np.full_like(np.asarray(t, float), E0)
        B_fn = lambda t: np.full_like(np.asarray(t, float), B0)
        chosen = {"E0": E0, "B0": B0}
    else:
        raise ConfigurationError(f"unknown envelope {name!r}")
    A = params.pop("A", None)
    if params:
        raise ConfigurationError(f"unknown envelope parameters {sorted(params)}")
    A = float(A) if A is not None else _sized_A(E_fn, B_fn, k)
    return DecayEnvelope(name=name, E_fn=E_fn, B_fn=B_fn, A=A, params=chosen)


def library_envelopes(k=2, alpha=2.0):
    """The candidate envelopes used when sweeping for a matching one."""
    return {
        "power": make_envelope("power", k, alpha=alpha),
        "stretched": make_envelope("stretched", k, alpha=alpha),
        "loglog": make_envelope("loglog", k),
        "constant": make_envelope("constant", k),
    }


# ---------------------------------------------------------------------------
# assumption checking


@dataclass
class AssumptionReport:
    verdict: str  # PASS | FAIL | INCONCLUSIVE
    worst_margin: float
    worst_witness: dict
    margins: dict  # (eq, beta, j) -> {"margin": float, "witness": {...}}
    codomain_ok: bool
    inconclusive: list
    k: int
    probe_meta: dict

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "worst_margin": self.worst_margin,
            "worst_witness": self.worst_witness,
            "margins": {
                f"{eq}:beta={b}:j={j}": rec for (eq, b, j), rec in sorted(self.margins.items())
            },
            "codomain_ok": self.codomain_ok,
            "inconclusive_count": len(self.inconclusive),
            "k": self.k,
            "probe": self.probe_meta,
        }


def _x_probe_nodes(x_range, n=7, floor=1e-3):
    lo, hi = x_range
    pad = 0.02 * (hi - lo)
    nodes = list(np.linspace(lo + pad, hi - pad, n))
    scale = max(abs(lo), abs(hi))
    if lo <= 0.0 <= hi:
        # degeneracy in the parameter often sits at x -> 0: refine there
        for s in np.geomspace(floor * scale, 0.3 * scale, 4):
            if hi >= s:
                nodes.append(s)
            if lo <= -s:
                nodes.append(-s)
    return np.array(sorted(set(round(v, 15) for v in nodes)))


def check_decay_assumptions(
    fam,
    ref,
    env,
    k=None,
    x_nodes=7,
    t_nodes=12,
    t_floor=1e-6,
    quad_tol=1e-9,
    margin_tol=1e-6,
):
    """Evaluate the three decay inequalities on a probe grid.

    Ratios LHS/RHS are recorded per derivative order; PASS means every
    sampled ratio is <= 1 (within margin_tol), FAIL carries the witnessing
    probe point.  Quadrature trouble near t=0 is reported INCONCLUSIVE for
    that point, never silently passed.  A PASS is evidence at probe
    resolution only.
    """
    k = k or fam.k
    dom = fam.domain
    xs = _x_probe_nodes(fam.x_range, n=x_nodes)
    ts = np.geomspace(t_floor, 1.0, t_nodes)
    a_nodes = [0.0] if dom.dim == 1 else list(np.linspace(0, dom.circumference, 5)[:-1])

    margins = {}
    inconclusive = []
    worst = (0.0, None)

    def record(eq, b, j, ratio, witness):
        nonlocal worst
        key = (eq, b, j)
        prev = margins.get(key)
        if prev is None or ratio > prev["margin"]:
            margins[key] = {"margin": float(ratio), "witness": witness}
        if ratio > worst[0]:
            worst = (float(ratio), witness)

    def coords(a, t):
        if dom.dim == 1:
            m = collar_chart(dom, 0.0, t, side=0) if dom.has_boundary else t
            return (m,)
        return (a, t)

    for x in xs:
        for a in a_nodes:
            for t in ts:
                E = float(env.E(a, t))
                B = float(env.B(a, t))
                pt = coords(a, float(t))
                rho_val = float(fam.fn(x, *pt))
                if not rho_val > 0:
                    inconclusive.append({"x": float(x), "a": float(a), "t": float(t),
                                         "reason": "vanishing density"})
                    continue
                for b in range(0, k + 1):
                    for j in range(0, k + 1 - b):
                        dv = float(np.asarray(fam.derivative(x, pt, b, j)))
                        ratio = abs(dv) / rho_val / (E ** b * B ** j)
                        record("derivative", b, j,
                               ratio, {"x": float(x), "a": float(a), "t": float(t),
                                       "beta": b, "j": j})
                for b in range(0, k + 1):
                    try:
                        with warnings.catch_warnings():
                            warnings.simplefilter("error", integrate.IntegrationWarning)
                            val, _ = integrate.quad(
                                lambda s: abs(float(np.asarray(
                                    fam.derivative(x, coords(a, s), b, 0)))),
                                0.0, float(t), limit=200, epsabs=quad_tol, epsrel=1e-8,
                            )
                    except Exception as exc:  # quadrature trouble -> INCONCLUSIVE point
                        inconclusive.append({"x": float(x), "a": float(a), "t": float(t),
                                             "beta": b, "reason": str(exc)})
                        continue
                    ratio = val / rho_val / (E ** b / B)
                    record("integrated", b, 0,
                           ratio, {"x": float(x), "a": float(a), "t": float(t),
                                   "beta": b, "j": 0})

    for a in a_nodes:
        for t in ts:
            E = float(env.E(a, t))
            B = float(env.B(a, t))
            ratio = E ** k / (env.A * B)
            record("closure", k, 0, ratio, {"a": float(a), "t": float(t), "beta": k, "j": 0})

    env_ts = np.geomspace(t_floor, 1.0, 64)
    codomain_ok = bool(np.min(env.E_fn(env_ts)) >= 1.0 - 1e-12
                       and np.min(env.B_fn(env_ts)) >= 1.0 - 1e-12)

    domination_margin = None
    if ref is not None:
        worst_dom = np.inf
        f_vals = np.asarray(ref.profile(env_ts))
        for x in xs:
            for a in a_nodes:
                rho_vals = np.asarray(fam.fn(x, *coords(a, env_ts)))
                worst_dom = min(worst_dom, float(np.min(rho_vals - f_vals)))
        domination_margin = worst_dom

    if worst[0] > 1.0 + margin_tol:
        verdict = "FAIL"
    elif inconclusive:
        verdict = "INCONCLUSIVE"
    else:
        verdict = "PASS"

    return AssumptionReport(
        verdict=verdict,
        worst_margin=worst[0],
        worst_witness=worst[1] or {},
        margins=margins,
        codomain_ok=codomain_ok,
        inconclusive=inconclusive,
        k=k,
        probe_meta={
            "x_nodes": [float(v) for v in xs],
            "t_floor": t_floor,
            "t_nodes": t_nodes,
            "envelope": env.name,
            "sampling_based": True,
            "domination_margin": domination_margin,
        },
    )
