"""Composed transport families, pushforward verification, and probes.

The full construction composes a boundary rearrangement G with an interior
flow map F built on the complement of a collar neighbourhood V:

* the reference measure has density rho0 = f + (1 - mass(f)) * bump, where
  f is the dominated margin reference and the bump is supported away from
  the collar, making rho0 a probability density that equals f on V;
* G uniformises the family near the boundary so nu = (G^{-1})_* family
  equals f on [0, 1/3] and is bounded below past 1/6;
* F pushes rho0 to nu on the complement of V = [0, v), v in (1/6, 1/3),
  and is extended by the identity on V;
* T = G o F then pushes rho0 to the family member, strictly increasing in
  the 1D case, hence equal to the monotone rearrangement.

On domains without boundary (and generally whenever a global positive
floor is declared) the pipeline runs the interior stage alone against the
uniform reference.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate, optimize, special
from scipy.stats import qmc

from .collar import build_collar_map
from .density import make_reference
from .errors import ConfigurationError, DegeneracyError, MoserTransportError
from .geometry import INTERVAL, default_grid, interval_grid
from .moser import moser_map_from_values


def _bump_profile(k, lo=0.4, hi=0.9):
    """Polynomial bump supported in [lo, hi], integrating to one, C^k at the ends."""
    q = k + 1
    width = hi - lo
    norm = width ** (2 * q + 1) * special.beta(q + 1, q + 1)

    def bump(m):
        m = np.asarray(m, dtype=float)
        u = (m - lo) * (hi - m)
        return np.where((m > lo) & (m < hi), np.maximum(u, 0.0) ** q / norm, 0.0)

    return bump


@dataclass
class TransportFamily:
    """Lazily built family of composed transport maps, immutable once built.

    Per-parameter collar and interior maps are cached; evaluation sorts the
    query points, pushes them through the stages, and restores the input
    order, so batch evaluation over a mesh costs one sweep.
    """

    domain: object
    fam: object
    mode: str
    v: float
    grid_n: int
    steps: int
    k: int
    seed: int
    tol_push: float
    tol_solver: float
    tol_mass: float
    ref: object = None
    rho0_fn: object = None
    floor: float = 1e-6
    collar_t_nodes: int = 320
    construction_log: dict = field(default_factory=dict)
    _collars: dict = field(default_factory=dict)
    _mosers: dict = field(default_factory=dict)
    _ref_quantile: object = None

    @property
    def x_range(self):
        return self.fam.x_range

    # -- per-parameter stages ------------------------------------------------
    def collar_at(self, x):
        key = round(float(x), 15)
        if key not in self._collars:
            t_grid = np.geomspace(1e-6, 1.0, self.collar_t_nodes)
            t_grid[-1] = 1.0
            self._collars[key] = build_collar_map(
                self.fam, self.ref, x, t_grid=t_grid, tol=1e-10, k=self.k
            )
        return self._collars[key]

    def moser_at(self, x):
        key = round(float(x), 15)
        if key not in self._mosers:
            if self.mode == "moser_only":
                grid = default_grid(self.domain, self.grid_n)
                if grid.dim == 1:
                    nodes = grid.nodes(0)
                    rhox = np.asarray(self.fam.fn(x, nodes), dtype=float)
                    rho0 = self.rho0_fn(nodes)
                else:
                    aa, tt = grid.meshes()
                    rhox = np.asarray(self.fam.fn(x, aa, tt), dtype=float)
                    rho0 = self.rho0_fn(aa, tt)
            else:
                grid = interval_grid(self.grid_n, lo=self.v, hi=1.0)
                nodes = grid.nodes(0)
                cm = self.collar_at(x)
                gs = cm.g_batch(nodes)
                rhox = cm.nu(nodes, g_values=gs)
                rho0 = self.rho0_fn(nodes)
            mm, potential = moser_map_from_values(
                rho0, rhox, grid, x=x, steps=self.steps,
                tol=self.tol_solver, tol_mass=self.tol_mass,
            )
            self._mosers[key] = (mm, potential)
        return self._mosers[key]

    # -- evaluation ------------------------------------------------------------
    def map_values(self, x, points):
        """T_x at the given points (1D array of m, or (N, 2) for 2D modes)."""
        if self.domain.dim == 2:
            mm, _ = self.moser_at(x)
            return mm.evaluate(np.asarray(points, dtype=float))
        m = np.asarray(points, dtype=float)
        scalar = m.ndim == 0
        m = np.atleast_1d(m).astype(float)
        order = np.argsort(m, kind="stable")
        ms = m[order]
        if self.mode == "moser_only":
            mm, _ = self.moser_at(x)
            out_sorted = mm.evaluate(ms)
        else:
            cm = self.collar_at(x)
            mm, _ = self.moser_at(x)
            out_sorted = np.empty_like(ms)
            low = ms < self.v
            if np.any(low):
                gs = cm.g_batch(ms[low])
                out_sorted[low] = cm.gbar(ms[low], g_values=gs)
            if np.any(~low):
                imgs = mm.evaluate(ms[~low])
                imgs = np.clip(imgs, self.v, 1.0)
                idx = np.argsort(imgs, kind="stable")
                gs = cm.g_batch(imgs[idx])
                vals = cm.gbar(imgs[idx], g_values=gs)
                back = np.empty_like(vals)
                back[idx] = vals
                out_sorted[~low] = back
        out = np.empty_like(out_sorted)
        out[order] = out_sorted
        return float(out[0]) if scalar else out

    # -- reference handling ------------------------------------------------------
    def reference_values(self, *coords):
        return self.rho0_fn(*coords)

    def reference_quantile(self, u):
        """Inverse CDF of the reference density (1D), from a dense cached table."""
        if self._ref_quantile is None:
            nodes = np.unique(np.concatenate([
                np.linspace(0.0, 1.0, 2 ** 14 + 1), np.geomspace(1e-9, 1e-2, 300)
            ]))
            vals = self.rho0_fn(nodes)
            cdf = integrate.cumulative_trapezoid(vals, nodes, initial=0.0)
            cdf /= cdf[-1]
            self._ref_quantile = (nodes, cdf)
        nodes, cdf = self._ref_quantile
        return np.interp(np.asarray(u, dtype=float), cdf, nodes)

    # -- verification ------------------------------------------------------------
    def interface_gap(self, x):
        """|T from the V side - T from the complement side| at the interface."""
        if self.mode != "full":
            return 0.0
        cm = self.collar_at(x)
        mm, _ = self.moser_at(x)
        v_side = cm.gbar(np.asarray(self.v))
        phi_v = float(mm.evaluate(np.asarray([self.v]))[0])
        complement_side = cm.gbar(np.asarray(np.clip(phi_v, self.v, 1.0)))
        return abs(float(v_side) - float(complement_side))

    def pushforward_check(self, x, n_fine=2 ** 13):
        if self.domain.dim == 2:
            return self.pushforward_check_2d(x)
        y, nu = pushforward_density_1d(
            lambda pts: self.map_values(x, pts), self.rho0_fn, n_fine=n_fine
        )
        target = np.asarray(self.fam.fn(x, y), dtype=float)
        l1 = float(np.trapezoid(np.abs(nu - target), y))
        return {"x": float(x), "l1_error": l1, "passed": bool(l1 <= self.tol_push)}

    def pushforward_check_2d(self, x, n_samples=2 ** 18, bins=64):
        """Linear-binned sample pushforward against the tent-binned target."""
        hist = pushforward_histogram_2d(
            lambda pts: self.map_values(x, pts), self.domain,
            n_samples=n_samples, bins=bins, seed=self.seed, scramble=False,
            binning="linear",
        )
        target = binned_target_2d(lambda a, t: self.fam.fn(x, a, t),
                                  self.domain, bins=bins)
        l1 = float(np.abs(hist["probs"] - target).sum())
        return {"x": float(x), "l1_error": l1, "passed": bool(l1 <= self.tol_push),
                "n_samples": int(n_samples), "bins": int(bins)}

    def verify(self, x_values=None, n_fine=2 ** 13):
        lo, hi = self.fam.x_range
        if x_values is None:
            x_values = np.linspace(lo, hi, 5)
        per_x = []
        for x in x_values:
            rec = self.pushforward_check(x, n_fine=n_fine)
            if self.mode == "full":
                rec["interface_gap"] = self.interface_gap(x)
                cm = self.collar_at(x)
                rec["t_star_sample"] = cm.t_star_sample()
                rec["nu_min_past_sixth"] = cm.nu_min_past()
            per_x.append(rec)
        log = {
            "per_x": per_x,
            "all_passed": bool(all(r["passed"] for r in per_x)),
        }
        if self.mode == "full":
            log["t_star"] = min(r["t_star_sample"] for r in per_x)
            log["nu_min"] = min(r["nu_min_past_sixth"] for r in per_x)
            log["reference_mass"] = float(self.ref.mass)
        self.construction_log.update(log)
        return log


def build_representation(
    fam,
    mode="auto",
    v=0.25,
    margin=0.5,
    grid_n=1024,
    steps=256,
    tol_push=1e-3,
    tol_solver=1e-10,
    tol_mass=1e-4,
    seed=0,
    floor=1e-6,
    collar_t_nodes=320,
    k=None,
    verify=False,
    x_samples=None,
):
    """Build the composed transport family for a density family.

    ``mode`` is ``full`` (collar + interior stages), ``moser_only``
    (interior stage against the uniform reference; requires a global
    density floor), or ``auto`` (moser_only exactly on boundaryless
    domains).  The collar split V = [0, v) needs v in (1/6, 1/3).
    """
    k = k or fam.k
    if not (1.0 / 6.0 < v < 1.0 / 3.0):
        raise ConfigurationError(f"collar split v={v} must lie in (1/6, 1/3)")
    if mode == "auto":
        mode = "full" if fam.domain.has_boundary else "moser_only"
    if mode not in ("full", "moser_only"):
        raise ConfigurationError(f"unknown pipeline mode {mode!r}")
    if mode == "full" and fam.domain.kind != INTERVAL:
        raise ConfigurationError(
            "the composed collar+interior pipeline is implemented for the interval; "
            "use moser_only with a declared floor on 2D domains"
        )
    fam.validate(x_samples=5, tol_norm=max(tol_mass, 1e-8))

    if mode == "moser_only":
        measured = fam.min_density()
        if measured < floor:
            raise DegeneracyError(
                f"moser_only requires a global density floor: measured min {measured:.3e} "
                f"below declared floor {floor:.3e}"
            )
        volume = fam.domain.volume
        if fam.domain.dim == 1:
            rho0_fn = lambda m: np.ones_like(np.asarray(m, dtype=float)) / volume
        else:
            rho0_fn = lambda a, t: np.ones_like(np.asarray(a, dtype=float)) / volume
        tf = TransportFamily(
            domain=fam.domain, fam=fam, mode=mode, v=v, grid_n=grid_n, steps=steps,
            k=k, seed=seed, tol_push=tol_push, tol_solver=tol_solver, tol_mass=tol_mass,
            ref=None, rho0_fn=rho0_fn, floor=floor, collar_t_nodes=collar_t_nodes,
        )
    else:
        ref = make_reference(fam, margin=margin)
        deficit = 1.0 - ref.mass
        if deficit < 0:
            raise DegeneracyError("reference mass exceeds 1; margin too small")
        bump = _bump_profile(k)

        def rho0_fn(m):
            return ref.value_at(m) + deficit * bump(m)

        tf = TransportFamily(
            domain=fam.domain, fam=fam, mode=mode, v=v, grid_n=grid_n, steps=steps,
            k=k, seed=seed, tol_push=tol_push, tol_solver=tol_solver, tol_mass=tol_mass,
            ref=ref, rho0_fn=rho0_fn, floor=floor, collar_t_nodes=collar_t_nodes,
        )
    if verify:
        lo, hi = fam.x_range
        xs = np.linspace(lo, hi, x_samples or 5)
        log = tf.verify(xs)
        if not log["all_passed"]:
            bad = [r for r in log["per_x"] if not r["passed"]]
            raise MoserTransportError(
                f"pushforward verification failed at x={[r['x'] for r in bad]}"
            )
    return tf


# ---------------------------------------------------------------------------
# pushforward evaluation


def _fine_mesh(n_fine, lo=0.0, hi=1.0):
    core = np.linspace(lo, hi, n_fine + 1)
    tail = lo + (hi - lo) * np.geomspace(1e-7, 1e-2, 160)
    return np.unique(np.concatenate([core, tail]))


def pushforward_density_1d(map_fn, mu_density_fn, n_fine=2 ** 13, out_nodes=None):
    """Exact monotone change of variables for the 1D pushforward density.

    The pushforward CDF at the image points equals the source CDF at the
    mesh (no approximation beyond quadrature of the source density); the
    density is the derivative of the monotone CDF interpolant.
    """
    mesh = _fine_mesh(n_fine)
    y = np.asarray(map_fn(mesh), dtype=float)
    dy = np.diff(y)
    if np.any(dy < -1e-12):
        bad = int(np.argmin(dy))
        raise ConfigurationError(
            f"1D pushforward needs a strictly increasing map; violated near m={mesh[bad]:g}"
        )
    # merge ties below root-finding resolution (maps degenerating at the
    # boundary can collapse neighbouring images to the same double)
    keep = np.concatenate([[True], dy > 1e-15])
    mesh = mesh[keep]
    y = y[keep]
    mu = np.asarray(mu_density_fn(mesh), dtype=float)
    cdf = integrate.cumulative_trapezoid(mu, mesh, initial=0.0)
    total = cdf[-1]
    if not total > 0:
        raise ConfigurationError("source density has no mass")
    cdf /= total
    pch = interpolate.PchipInterpolator(y, cdf)
    if out_nodes is None:
        out_nodes = np.linspace(y[0], y[-1], 2 ** 12 + 1)
    nu = pch.derivative()(out_nodes)
    return out_nodes, np.maximum(nu, 0.0)


def pushforward_histogram_2d(map_fn, domain, n_samples=2 ** 20, bins=64, seed=0,
                             scramble=True, binning="box"):
    """Quasi-random sample pushforward on a 2D domain with uniform reference.

    Draws a Sobol point set (deterministic for a fixed seed; unscrambled
    nets ignore the seed), pushes it through the map, and bins the images.
    ``binning="box"`` counts sharp cells; ``binning="linear"`` deposits
    cloud-in-cell tent weights on the cell-centre lattice, which keeps the
    quasi-random integrand continuous and therefore converges much faster
    than indicator counting.  Returns bin probabilities with the per-bin
    sampling error estimate ~ N^{-1/2}.
    """
    engine = qmc.Sobol(d=2, scramble=scramble, seed=seed)
    m = int(math.ceil(math.log2(max(n_samples, 2))))
    pts = engine.random(2 ** m)[:n_samples]
    L = domain.circumference
    points = np.stack([pts[:, 0] * L, pts[:, 1]], axis=-1)
    imgs = np.asarray(map_fn(points), dtype=float)
    a_edges = np.linspace(0.0, L, bins + 1)
    t_edges = np.linspace(0.0, 1.0, bins + 1)
    if binning == "box":
        counts, _, _ = np.histogram2d(
            imgs[:, 0], imgs[:, 1], bins=bins, range=[[0.0, L], [0.0, 1.0]]
        )
    elif binning == "linear":
        counts = _cic_deposit(imgs, bins, L)
    else:
        raise ConfigurationError(f"unknown binning {binning!r}")
    probs = counts / n_samples
    err = np.sqrt(np.abs(probs) * np.maximum(1.0 - probs, 0.0) / n_samples)
    return {
        "probs": probs,
        "err_bars": err,
        "a_edges": a_edges,
        "t_edges": t_edges,
        "n_samples": int(n_samples),
        "binning": binning,
    }


def _cic_deposit(imgs, bins, L, weights=None):
    """Tent-weight deposit on the cell-centre lattice.

    Periodic wrap along the circle axis; tents clamped at the bounded-axis
    ends so the weights still sum to one per sample.
    """
    ha = L / bins
    ht = 1.0 / bins
    w = np.ones(len(imgs)) if weights is None else np.asarray(weights, dtype=float)
    ra = imgs[:, 0] / ha - 0.5
    ia = np.floor(ra).astype(np.intp)
    fa = ra - ia
    ia0 = ia % bins
    ia1 = (ia + 1) % bins
    rt = np.clip(imgs[:, 1] / ht - 0.5, 0.0, bins - 1.0)
    it = np.clip(np.floor(rt).astype(np.intp), 0, bins - 2)
    ft = rt - it
    counts = np.zeros((bins, bins))
    np.add.at(counts, (ia0, it), w * (1 - fa) * (1 - ft))
    np.add.at(counts, (ia0, it + 1), w * (1 - fa) * ft)
    np.add.at(counts, (ia1, it), w * fa * (1 - ft))
    np.add.at(counts, (ia1, it + 1), w * fa * ft)
    return counts


def binned_target_2d(density_fn, domain, bins=64, oversample=8):
    """Tent-binned cell masses of a 2D density, by midpoint-lattice quadrature.

    Uses the same weight functions as the linear-binning deposit, so the
    comparison against a sampled pushforward is apples to apples.
    """
    L = domain.circumference
    n = bins * oversample
    a = (np.arange(n) + 0.5) * (L / n)
    t = (np.arange(n) + 0.5) * (1.0 / n)
    aa, tt = np.meshgrid(a, t, indexing="ij")
    vals = np.asarray(density_fn(aa, tt), dtype=float).reshape(-1)
    pts = np.stack([aa.reshape(-1), tt.reshape(-1)], axis=-1)
    cell_area = (L / n) * (1.0 / n)
    return _cic_deposit(pts, bins, L, weights=vals * cell_area)


def pushforward_density(map_fn, mu_density, domain, **kwargs):
    """Dispatch: exact change of variables in 1D, sample histogram in 2D."""
    if domain.dim == 1:
        return pushforward_density_1d(map_fn, mu_density, **kwargs)
    return pushforward_histogram_2d(map_fn, domain, **kwargs)


# ---------------------------------------------------------------------------
# uniform C^k probes


@dataclass
class CkReport:
    k: int
    sups: dict
    witnesses: dict
    richardson_stable: dict
    stable_fraction: dict

    def to_dict(self):
        return {
            "k": self.k,
            "sups": {str(j): v for j, v in self.sups.items()},
            "witnesses": {str(j): w for j, w in self.witnesses.items()},
            "richardson_stable": {str(j): bool(v) for j, v in self.richardson_stable.items()},
            "stable_fraction": {str(j): v for j, v in self.stable_fraction.items()},
        }


def _fd_order_j(map_family, x, m_grid, j, h):
    """Symmetric j-th difference with half-integer offsets; second order.

    Returns per-point magnitudes (euclidean norm over components for maps
    into 2D domains).
    """
    total = None
    for i in range(j + 1):
        off = (j / 2.0 - i) * h
        w = (-1) ** i * math.comb(j, i)
        vals = w * np.asarray(map_family.map_values(x + off, m_grid), dtype=float)
        total = vals if total is None else total + vals
    total = total / h ** j
    if total.ndim == 2:
        return np.linalg.norm(total, axis=-1)
    return total


def estimate_uniform_Ck(map_family, m_grid, x_grid, k=1, fd_fraction=0.25, atol=1e-9):
    """Finite-difference sups of |d^j/dx^j T_x(m)| over (m, x), j = 1..k.

    Each probe is computed at steps h and h/2 (Richardson pair); a pair
    whose magnitudes differ by more than a factor 2 marks the probe
    unstable.  Divergence is a finding for the caller, not an error.
    """
    lo, hi = map_family.x_range
    m_grid = np.asarray(m_grid, dtype=float)
    sups = {}
    wits = {}
    stable = {}
    frac = {}
    for j in range(1, k + 1):
        best = 0.0
        wit = {}
        n_stable = 0
        n_tot = 0
        for x in np.asarray(x_grid, dtype=float):
            edge = min(x - lo, hi - x)
            if edge <= 0:
                continue
            scale = abs(x) if abs(x) > 0 else (hi - lo)
            h = fd_fraction * min(scale, 2.0 * edge / (j + 1))
            if h <= 0:
                continue
            d_h = np.abs(_fd_order_j(map_family, x, m_grid, j, h))
            d_h2 = _fd_order_j(map_family, x, m_grid, j, h / 2)
            mags = np.abs(d_h2)
            i_max = int(np.argmax(mags))
            if mags[i_max] > best:
                best = float(mags[i_max])
                probe = m_grid[i_max]
                wit = {"x": float(x), "h": float(h),
                       "m": [float(v) for v in np.atleast_1d(probe)]}
            big = np.maximum(d_h, mags) > atol
            nonzero = d_h > 0
            ratio = np.ones_like(mags)
            ratio[nonzero] = mags[nonzero] / d_h[nonzero]
            ratio_ok = ~big | ((ratio >= 0.5) & (ratio <= 2.0) & nonzero)
            n_stable += int(np.sum(ratio_ok))
            n_tot += ratio_ok.size
        sups[j] = best
        wits[j] = wit
        stable[j] = bool(n_tot > 0 and n_stable == n_tot)
        frac[j] = (n_stable / n_tot) if n_tot else 1.0
    return CkReport(k=k, sups=sups, witnesses=wits, richardson_stable=stable,
                    stable_fraction=frac)


@dataclass
class FloorScanReport:
    floors: list
    sups: dict       # order -> list per floor
    growths: dict    # order -> consecutive ratios
    verdict: str     # STABLE | UNBOUNDED-SUSPECT
    threshold: float
    reports: list

    def to_dict(self):
        return {
            "floors": self.floors,
            "sups": {str(j): v for j, v in self.sups.items()},
            "growths": {str(j): v for j, v in self.growths.items()},
            "verdict": self.verdict,
            "threshold": self.threshold,
        }


def make_x_grid(x_range, floor_mode, m_floor, n=10, pad_fraction=0.05):
    """Probe grid over the parameter range for the C^k scan.

    ``fixed`` pads the range and spaces nodes evenly; ``match`` adds
    log-spaced nodes approaching 0 at the scale m_floor^(3/2), which is
    where parameter-derivative blow-up concentrates for boundary-degenerate
    families.
    """
    lo, hi = x_range
    pad = pad_fraction * (hi - lo)
    nodes = list(np.linspace(lo + pad, hi - pad, n))
    if floor_mode == "match" and lo <= 0.0 <= hi:
        x_floor = max(m_floor, 1e-12) ** 1.5
        upper = 0.45 * max(abs(lo), abs(hi))
        if x_floor < upper:
            extra = np.geomspace(x_floor, upper, 8)
            nodes += [v for v in extra if lo < v < hi]
            nodes += [-v for v in extra if lo < -v < hi]
    return np.array(sorted(set(nodes)))


def ck_floor_scan(map_family, floors, k=1, floor_mode="fixed", m_per_floor=25,
                  growth_threshold=2.0, x_nodes=10):
    """C^k sups under m-grid floor refinement; the blow-up dichotomy probe.

    UNBOUNDED-SUSPECT when every refinement grows some order's sup by at
    least the threshold; STABLE otherwise.
    """
    if len(floors) < 2:
        raise ConfigurationError("floor scan needs at least two floors")
    sups = {j: [] for j in range(1, k + 1)}
    reports = []
    domain = getattr(map_family, "domain", None)
    for floor in floors:
        ts = np.geomspace(floor, 1.0, m_per_floor)
        if domain is not None and domain.dim == 2:
            a_nodes = np.linspace(0.0, domain.circumference, 5)[:-1]
            aa, tt = np.meshgrid(a_nodes, ts, indexing="ij")
            m_grid = np.stack([aa.reshape(-1), tt.reshape(-1)], axis=-1)
        else:
            m_grid = ts
        x_grid = make_x_grid(map_family.x_range, floor_mode, floor, n=x_nodes)
        rep = estimate_uniform_Ck(map_family, m_grid, x_grid, k=k)
        reports.append(rep)
        for j in range(1, k + 1):
            sups[j].append(rep.sups[j])
    growths = {}
    suspect = False
    for j in range(1, k + 1):
        seq = sups[j]
        g = [seq[i + 1] / seq[i] if seq[i] > 1e-12 else 1.0 for i in range(len(seq) - 1)]
        growths[j] = g
        if g and all(r >= growth_threshold for r in g):
            suspect = True
    return FloorScanReport(
        floors=[float(f) for f in floors], sups=sups, growths=growths,
        verdict="UNBOUNDED-SUSPECT" if suspect else "STABLE",
        threshold=growth_threshold, reports=reports,
    )


# ---------------------------------------------------------------------------
# quantile transports (direct rearrangement representations)


class QuantileTransport:
    """Monotone rearrangement transport from a fixed family member.

    T_x = F_x^{-1} o F_ref with both CDFs evaluated in closed form, inverted
    by bracketed root-finding.  Used where the interior-flow pipeline needs
    a positive floor the family does not have.
    """

    def __init__(self, fam, ref_x=None, ref_cdf=None):
        if fam.cdf_fn is None:
            raise ConfigurationError("quantile transport needs a family with a CDF")
        self.fam = fam
        if ref_cdf is None:
            if ref_x is None:
                raise ConfigurationError("provide ref_x or ref_cdf")
            ref_x = float(ref_x)
            ref_cdf = lambda m: fam.cdf(ref_x, m)
        self.ref_cdf = ref_cdf

    @property
    def x_range(self):
        return self.fam.x_range

    def map_values(self, x, points):
        m = np.atleast_1d(np.asarray(points, dtype=float))
        ps = np.asarray(self.ref_cdf(m), dtype=float)
        out = np.empty_like(ps)
        for i, p in enumerate(ps):
            if p <= 0.0:
                out[i] = 0.0
            elif p >= 1.0:
                out[i] = 1.0
            else:
                out[i] = optimize.brentq(
                    lambda q: float(self.fam.cdf(x, q)) - p, 0.0, 1.0,
                    xtol=1e-300, rtol=1e-15, maxiter=300,
                )
        return out if np.ndim(points) else float(out[0])


# ---------------------------------------------------------------------------
# random map samples


@dataclass
class RandomMapSample:
    """One drawn seed point with its parameter-to-image map handle."""

    omega: object
    _family: object

    def map(self, x):
        return self._family.map_values(x, np.atleast_1d(np.asarray(self.omega)))[0]

    def fd_dx(self, x, h=1e-4):
        return (self.map(x + h) - self.map(x - h)) / (2 * h)


def sample_random_maps(tf, count, seed=0):
    """Draw seed points from the reference measure; return map handles.

    Uses a counter-based Philox stream keyed by the seed, so draws are
    reproducible and splittable across tasks.  1D draws go through the
    reference inverse CDF; 2D (uniform reference) scales raw uniforms.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    if tf.domain.dim == 1:
        u = gen.random(count)
        omegas = tf.reference_quantile(u)
        return [RandomMapSample(float(w), tf) for w in omegas]
    u = gen.random((count, 2))
    pts = np.stack([u[:, 0] * tf.domain.circumference, u[:, 1]], axis=-1)
    return [RandomMapSample(p, tf) for p in pts]


# ---------------------------------------------------------------------------
# conjugation by an outer parametrised diffeomorphism family


@dataclass(frozen=True)
class ParamDiffeo:
    """Outer family R_x with an evaluator and optional x-derivative."""

    fn: object
    dfdx: object = None
    name: str = "R"


@dataclass
class ConjugatedFamily:
    base: object
    outer: ParamDiffeo

    @property
    def x_range(self):
        return self.base.x_range

    def map_values(self, x, points):
        inner = self.base.map_values(x, points)
        return self.outer.fn(x, inner)


def conjugate_family(base, outer, check_nodes=65):
    """Compose an outer diffeomorphism family with a transport family.

    Verifies injectivity of the outer maps on a sample grid for a few
    parameter values; the composed family exposes the same probe surface.
    """
    lo, hi = base.x_range
    grid = np.linspace(0.0, 1.0, check_nodes)
    for x in np.linspace(lo, hi, 5):
        vals = np.asarray(outer.fn(x, grid), dtype=float)
        d = np.diff(vals)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigurationError(
                f"outer family {outer.name} is not injective on samples at x={x:g}"
            )
    return ConjugatedFamily(base=base, outer=outer)
