"""Semicircular flow: Stieltjes fixed point, evolved densities, quantile ODE.

The flow of a measure rho is characterised through its Stieltjes transform,
which for t > 0 is the unique solution with Im m > 0 of

    m = int d rho(y) / (exp(-t/2) y - z - (1 - exp(-t)) m).

Writing a = exp(-t/2), s = 1 - exp(-t), the right side is
(1/a) m_rho((z + s m)/a), so every evaluation reduces to the transform of the
initial measure at a shifted point.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DensityFloorError, FlowSolverError, SingularEvaluationError
from .measures import (Measure1D, hilbert_transform, quantiles,
                       transform_with_derivative)
from .report import DiagnosticsReport


@dataclass(frozen=True)
class FlowSolverConfig:
    """Fixed-point solver settings.

    eta_star of None means 1e-6 times the support width of the initial
    measure (at least 1e-6). Points are evaluated at height max(Im z, eta_star).
    """

    tol: float = 1e-12
    max_iter: int = 200
    damping: float = 0.5
    eta_star: float = None
    density_floor: float = 1e-3

    def __post_init__(self):
        if not self.tol >= 1e-14:
            raise ValueError("tol must be >= 1e-14")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.eta_star is not None and self.eta_star < 0:
            raise ValueError("eta_star must be nonnegative")

    def resolve_eta(self, rho0):
        if self.eta_star is not None:
            return float(self.eta_star)
        return 1e-6 * max(rho0.width, 1.0)


@dataclass
class QuantilePath:
    indices: np.ndarray
    times: np.ndarray
    gamma: np.ndarray  # shape (len(indices), len(times))
    labeling_shift: int = 0
    upsilon_L: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        self.times = np.asarray(self.times, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.shape != (self.indices.size, self.times.size):
            raise ValueError("gamma must have shape (len(indices), len(times))")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def at(self, t):
        """Positions at time t (linear interpolation between stored times)."""
        return np.array([np.interp(t, self.times, row) for row in self.gamma])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "index", "gamma"])
            for j, t in enumerate(self.times):
                for i, k in enumerate(self.indices):
                    w.writerow([repr(float(t)), int(k), repr(float(self.gamma[i, j]))])


def flow_coefficients(t):
    a = math.exp(-t / 2.0)
    return a, -math.expm1(-t)


def _rhs(rho0, a, s, z, m):
    """G(m) and dG/dm for the fixed-point map at points z."""
    zeta = (z + s * m) / a
    g, dg = transform_with_derivative(rho0, zeta)
    return g / a, dg * (s / (a * a))


def _iterate(rho0, a, s, z, m, cfg):
    """Safeguarded Newton on m = G(m), falling back to damped fixed point.

    Convergence is |G(m) - m| <= tol * max(1, |m|).
    Every accepted iterate keeps Im m > 0: Newton candidates leaving the upper
    half plane or not decreasing the residual are shortened, and below a
    step factor of 0.1 the plain damped map (which preserves C+) is used.
    """
    g, dg = _rhs(rho0, a, s, z, m)
    res = np.abs(g - m)
    step = np.ones(m.size)
    for it in range(cfg.max_iter):
        active = res > cfg.tol * np.maximum(1.0, np.abs(m))
        if not np.any(active):
            return m, res, it
        idx = np.flatnonzero(active)
        mi, gi, dgi = m[idx], g[idx], dg[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = (gi - mi) / (1.0 - dgi)
        use_fp = step[idx] < 0.1
        cand = np.where(use_fp, mi + cfg.damping * (gi - mi), mi + step[idx] * newton)
        bad = ~np.isfinite(cand) | (cand.imag <= 0)
        cand = np.where(bad, mi + 0.1 * (gi - mi), cand)
        gc, dgc = _rhs(rho0, a, s, z[idx], cand)
        resc = np.abs(gc - cand)
        accept = (resc < res[idx]) | use_fp | bad
        acc = idx[accept]
        m[acc], g[acc], dg[acc], res[acc] = cand[accept], gc[accept], dgc[accept], resc[accept]
        step[acc] = np.minimum(1.0, 2.0 * step[acc])
        rej = idx[~accept]
        step[rej] *= 0.5
    return m, res, cfg.max_iter


def _solve(rho0, t, z, cfg, m_init=None):
    """Vectorised fixed-point solve at the (already regularised) points z."""
    z = np.asarray(z, dtype=complex).ravel()
    if t == 0:
        m, _ = transform_with_derivative(rho0, z)
        return m
    a, s = flow_coefficients(t)
    return _solve_as(rho0, a, s, z, cfg, m_init)


def _solve_as(rho0, a, s, z, cfg, m_init=None):
    if m_init is not None:
        m = np.array(m_init, dtype=complex).ravel()
        m, res, _ = _iterate(rho0, a, s, z, m, cfg)
        if np.all(res <= cfg.tol * np.maximum(1.0, np.abs(m))) and np.all(m.imag > 0):
            return m
    # continuation in eta from max(1, eta) down to the target height
    eta_t = z.imag
    top = np.maximum(1.0, eta_t)
    n_levels = int(np.ceil(np.max(np.log10(top / eta_t)) * 2)) + 1
    m = -1.0 / (z.real + 1j * top)
    res = None
    for lev in range(n_levels):
        frac = lev / max(n_levels - 1, 1)
        eta = top ** (1 - frac) * eta_t ** frac
        zl = z.real + 1j * eta
        m, res, _ = _iterate(rho0, a, s, zl, m, cfg)
        if np.any(m.imag <= 0):
            bad = np.flatnonzero(m.imag <= 0)[0]
            raise FlowSolverError(f"branch lost at z={zl[bad]!r}", z=zl[bad])
    rel = res / np.maximum(1.0, np.abs(m))
    if np.any(rel > cfg.tol):
        bad = int(np.argmax(rel))
        raise FlowSolverError(
            f"fixed point not converged at z={z[bad]!r}: residual {res[bad]:.3e} after "
            f"{cfg.max_iter} iterations", z=z[bad], residual=float(res[bad]))
    return m


def free_convolution_transform(rho, scale, var, z, cfg=None):
    """Stieltjes transform of (scale * rho) boxplus semicircle(variance var)."""
    cfg = cfg or FlowSolverConfig()
    if not scale > 0 or not var >= 0:
        raise ValueError("need scale > 0 and var >= 0")
    zarr = np.asarray(z, dtype=complex)
    zr = _regularise(zarr, cfg.resolve_eta(rho)).ravel()
    if var == 0:
        m = transform_with_derivative(rho, zr / scale)[0] / scale
    else:
        m = _solve_as(rho, scale, var, zr, cfg)
    return m.reshape(zarr.shape)


def free_convolution_density(rho, scale, var, grid, cfg=None):
    grid = np.asarray(grid, dtype=float)
    m = free_convolution_transform(rho, scale, var, grid + 0j, cfg)
    dens = np.clip(m.imag, 0.0, None) / np.pi
    return Measure1D.gridded(grid, dens, meta={"scale": scale, "var": var,
                                               "raw_mass": float(np.trapezoid(dens, grid))})


def _regularise(z, eta):
    z = np.asarray(z, dtype=complex)
    return z.real + 1j * np.maximum(z.imag, eta)


def solve_mt(rho0, t, z, cfg=None):
    """Stieltjes transform m_t(z) of the semicircular flow of rho0 at time t."""
    cfg = cfg or FlowSolverConfig()
    if t < 0:
        raise ValueError("t must be nonnegative")
    eta = cfg.resolve_eta(rho0)
    zarr = np.asarray(z, dtype=complex)
    if np.any(zarr.imag < 0) or np.any(zarr.imag + eta <= 0):
        raise ValueError("need Im z + eta_star > 0")
    m = _solve(rho0, t, _regularise(zarr, eta).ravel(), cfg).reshape(zarr.shape)
    return complex(m) if m.ndim == 0 else m


def fixed_point_residual(rho0, t, z, m):
    a, s = flow_coefficients(t)
    z = np.asarray(z, dtype=complex).ravel()
    g, _ = _rhs(rho0, a, s, z, np.asarray(m, dtype=complex).ravel())
    return np.abs(g - np.asarray(m).ravel())


def flow_density(rho0, t, grid, cfg=None, eta_floor=0.0):
    """Density of F_t[rho0] on `grid` as Im m_t(E + i eta_eff)/pi.

    eta_eff = max(eta_star, eta_floor). The raw trapezoidal mass before
    renormalization is stored in meta["raw_mass"].
    """
    if not t > 0:
        raise ValueError("flow_density needs t > 0")
    cfg = cfg or FlowSolverConfig()
    grid = np.asarray(grid, dtype=float)
    eta = max(cfg.resolve_eta(rho0), eta_floor)
    m = _solve(rho0, t, grid + 1j * eta, cfg)
    dens = np.clip(m.imag, 0.0, None) / np.pi
    raw = float(np.trapezoid(dens, grid))
    if abs(1.0 - raw) > 1e-2:
        raise FlowSolverError(f"grid does not cover the evolved support: mass {raw:.6f}")
    return Measure1D.gridded(grid, dens, meta={"t": t, "eta_eff": eta, "raw_mass": raw})


def density_and_hilbert(rho0, t, E, cfg=None, m_init=None):
    """(rho_t^eta(E), T rho_t^eta(E), m) at height eta = eta_star."""
    cfg = cfg or FlowSolverConfig()
    eta = cfg.resolve_eta(rho0)
    z = np.asarray(E, dtype=float).ravel() + 1j * eta
    m = _solve(rho0, t, z, cfg, m_init=m_init)
    return m.imag / np.pi, m.real, m


def _smoothed_atomic_quantiles(rho0, eta, levels):
    """Quantiles of P_eta * rho0 for atomic rho0 (Cauchy CDFs, bisection)."""
    a, w = rho0.points, rho0.weights

    def cdf(x):
        return (w[None, :] * (0.5 + np.arctan((x[:, None] - a[None, :]) / eta) / np.pi)).sum(1)

    lo = np.full(levels.size, a[0] - 1.0)
    hi = np.full(levels.size, a[-1] + 1.0)
    while np.any(cdf(lo) > levels):
        lo = np.where(cdf(lo) > levels, lo - 2 * (hi - lo), lo)
    while np.any(cdf(hi) < levels):
        hi = np.where(cdf(hi) < levels, hi + 2 * (hi - lo), hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < levels
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < 1e-15 * max(1.0, np.max(np.abs(hi))):
            break
    return 0.5 * (lo + hi)


def default_flow_grid(rho0, t, n=20001):
    """Grid covering the support of F_t[rho0].

    For a few atoms each atom gets its own block of radius 2 sqrt(1 - e^-t)
    so that short times are resolved as well as long ones.
    """
    a, s = flow_coefficients(t)
    r = 2.0 * math.sqrt(s)
    lo, hi = rho0.support
    outer = 1.1 * r + 0.05
    base = np.linspace(a * lo - outer, a * hi + outer, n)
    if rho0.is_atomic and rho0.points.size <= 50:
        # the eta tails between blocks are resolved by geometric spacing
        pad = 1.1 * r + 1e-12
        offs = np.geomspace(pad, pad + 2 * outer, 400)
        blocks = [base]
        for x in a * rho0.points:
            blocks += [np.linspace(x - pad, x + pad, n), x - offs, x + offs]
        g = np.unique(np.concatenate(blocks))
        return g[(g >= base[0]) & (g <= base[-1])]
    return base


def direct_quantiles(rho0, t, N, indices, cfg=None, grid=None):
    """Quantiles of rho_t^eta by inverting the CDF of a computed density.

    This is the reference path for the quantile ODE: it shares nothing with
    the ODE beyond the fixed-point solver for m_t.
    """
    cfg = cfg or FlowSolverConfig()
    indices = np.asarray(indices)
    eta = cfg.resolve_eta(rho0)
    if t == 0:
        if rho0.is_atomic:
            return _smoothed_atomic_quantiles(rho0, eta, indices / N)
        return quantiles(rho0, N, indices)
    if grid is None:
        grid = default_flow_grid(rho0, t)
    dens = flow_density(rho0, t, grid, cfg)
    return quantiles(dens, N, indices)


def quantile_flow(rho0, N, indices, t_grid, cfg=None, atol=1e-8, reanchor_every=10,
                  direct_grid=None, start_fraction=1e-6):
    """Integrate the eta_star-regularised quantile ODE

        dgamma/dt = -T(gamma) - gamma/2 - (eta/2) T(gamma)/rho(gamma)

    with T, rho the Hilbert transform and density of rho_t^eta (both read off
    m_t(gamma + i eta)). Explicit midpoint with an embedded Euler error
    estimate controls the step. Every `reanchor_every` accepted steps the
    positions are reset to direct CDF inversion; pass None to integrate the
    ODE alone. For atomic rho0 and t_grid[0] = 0 the integration starts from
    direct quantiles at start_fraction * t_grid[1], since the velocity is
    singular at t = 0.
    """
    cfg = cfg or FlowSolverConfig()
    indices = np.asarray(indices, dtype=int)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    eta = cfg.resolve_eta(rho0)
    floor = cfg.density_floor
    gamma = np.asarray(direct_quantiles(rho0, t_grid[0], N, indices, cfg, direct_grid), float)
    out = np.empty((indices.size, t_grid.size))
    out[:, 0] = gamma
    state = {"m": None}

    def velocity(t, g):
        rho, T, m = density_and_hilbert(rho0, t, g, cfg, m_init=state["m"])
        low = rho < floor
        if np.any(low):
            i = int(np.flatnonzero(low)[0])
            raise DensityFloorError(
                f"density {rho[i]:.3e} below floor at index {indices[i]}, t={t:.6g}",
                index=int(indices[i]), time=float(t))
        state["m"] = m
        return -T - g / 2.0 - 0.5 * eta * T / rho

    t = t_grid[0]
    span = t_grid[-1] - t_grid[0]
    if t == 0 and rho0.is_atomic:
        # quantiles of an atomic measure move like sqrt(t): start just after 0
        t = start_fraction * min(span, t_grid[1])
        gamma = np.asarray(direct_quantiles(rho0, t, N, indices, cfg, direct_grid), float)
    h = 0.1 * t if t > 0 else 1e-3 * span
    accepted = 0
    v0 = velocity(t, gamma)
    for j in range(1, t_grid.size):
        target = t_grid[j]
        while t < target - 1e-15 * max(1.0, abs(target)):
            h = min(h, target - t)
            mid = gamma + 0.5 * h * v0
            vm = velocity(t + 0.5 * h, mid)
            new = gamma + h * vm
            err = np.max(np.abs(new - (gamma + h * v0)))
            if err <= atol or h < 1e-14 * max(1.0, t):
                t = t + h
                gamma = new
                accepted += 1
                if reanchor_every and accepted % reanchor_every == 0:
                    gamma = np.asarray(direct_quantiles(rho0, t, N, indices, cfg, direct_grid), float)
                v0 = velocity(t, gamma)
                h *= 2.0 if err == 0 else min(2.0, max(0.2, 0.9 * math.sqrt(atol / err)))
            else:
                h *= max(0.2, 0.9 * math.sqrt(atol / err))
        out[:, j] = gamma
    return QuantilePath(indices, t_grid, out, meta={"eta_star": eta, "accepted_steps": accepted,
                                                     "reanchor_every": reanchor_every})


def mean_drift(rho_t1, gamma_L):
    """upsilon_L = -T rho(gamma_L) - gamma_L / 2."""
    lo, hi = rho_t1.support
    if not lo <= gamma_L <= hi:
        raise SingularEvaluationError(f"gamma_L = {gamma_L!r} outside the support [{lo}, {hi}]")
    return -hilbert_transform(rho_t1, gamma_L) - gamma_L / 2.0


def burgers_residual(rho0, t, dt, z_grid, cfg=None, dz=None):
    """max |d_t m - (1/2) d_z (m (m + z))| over z_grid, central differences."""
    if dt > 1e-3:
        raise ValueError("dt must be <= 1e-3 to resolve the time derivative")
    if not t > dt / 2:
        raise ValueError("need t > dt/2")
    cfg = cfg or FlowSolverConfig()
    dz = dt if dz is None else dz
    z = np.asarray(z_grid, dtype=complex).ravel()
    mp = _solve(rho0, t + dt / 2, z, cfg)
    mm = _solve(rho0, t - dt / 2, z, cfg)
    dmdt = (mp - mm) / dt
    m_r = _solve(rho0, t, z + dz, cfg)
    m_l = _solve(rho0, t, z - dz, cfg)
    f_r = m_r * (m_r + z + dz)
    f_l = m_l * (m_l + z - dz)
    rhs = 0.5 * (f_r - f_l) / (2 * dz)
    return float(np.max(np.abs(dmdt - rhs)))


def density_regularity_check(rho0, t_range, E_range, cfg=None, n_t=5, n_E=201, dE=1e-4,
                             density_floor=None):
    """Min/max density and max |d_E rho_t| over a window of times and energies."""
    cfg = cfg or FlowSolverConfig()
    floor = cfg.density_floor if density_floor is None else density_floor
    ts = np.linspace(t_range[0], t_range[1], n_t)
    Es = np.linspace(E_range[0], E_range[1], n_E)
    eta = cfg.resolve_eta(rho0)
    rmin, rmax, dmax = np.inf, 0.0, 0.0
    for t in ts:
        pts = np.concatenate([Es, Es + dE, Es - dE]) + 1j * eta
        if t == 0:
            if rho0.is_atomic:
                raise ValueError("an atomic initial measure has no density at t=0")
            vals = rho0.density(pts.real)
        else:
            vals = _solve(rho0, t, pts, cfg).imag / np.pi
        r0, rp, rm = vals[:n_E], vals[n_E:2 * n_E], vals[2 * n_E:]
        rmin = min(rmin, float(r0.min()))
        rmax = max(rmax, float(r0.max()))
        dmax = max(dmax, float(np.max(np.abs(rp - rm) / (2 * dE))))
    rep = DiagnosticsReport(
        "density_regularity",
        manifest={"t_range": list(map(float, t_range)), "E_range": list(map(float, E_range))},
        statistics={"min_density": rmin, "max_density": rmax, "max_abs_derivative": dmax},
        thresholds={"density_floor": floor},
    )
    rep.require("above_floor", "min_density", ">=", "density_floor")
    return rep
