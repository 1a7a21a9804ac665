"""Probability measures on the real line and their integral transforms.

A :class:`Measure1D` is either atomic (sorted atoms with weights) or gridded
(a nonnegative density sampled on a strictly increasing grid). Gridded
densities are treated as their piecewise-linear interpolant everywhere: the
mass is the trapezoidal integral, and the Stieltjes and Hilbert transforms are
the exact transforms of the interpolant, evaluated cell by cell.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidTransformError, MassLossError, SingularEvaluationError

ATOMIC = "atomic"
GRIDDED = "gridded"

# complex entries processed per chunk when broadcasting points against nodes
_CHUNK = 2_000_000


@dataclass(frozen=True, eq=False)
class Measure1D:
    """Probability measure on R, atomic or gridded.

    Use :meth:`atomic` / :meth:`gridded` rather than the raw constructor; they
    validate and (optionally) normalize.
    """

    kind: str
    points: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        wts = np.ascontiguousarray(self.weights, dtype=float)
        pts.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        if self.kind not in (ATOMIC, GRIDDED):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if pts.ndim != 1 or pts.shape != wts.shape or pts.size == 0:
            raise ValueError("points and weights must be nonempty 1-d arrays of equal length")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(wts))):
            raise ValueError("measure entries must be finite")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("points must be strictly increasing")
        if np.any(wts < 0):
            raise ValueError("weights/values must be nonnegative")
        if self.kind == ATOMIC:
            if abs(wts.sum() - 1.0) > 1e-12:
                raise ValueError(f"atomic weights sum to {wts.sum()!r}, not 1")
        else:
            if pts.size < 2:
                raise ValueError("a gridded density needs at least two grid points")
            mass = np.trapezoid(wts, pts)
            if abs(mass - 1.0) > 1e-9:
                raise ValueError(f"gridded density integrates to {mass!r}, not 1")

    @classmethod
    def atomic(cls, atoms, weights=None, meta=None):
        atoms = np.asarray(atoms, dtype=float).ravel()
        if weights is None:
            weights = np.full(atoms.size, 1.0 / atoms.size)
        weights = np.asarray(weights, dtype=float).ravel()
        order = np.argsort(atoms, kind="stable")
        atoms, weights = atoms[order], weights[order]
        # merge coincident atoms so the strict ordering invariant holds
        uniq, inv = np.unique(atoms, return_inverse=True)
        if uniq.size != atoms.size:
            weights = np.bincount(inv, weights=weights)
            atoms = uniq
        weights = weights / weights.sum()
        return cls(ATOMIC, atoms, weights, dict(meta or {}))

    @classmethod
    def gridded(cls, grid, values, normalize=True, meta=None):
        grid = np.asarray(grid, dtype=float).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if normalize:
            mass = np.trapezoid(values, grid)
            if not mass > 0:
                raise ValueError("density has zero mass on the grid")
            values = values / mass
        return cls(GRIDDED, grid, values, dict(meta or {}))

    @property
    def is_atomic(self):
        return self.kind == ATOMIC

    @property
    def support(self):
        """Smallest interval containing the support (for gridded: nonzero cells)."""
        if self.is_atomic:
            nz = np.flatnonzero(self.weights > 0)
            return float(self.points[nz[0]]), float(self.points[nz[-1]])
        nz = np.flatnonzero(self.weights > 0)
        lo = max(nz[0] - 1, 0)
        hi = min(nz[-1] + 1, self.points.size - 1)
        return float(self.points[lo]), float(self.points[hi])

    @property
    def width(self):
        lo, hi = self.support
        return hi - lo

    def node_cdf(self):
        """CDF evaluated at the points (after each atom / at each grid node)."""
        if self.is_atomic:
            return np.cumsum(self.weights)
        x, r = self.points, self.weights
        cells = 0.5 * (r[1:] + r[:-1]) * np.diff(x)
        return np.concatenate([[0.0], np.cumsum(cells)])

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_atomic:
            c = self.node_cdf()
            idx = np.searchsorted(self.points, x, side="right")
            return np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)
        g, r = self.points, self.weights
        c = self.node_cdf()
        j = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
        h = g[j + 1] - g[j]
        s = (r[j + 1] - r[j]) / h
        u = np.clip(x - g[j], 0.0, h)
        out = c[j] + r[j] * u + 0.5 * s * u * u
        out = np.where(x < g[0], 0.0, out)
        return np.where(x >= g[-1], c[-1], out)

    def density(self, x):
        if self.is_atomic:
            raise TypeError("an atomic measure has no density")
        return np.interp(x, self.points, self.weights, left=0.0, right=0.0)

    def moment(self, p):
        if self.is_atomic:
            return float(np.sum(self.weights * self.points**p))
        return float(np.trapezoid(self.weights * self.points**p, self.points))

    def mean(self):
        return self.moment(1)

    def variance(self):
        return self.moment(2) - self.mean() ** 2

    def shifted(self, c):
        return Measure1D(self.kind, self.points + c, self.weights, dict(self.meta))

    def to_dict(self):
        return {
            "variant": self.kind,
            "points": self.points.tolist(),
            "weights_or_values": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        variant = d["variant"]
        if variant == ATOMIC:
            return cls(ATOMIC, d["points"], d["weights_or_values"])
        if variant == GRIDDED:
            return cls(GRIDDED, d["points"], d["weights_or_values"])
        raise ValueError(f"unknown variant {variant!r}")

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text_or_path):
        text = text_or_path
        if not text.lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))

    def to_csv(self, path):
        if self.is_atomic:
            raise TypeError("only gridded densities export to (x, rho) CSV")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "rho"])
            for x, r in zip(self.points, self.weights):
                w.writerow([repr(float(x)), repr(float(r))])


# --------------------------------------------------------------------------
# constructors


def semicircle_density(x, center=0.0, scale=1.0):
    """Density of the semicircle law of radius 2*scale centred at `center`."""
    u = (np.asarray(x, dtype=float) - center) / scale
    return np.sqrt(np.clip(4.0 - u * u, 0.0, None)) / (2.0 * np.pi * scale)


def semicircle_cdf(x, center=0.0, scale=1.0):
    u = np.clip((np.asarray(x, dtype=float) - center) / scale, -2.0, 2.0)
    return 0.5 + u * np.sqrt(4.0 - u * u) / (4.0 * np.pi) + np.arcsin(u / 2.0) / np.pi


def semicircle_stieltjes(z, center=0.0, scale=1.0):
    """Closed-form m(z) = (-w + sqrt(w^2-4))/2 with the branch Im m > 0."""
    w = (np.asarray(z, dtype=complex) - center) / scale
    # sqrt(w-2)*sqrt(w+2) is the branch behaving like w at infinity
    m = (-w + np.sqrt(w - 2.0) * np.sqrt(w + 2.0)) / 2.0
    return m / scale


def semicircle_quantile(q, center=0.0, scale=1.0):
    """Inverse of :func:`semicircle_cdf` (Newton on the closed form)."""
    q = np.asarray(q, dtype=float)
    u = np.clip(2.0 * np.sin(np.pi * (q - 0.5) / 1.5), -1.999, 1.999)
    for _ in range(60):
        f = semicircle_cdf(u) - q
        d = semicircle_density(u)
        step = np.where(d > 1e-300, f / np.maximum(d, 1e-300), 0.0)
        u = np.clip(u - step, -2.0, 2.0)
        if np.all(np.abs(step) < 1e-15):
            break
    return center + scale * u


def semicircle_quantiles(N, center=0.0, scale=1.0):
    """The N quantiles gamma_k, k = 1..N, with gamma_N the right edge."""
    return semicircle_quantile(np.arange(1, N + 1) / N, center, scale)


def padded_grid(lo, hi, n=4000, pad=0.2):
    span = hi - lo
    return np.linspace(lo - pad * span, hi + pad * span, n)


def tail_grid(lo, hi, n_bulk=4000, pad=0.2, reach=1e7, n_tail=4000):
    """Uniform bulk grid plus geometric tails out to `reach` times the width.

    Cauchy tails only lose mass like eta/R, so keeping the truncated mass of
    a Poisson-smoothed measure below 1e-6 needs R of order 1e6 * eta.
    """
    bulk = padded_grid(lo, hi, n_bulk, pad)
    h = bulk[1] - bulk[0]
    span = bulk[-1] - bulk[0]
    steps = np.geomspace(h, reach * span, n_tail)
    right = bulk[-1] + np.cumsum(steps)
    left = bulk[0] - np.cumsum(steps)
    return np.concatenate([left[::-1], bulk, right])


def semicircle(n=4000, center=0.0, scale=1.0, pad=0.2):
    """Gridded semicircle on its support padded by `pad` on each side."""
    grid = padded_grid(center - 2 * scale, center + 2 * scale, n, pad)
    return Measure1D.gridded(grid, semicircle_density(grid, center, scale),
                             meta={"name": "semicircle", "center": center, "scale": scale})


def semicircle_nodes(n=1200, center=0.0, scale=1.0):
    """Gauss-Chebyshev (second kind) discretisation of the semicircle.

    As an atomic measure its Stieltjes transform agrees with the semicircle's
    up to an error decaying geometrically in n at any fixed distance from the
    support, which is what the fixed-point solver needs at high accuracy.
    """
    theta = np.arange(1, n + 1) * np.pi / (n + 1)
    w = 2.0 * np.sin(theta) ** 2 / (n + 1)
    x = center + 2.0 * scale * np.cos(theta)
    return Measure1D(ATOMIC, x[::-1], w[::-1] / w.sum(),
                     {"name": "semicircle-gauss", "center": center, "scale": scale})


def point_mass(x=0.0):
    return Measure1D.atomic([x], [1.0])


def uniform(a=0.0, b=1.0, n=2001):
    grid = np.linspace(a, b, n)
    return Measure1D.gridded(grid, np.ones(n))


# --------------------------------------------------------------------------
# transforms


def _as_points(z):
    z = np.asarray(z, dtype=complex)
    return z, z.ravel()


def _check_real_points(mu, zf):
    real = zf.imag == 0
    if not np.any(real):
        return
    if np.any(zf.imag < 0):
        raise SingularEvaluationError("spectral parameter must have Im z >= 0")
    e = zf.real[real]
    if mu.is_atomic:
        hit = np.isin(e, mu.points[mu.weights > 0])
        if np.any(hit):
            raise SingularEvaluationError(f"z = {e[hit][0]!r} coincides with an atom")
    else:
        lo, hi = mu.support
        inside = (e >= lo) & (e <= hi)
        if np.any(inside):
            raise SingularEvaluationError(
                f"real z = {e[inside][0]!r} lies inside the grid support; use hilbert_transform")


def _atomic_transform(mu, zf, derivative):
    a, w = mu.points, mu.weights
    m = np.empty(zf.size, dtype=complex)
    dm = np.empty(zf.size, dtype=complex) if derivative else None
    step = max(1, _CHUNK // a.size)
    for s in range(0, zf.size, step):
        inv = 1.0 / (a[None, :] - zf[s:s + step, None])
        m[s:s + step] = inv @ w
        if derivative:
            dm[s:s + step] = (inv * inv) @ w
    return m, dm


def _gridded_transform(mu, zf, derivative):
    # exact transform of the piecewise-linear interpolant, one cell at a time:
    # int_cell (c_j(z) + s_j (v - z)) / (v - z) dv = s_j h_j + c_j(z) log((x_{j+1}-z)/(x_j-z))
    x, r = mu.points, mu.weights
    h = np.diff(x)
    s = np.diff(r) / h
    keep = (r[:-1] > 0) | (r[1:] > 0)
    x0, h, s, r0 = x[:-1][keep], h[keep], s[keep], r[:-1][keep]
    sh = np.sum(s * h)
    m = np.empty(zf.size, dtype=complex)
    dm = np.empty(zf.size, dtype=complex) if derivative else None
    step = max(1, _CHUNK // max(x0.size, 1))
    for lo in range(0, zf.size, step):
        z = zf[lo:lo + step, None]
        d0 = x0[None, :] - z
        lg = np.log1p(h[None, :] / d0)
        c = r0[None, :] - s[None, :] * d0
        m[lo:lo + step] = sh + np.sum(c * lg, axis=1)
        if derivative:
            d1 = d0 + h[None, :]
            dm[lo:lo + step] = np.sum(s[None, :] * lg + c * h[None, :] / (d0 * d1), axis=1)
    return m, dm


def transform_with_derivative(mu, z):
    """Return (m(z), m'(z)) as flat arrays; used by the flow solver."""
    z, zf = _as_points(z)
    _check_real_points(mu, zf)
    if mu.is_atomic:
        return _atomic_transform(mu, zf, True)
    return _gridded_transform(mu, zf, True)


def stieltjes_transform(mu, z):
    """m(z) = int dmu(v) / (v - z).

    `z` may be a scalar or an array; real `z` is only accepted away from the
    support (a singular point raises :class:`SingularEvaluationError`).
    """
    zarr, zf = _as_points(z)
    _check_real_points(mu, zf)
    if mu.is_atomic:
        m, _ = _atomic_transform(mu, zf, False)
    else:
        m, _ = _gridded_transform(mu, zf, False)
    m = m.reshape(zarr.shape)
    return complex(m) if m.ndim == 0 else m


def hilbert_transform(mu, E):
    """Principal value p.v. int dmu(v) / (v - E) at real E.

    For gridded input the principal value of the piecewise-linear density is
    summed in telescoped form: each node contributes log|x_j - E| times the
    jump of the local linear fit at E, so the two cells adjacent to E cancel
    analytically instead of numerically.
    """
    E_arr = np.asarray(E, dtype=float)
    e = E_arr.ravel()
    if mu.is_atomic:
        a, w = mu.points, mu.weights
        hit = np.isin(e, a[w > 0])
        if np.any(hit):
            raise SingularEvaluationError(f"E = {e[hit][0]!r} coincides with an atom")
        out = (1.0 / (a[None, :] - e[:, None])) @ w
    else:
        x, r = mu.points, mu.weights
        h = np.diff(x)
        s = np.diff(r) / h
        sh = np.sum(s * h)
        out = np.empty(e.size)
        step = max(1, _CHUNK // x.size)
        for lo in range(0, e.size, step):
            ee = e[lo:lo + step, None]
            d = x[None, :] - ee
            # value at E of the linear fit of each cell: c_j = r_j + s_j (E - x_j)
            c = r[None, :-1] - s[None, :] * d[:, :-1]
            coef = np.zeros_like(d)
            coef[:, 1:] += c
            coef[:, :-1] -= c
            ad = np.abs(d)
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(ad > 0, coef * np.log(np.where(ad > 0, ad, 1.0)), 0.0)
            out[lo:lo + step] = sh + terms.sum(axis=1)
    out = out.reshape(E_arr.shape)
    return float(out) if out.ndim == 0 else out


def poisson_smooth(mu, eta, grid):
    """Convolve `mu` with the Poisson kernel P_eta and sample on `grid`.

    The result is Im m(E + i eta)/pi, renormalized to unit mass. The grid must
    be wide enough that the Cauchy tails lose less than 1e-6 of the mass.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    grid = np.asarray(grid, dtype=float)
    vals = np.imag(stieltjes_transform(mu, grid + 1j * eta)) / np.pi
    vals = np.clip(vals, 0.0, None)
    mass = np.trapezoid(vals, grid)
    if 1.0 - mass > 1e-6:
        raise MassLossError(1.0 - mass)
    return Measure1D.gridded(grid, vals, meta={"eta": float(eta)})


def poisson_kernel(E, eta):
    E = np.asarray(E, dtype=float)
    return eta / (np.pi * (E * E + eta * eta))


def stieltjes_invert(m_values, grid, eta_used):
    """Density Im(m)/pi on `grid`, renormalized; eta_used kept in meta."""
    m_values = np.asarray(m_values, dtype=complex)
    im = m_values.imag
    if np.any(im < -1e-12):
        raise InvalidTransformError(
            f"Im m = {im.min():.3e} < 0: not a Stieltjes transform on C+")
    dens = np.clip(im, 0.0, None) / np.pi
    grid = np.asarray(grid, dtype=float)
    raw_mass = float(np.trapezoid(dens, grid))
    return Measure1D.gridded(grid, dens, meta={"eta_used": float(eta_used), "raw_mass": raw_mass})


def quantiles(mu, N, k, return_flags=False):
    """gamma_k: the smallest x with CDF(x) >= k/N.

    `k` may be an integer or an array. When k/N falls on a CDF plateau that is
    followed by more mass (a gap in the support) the left end of the gap is
    returned and the entry is flagged as a gap quantile.
    """
    k_arr = np.asarray(k)
    kk = k_arr.ravel().astype(float)
    if np.any(kk < 1) or np.any(kk > N):
        raise ValueError("k must lie in [1, N]")
    q = kk / N
    c = mu.node_cdf()
    x = mu.points
    tol = 1e-12
    flags = np.zeros(q.size, dtype=bool)
    if mu.is_atomic:
        j = np.searchsorted(c, q - tol, side="left")
        j = np.minimum(j, x.size - 1)
        out = x[j].copy()
        flags = (np.abs(c[j] - q) <= tol) & (j < x.size - 1)
    else:
        r = mu.weights
        q_eff = np.minimum(q, c[-1])
        j = np.searchsorted(c, q_eff - tol, side="left")
        j = np.clip(j, 1, x.size - 1)
        cell = j - 1
        h = x[j] - x[cell]
        s = (r[j] - r[cell]) / h
        delta = np.clip(q_eff - c[cell], 0.0, None)
        r0 = r[cell]
        disc = np.sqrt(np.clip(r0 * r0 + 2.0 * s * delta, 0.0, None))
        denom = r0 + disc
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(denom > 0, 2.0 * delta / denom, 0.0)
        out = x[cell] + np.clip(u, 0.0, h)
        # plateau: zero density at the answer and more mass further right
        at_end = np.abs(c[j] - q_eff) <= tol
        dens_here = np.interp(out, x, r)
        later = c[-1] - q_eff > 1e-9
        nxt = np.minimum(j + 1, x.size - 1)
        flat_next = (c[nxt] - c[j]) <= 1e-14
        flags = at_end & (dens_here <= 1e-14) & later & flat_next
    out = out.reshape(k_arr.shape)
    flags = flags.reshape(k_arr.shape)
    if out.ndim == 0:
        out, flags = float(out), bool(flags)
    return (out, flags) if return_flags else out
