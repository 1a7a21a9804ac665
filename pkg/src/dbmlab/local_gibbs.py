"""Beta-ensembles, localized Gibbs measures and the reference measure omega.

A localized measure on the window I = [L-K, L+K] with frozen exterior points y
has density proportional to exp(-beta N H(x)) with

    H(x) = sum_i h(x_i) - (1/N) sum_{i<j} log(x_j - x_i),
    h(x) = V(x)/2 - (1/N) sum_k log|x - y_k|.

The two conventions for the window potential differ only in bookkeeping:
V^y = V - (2/N) sum log|x - y| enters H with a factor 1/2, while the omega
convention writes h = V/2 - (1/N) sum log|x - y| directly. Both give the
same measure; external_potential reports either value.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dbm import _Stepper
from .errors import (AuxConstructionError, ContainmentError, InterpolationOrderError,
                     SingularEvaluationError)
from .measures import Measure1D, semicircle_density, semicircle_quantiles
from .rng import NoiseStream


@dataclass(frozen=True)
class BetaEnsembleSpec:
    """V(x) = a x^2 + b x (quadratic) or a tabulated potential."""

    N: int
    beta: float = 2.0
    a: float = 0.5
    b: float = 0.0
    table: tuple = None  # (x, V) samples for a tabulated potential

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.table is None and not self.a > 0:
            raise ValueError("quadratic potential needs a > 0 to confine")

    def V(self, x):
        x = np.asarray(x, dtype=float)
        if self.table is not None:
            tx, tv = map(np.asarray, self.table)
            return np.interp(x, tx, tv)
        return self.a * x * x + self.b * x

    def dV(self, x):
        x = np.asarray(x, dtype=float)
        if self.table is not None:
            tx, tv = map(np.asarray, self.table)
            return np.interp(x, tx[:-1] + np.diff(tx) / 2, np.diff(tv) / np.diff(tx))
        return 2 * self.a * x + self.b

    @classmethod
    def gaussian(cls, N, beta=2.0):
        """V(x) = x^2 / 2: equilibrium law is the semicircle."""
        return cls(N, beta, 0.5, 0.0)


@dataclass(frozen=True)
class LocalMeasureSpec:
    L: int
    K: int
    exterior: np.ndarray
    N: int = None
    beta: float = 2.0
    a: float = 0.5
    b: float = 0.0
    eps_star: float = None

    def __post_init__(self):
        y = np.asarray(self.exterior, dtype=float)
        N = self.N or (y.size + 2 * self.K + 1)
        if y.size != N - 2 * self.K - 1:
            raise ValueError("exterior must hold N - (2K+1) points")
        if np.any(np.diff(y) <= 0):
            raise ValueError("exterior points must be strictly ordered")
        if not (1 <= self.L - self.K and self.L + self.K <= N):
            raise ValueError("window not inside 1..N")
        object.__setattr__(self, "exterior", y)
        object.__setattr__(self, "N", N)
        if self.eps_star is None:
            object.__setattr__(self, "eps_star", math.exp(-math.sqrt(self.K)))
        if self.eps_star < 0:
            raise ValueError("eps_star must be nonnegative")

    @property
    def n_left(self):
        return self.L - self.K - 1

    @property
    def interval(self):
        y = self.exterior
        lo = y[self.n_left - 1] if self.n_left > 0 else -np.inf
        hi = y[self.n_left] if self.n_left < y.size else np.inf
        return float(lo), float(hi)

    @property
    def size(self):
        return 2 * self.K + 1

    def V(self, x):
        return self.a * np.asarray(x) ** 2 + self.b * np.asarray(x)

    def dV(self, x):
        return 2 * self.a * np.asarray(x) + self.b

    @classmethod
    def omega(cls, L, K, tilde_gamma, upsilon_L=0.0, beta=2.0, eps_star=None, N=None):
        """Reference measure with V(x) = x^2/2 + 2 upsilon x."""
        return cls(L, K, tilde_gamma, N, beta, 0.5, 2.0 * upsilon_L, eps_star)

    def to_json(self):
        return json.dumps({"L": self.L, "K": self.K, "N": self.N, "beta": self.beta,
                           "potential": {"a": self.a, "b": self.b}, "eps_star": self.eps_star,
                           "exterior": self.exterior.tolist()})

    @classmethod
    def from_json(cls, s):
        d = json.loads(s)
        return cls(d["L"], d["K"], np.array(d["exterior"]), d["N"], d["beta"],
                   d["potential"]["a"], d["potential"]["b"], d["eps_star"])


def log_eps(x, eps):
    """log x above eps, quadratic continuation (matching value and slope) below."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    u = x - eps
    below = math.log(eps) + u / eps - u * u / (2 * eps * eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        above = np.log(np.where(x >= eps, x, 1.0))
    out = np.where(x >= eps, above, below)
    return float(out) if out.ndim == 0 else out


def dlog_eps(x, eps):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x >= eps, 1.0 / np.where(x >= eps, x, 1.0), 1.0 / eps - (x - eps) / eps ** 2)


def external_potential(spec, x, convention="omega", regularize=False, N=None):
    """Window potential at x.

    convention "omega": V/2 - (1/N) sum log|x - y|
    convention "local": V - (2/N) sum log|x - y|
    With regularize=True (and eps_star > 0) the log is replaced by log_eps
    applied to N|x - y|, giving a finite value at the exterior points; this
    shifts the potential by a constant only. N overrides the normalisation
    in front of the log sum (default spec.N).
    """
    if convention not in ("omega", "local"):
        raise ValueError("convention must be 'omega' or 'local'")
    x = np.asarray(x, dtype=float)
    d = np.abs(x[..., None] - spec.exterior)
    N = spec.N if N is None else N
    if regularize and spec.eps_star > 0:
        logs = log_eps(N * d, spec.eps_star) - math.log(N)
    else:
        if np.any(d == 0):
            raise SingularEvaluationError("x coincides with an exterior point")
        logs = np.log(d)
    s = logs.sum(axis=-1) / N
    out = spec.V(x) / 2 - s if convention == "omega" else spec.V(x) - 2 * s
    return float(out) if np.ndim(out) == 0 else out


def external_force(spec, x, regularize=False):
    """-h'(x) for the omega convention: -V'/2 + (1/N) sum 1/(x - y_k)."""
    x = np.asarray(x, dtype=float)
    d = x[:, None] - spec.exterior[None, :]
    if regularize and spec.eps_star > 0:
        inv = np.sign(d) * spec.N * dlog_eps(spec.N * np.abs(d), spec.eps_star)
    else:
        inv = 1.0 / d
    return -spec.dV(x) / 2 + inv.sum(1) / spec.N


def ramp_weights(labels, L, K, N, inner=None, ramp=None):
    """iota_k: 1 on the inner plateau |L-k| <= inner, linear ramp of width `ramp`, then 0."""
    inner = min(K ** 3, (N - (2 * K + 1)) // 4) if inner is None else inner
    ramp = K ** 2 if ramp is None else ramp
    dist = np.abs(np.asarray(labels) - L)
    if ramp <= 0:
        return (dist <= inner).astype(float)
    return np.clip((inner + ramp - dist) / ramp, 0.0, 1.0)


def build_reference_points(y_T1, z, L, K, N, inner=None, ramp=None):
    """tilde_gamma_k = iota_k z_k + (1 - iota_k) y_k over the exterior labels."""
    y = np.asarray(y_T1, dtype=float)
    z = np.asarray(z, dtype=float)
    if y.shape != z.shape or y.size != N - 2 * K - 1:
        raise ValueError("y and z must both cover the exterior")
    labels = np.concatenate([np.arange(1, L - K), np.arange(L + K + 1, N + 1)])
    iota = ramp_weights(labels, L, K, N, inner, ramp)
    g = iota * z + (1 - iota) * y
    bad = np.flatnonzero(np.diff(g) <= 0)
    if bad.size:
        raise InterpolationOrderError(int(labels[bad[0]]))
    return g


@dataclass
class AuxEnsemble:
    varsigma: float
    s: float
    varsigma_prime: float
    b: float
    z: np.ndarray
    meta: dict = field(default_factory=dict)


def build_aux_ensemble(rho_T1, gamma_L, y_T1, L, K, N, density_floor=1e-3):
    """Matched semicircle exterior points z.

    varsigma = rho_sc(gamma_sc,L) / rho_T1(gamma_L) rescales semicircle
    quantiles so the density at the anchor matches; s is the ratio of the
    configuration-interval lengths |J_ytilde| / |J_y|; the final points are
    z = ytilde / s + b, which reproduces |J_y| and puts z_{L-K-1} on
    y_{L-K-1}. Both interval endpoints are then set exactly.
    Returns (varsigma_prime = s * varsigma, b, z) inside an AuxEnsemble.
    """
    y = np.asarray(y_T1, dtype=float)
    if y.size != N - 2 * K - 1:
        raise ValueError("y_T1 must cover the exterior")
    r = float(rho_T1.density(gamma_L))
    if not r >= density_floor:
        raise AuxConstructionError(f"density {r:.3e} at gamma_L below floor {density_floor}")
    gsc = semicircle_quantiles(N)
    vs = float(semicircle_density(gsc[L - 1])) / r
    yt = vs * gsc
    nl = L - K - 1
    labels = np.concatenate([np.arange(1, L - K), np.arange(L + K + 1, N + 1)])
    yt_ext = yt[labels - 1]
    len_y = y[nl] - y[nl - 1]
    len_yt = yt_ext[nl] - yt_ext[nl - 1]
    s = len_yt / len_y
    zt = yt_ext / s
    b = y[nl - 1] - zt[nl - 1]
    z = zt + b
    z[nl - 1] = y[nl - 1]
    z[nl] = y[nl]
    if np.any(np.diff(z) <= 0):
        raise AuxConstructionError("aux points lost their order after snapping")
    return AuxEnsemble(vs, s, s * vs, float(b), z,
                       meta={"rho_anchor": r, "scale": vs / s, "gamma_L": float(gamma_L)})


def configuration_interval_length(z_minus, z_plus, rho, K, N):
    """((2K+1) / (N rho(midpoint)), z_plus - z_minus)."""
    mid = 0.5 * (z_minus + z_plus)
    r = float(rho.density(mid)) if isinstance(rho, Measure1D) else float(rho(mid))
    return (2 * K + 1) / (N * r), float(z_plus - z_minus)


def hessian_lower_bound(spec, configurations=None, n_grid=201):
    """min of (1/N) sum_k (x_i - y_k)^{-2} over interior positions.

    Without `configurations` the minimum is taken over a grid of J, which
    bounds every configuration at once; otherwise over the given ones.
    """
    if configurations is not None:
        return float(min(hessian_at(spec, c).min() for c in np.atleast_2d(configurations)))
    lo, hi = spec.interval
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("the configuration interval is unbounded; pass configurations")
    h = hi - lo
    xs = np.linspace(lo + h / (2 * n_grid), hi - h / (2 * n_grid), n_grid)
    return float(hessian_at(spec, xs).min())


def hessian_at(spec, x):
    """(1/N) sum_k (x - y_k)^{-2} at given interior points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return ((x[:, None] - spec.exterior[None, :]) ** -2.0).sum(1) / spec.N


def equidistant_points(spec):
    """alpha_i: the 2K+1 points splitting J into 2K+2 equal pieces."""
    lo, hi = spec.interval
    return lo + (hi - lo) * np.arange(1, spec.size + 1) / (spec.size + 1)


@dataclass
class GibbsSamples:
    samples: np.ndarray   # (n_samples, 2K+1)
    times: np.ndarray
    spec: LocalMeasureSpec
    violations: int = 0
    steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def violation_rate(self):
        return self.violations / max(self.steps, 1)


def sample_local_gibbs(spec, burn_in_time=None, n_samples=100, stride=None, dt=None, seed=0,
                       x_init=None, regularize=False, stream=0, max_violation_rate=0.01):
    """Overdamped Langevin chain (the local DBM) whose equilibrium is the local measure.

    drift_i = -V'(x_i)/2 + (1/N) sum_k 1/(x_i - y_k) + (1/N) sum_{j != i} 1/(x_i - x_j),
    noise sqrt(2/(beta N)) dB. The chain starts at the equidistant points,
    burns in for burn_in_time (default 5K/N), then records every `stride`
    time units (default K/N).
    """
    N, K = spec.N, spec.K
    relax = max(K, 1) / N
    burn_in_time = 5 * relax if burn_in_time is None else burn_in_time
    stride = relax if stride is None else stride
    if burn_in_time < 5 * relax - 1e-15:
        raise ValueError("burn_in_time must be at least 5K/N")
    lo, hi = spec.interval
    x = equidistant_points(spec) if x_init is None else np.array(x_init, dtype=float)
    if np.any(np.diff(x) <= 0) or not (x[0] > lo and x[-1] < hi):
        raise ContainmentError("initial configuration must be ordered and inside J")
    if dt is None:
        gap = float(np.min(np.diff(np.concatenate([[lo], x, [hi]]))))
        dt = min(0.1 / N, 0.01 * gap * gap * N)
    noise = NoiseStream(seed, spec.size, stream)
    eps = spec.eps_star

    def drift(s, t):
        r = s[0]
        d = r[:, None] - r[None, :]
        np.fill_diagonal(d, np.inf)
        if regularize and eps > 0:
            ad = np.abs(d)
            inv = np.where(np.isinf(ad), 0.0, np.sign(d) * N * dlog_eps(N * np.where(np.isinf(ad), 1.0, ad), eps))
        else:
            inv = 1.0 / d
        return (external_force(spec, r, regularize) + inv.sum(1) / N)[None, :]

    st = _Stepper(drift, math.sqrt(2.0 / (spec.beta * N)), lambda t: (lo, hi), "reflect")
    n_burn = int(math.ceil(burn_in_time / dt))
    n_stride = max(1, int(round(stride / dt)))
    total = n_burn + n_stride * (n_samples - 1)
    state = x[None, :]
    out = np.empty((n_samples, spec.size))
    times = np.empty(n_samples)
    j = 0
    sq = math.sqrt(dt)
    for k in range(total + 1):
        if k >= n_burn and (k - n_burn) % n_stride == 0 and j < n_samples:
            out[j] = state[0]
            times[j] = k * dt
            j += 1
        if k == total:
            break
        state = st.step(state, k * dt, dt, sq * noise.increments(k),
                        lambda node, k=k: noise.bridge(k, node))
    res = GibbsSamples(out, times, spec, len(st.events), total,
                       meta={"dt": dt, "burn_in_time": burn_in_time, "stride": n_stride * dt,
                             "seed": seed, "regularize": regularize})
    if res.violation_rate > max_violation_rate:
        raise ContainmentError(f"containment violation rate {res.violation_rate:.3%} exceeds "
                               f"{max_violation_rate:.0%}")
    return res
