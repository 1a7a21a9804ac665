"""Dyson Brownian motion and its localized, coupled and regularized variants.

Particles carry 1-based labels. A window I = [L - K, L + K] is given as the
pair (L, K); exterior labels are everything else in 1..N.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CollisionError, ContainmentError, StepSizeError
from .rng import NoiseStream

MAX_HALVINGS = 20


@dataclass(frozen=True)
class ParticleConfiguration:
    positions: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 1 or not np.all(np.isfinite(pos)):
            raise ValueError("positions must be a finite vector")
        if np.any(np.diff(pos) <= 0):
            raise ValueError("positions must be strictly increasing")
        lab = np.arange(1, pos.size + 1) if self.labels is None else np.asarray(self.labels, dtype=int)
        if lab.shape != pos.shape:
            raise ValueError("labels and positions differ in length")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "labels", lab)

    @property
    def N(self):
        return self.positions.size

    def gaps(self):
        return np.diff(self.positions)


@dataclass
class Trajectory:
    """Sampled path: positions[f] is the configuration at times[f]."""

    times: np.ndarray
    positions: np.ndarray
    labels: np.ndarray = None
    beta: float = 2.0
    dt: float = 0.0
    seed: int = 0
    meta: dict = field(default_factory=dict)
    ordered: bool = True

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.labels is None:
            self.labels = np.arange(1, self.positions.shape[1] + 1)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.positions.shape != (self.times.size, self.labels.size):
            raise ValueError("positions must have shape (len(times), len(labels))")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be increasing")
        if self.ordered and np.any(np.diff(self.positions, axis=1) <= 0):
            raise ValueError("trajectory states must be strictly ordered")

    def state(self, f):
        return ParticleConfiguration(self.positions[f], self.labels)

    def select(self, labels):
        idx = np.searchsorted(self.labels, labels)
        if np.any(self.labels[np.clip(idx, 0, self.labels.size - 1)] != labels):
            raise KeyError("labels not present in trajectory")
        return Trajectory(self.times, self.positions[:, idx], np.asarray(labels), self.beta,
                          self.dt, self.seed, dict(self.meta), self.ordered)

    def at(self, t):
        """Positions at time t, linearly interpolated between frames."""
        f = np.searchsorted(self.times, t)
        if f < self.times.size and self.times[f] == t:
            return self.positions[f]
        if f == 0 or f == self.times.size:
            if abs(t - self.times[min(f, self.times.size - 1)]) <= 1e-12 * max(1.0, abs(t)):
                return self.positions[min(f, self.times.size - 1)]
            raise ValueError(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        w = (t - self.times[f - 1]) / (self.times[f] - self.times[f - 1])
        return self.positions[f - 1] + w * (self.positions[f] - self.positions[f - 1])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{k}" for k in self.labels])
            for t, row in zip(self.times, self.positions):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def window_labels(L, K, N):
    if not 1 <= L - K and L + K <= N:
        raise ValueError(f"window [{L - K}, {L + K}] not inside 1..{N}")
    inside = np.arange(L - K, L + K + 1)
    outside = np.concatenate([np.arange(1, L - K), np.arange(L + K + 1, N + 1)])
    return inside, outside


def default_dt(positions):
    x = np.asarray(positions, dtype=float)
    N = x.size
    if N < 2:
        return 0.1
    return min(0.1 / N, 0.01 * float(np.min(np.diff(x))) ** 2 * N)


# ---------------------------------------------------------------- stepping

def _interaction(x, N, ext=None):
    """-(1/N) sum_j 1/(x_j - x_i) over the window and the exterior points."""
    d = x[None, :] - x[:, None]
    np.fill_diagonal(d, np.inf)
    out = -(1.0 / d).sum(axis=1)
    if ext is not None and ext.size:
        out -= (1.0 / (ext[None, :] - x[:, None])).sum(axis=1)
    return out / N


def _ordered(x, lo=-np.inf, hi=np.inf):
    return x[0] > lo and x[-1] < hi and np.all(np.diff(x) > 0)


def _first_violation(x, lo, hi):
    if x[0] <= lo:
        return (-1, 0)
    if x[-1] >= hi:
        return (x.size - 1, x.size)
    i = int(np.flatnonzero(np.diff(x) <= 0)[0])
    return (i, i + 1)


class _Stepper:
    """Euler-Maruyama with Brownian-bridge step splitting.

    `drift(states, t)` returns one drift row per state row; every row shares
    the same Brownian increment. Only row 0 is checked for ordering (and for
    lying inside the open interval returned by `bounds(t)`).
    """

    def __init__(self, drift, sigma, bounds=None, containment="reflect"):
        self.drift = drift
        self.sigma = sigma
        self.bounds = bounds or (lambda t: (-np.inf, np.inf))
        self.containment = containment
        self.events = []

    def step(self, states, t, dt, dW, bridge, depth=0, node=1):
        new = states + self.drift(states, t) * dt + self.sigma * dW[None, :]
        lo, hi = self.bounds(t + dt)
        if _ordered(new[0], lo, hi):
            return new
        if depth == MAX_HALVINGS:
            pair = _first_violation(new[0], lo, hi)
            inner = np.all(np.diff(new[0]) > 0)
            if inner and self.containment == "reflect":
                new[0] = _reflect(new[0], states[0], lo, hi)
                self.events.append({"t": float(t + dt), "kind": "containment", "pair": pair})
                if _ordered(new[0], lo, hi):
                    return new
            if inner:
                raise ContainmentError(f"window particle left the configuration interval at t={t + dt:.6g}")
            raise CollisionError(pair, time=float(t + dt))
        z = bridge(node)
        dW1 = 0.5 * dW + 0.5 * math.sqrt(dt) * z
        mid = self.step(states, t, dt / 2, dW1, bridge, depth + 1, 2 * node)
        return self.step(mid, t + dt / 2, dt / 2, dW - dW1, bridge, depth + 1, 2 * node + 1)


def _reflect(x, prev, lo, hi):
    """Send an escaping particle back to the midpoint towards the boundary point."""
    x = x.copy()
    if x[0] <= lo:
        x[0] = 0.5 * (lo + prev[0]) if prev[0] > lo else lo + 0.5 * (x[1] - lo)
    if x[-1] >= hi:
        x[-1] = 0.5 * (hi + prev[-1]) if prev[-1] < hi else hi - 0.5 * (hi - x[-2])
    return x


def _default_bridge(noise):
    seed = np.frombuffer(np.ascontiguousarray(noise, dtype=float).tobytes(), dtype=np.uint32)
    rng = np.random.default_rng(np.random.SeedSequence(seed.tolist()))
    cache = {}

    def bridge(node):
        if node not in cache:
            cache[node] = rng.standard_normal(noise.size)
        return cache[node]
    return bridge


def step_dbm(state, dt, beta, noise, bridge=None):
    """One Euler-Maruyama step of the full DBM.

    `noise` is a standard normal vector; it is scaled by sqrt(dt) here. On a
    broken ordering the step is split by Brownian bridges (at most 20 times).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if beta < 1:
        raise ValueError("beta must be >= 1")
    conf = state if isinstance(state, ParticleConfiguration) else ParticleConfiguration(state)
    x = conf.positions
    N = x.size
    noise = np.asarray(noise, dtype=float)
    if noise.shape != x.shape:
        raise ValueError("noise must match the number of particles")
    bridge = bridge or _default_bridge(noise)

    def drift(s, t):
        return np.stack([_interaction(r, N) - r / 2 for r in s])

    st = _Stepper(drift, math.sqrt(2.0 / (beta * N)))
    new = st.step(x[None, :], 0.0, dt, math.sqrt(dt) * noise, bridge)[0]
    return ParticleConfiguration(new, conf.labels)


def _time_grid(t_span, dt):
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(math.ceil((t1 - t0) / dt - 1e-9))
    return t0, n, (t1 - t0) / n


def _run(stepper, states, t_span, dt, noise, labels_idx, stride):
    t0, n, h = _time_grid(t_span, dt)
    sq = math.sqrt(h)
    frames = [states[0].copy()]
    extra = [states[1:].copy()]
    times = [t0]
    for k in range(n):
        t = t0 + k * h
        dW = sq * noise.increments(k)[labels_idx]
        states = stepper.step(states, t, h, dW,
                              lambda node, k=k: noise.bridge(k, node)[labels_idx])
        if (k + 1) % stride == 0 or k == n - 1:
            frames.append(states[0].copy())
            extra.append(states[1:].copy())
            times.append(t0 + (k + 1) * h)
    return np.array(times), np.array(frames), np.array(extra), h


def run_dbm(init, t_span, dt=None, beta=2.0, seed=0, stride=1, stream=0):
    """Full DBM from `init`, recorded every `stride` steps (and at the end)."""
    conf = init if isinstance(init, ParticleConfiguration) else ParticleConfiguration(init)
    if beta < 1:
        raise ValueError("beta must be >= 1")
    x = conf.positions
    N = x.size
    dt = default_dt(x) if dt is None else dt
    noise = NoiseStream(seed, int(conf.labels.max()), stream)

    def drift(s, t):
        return (_interaction(s[0], N) - s[0] / 2)[None, :]

    st = _Stepper(drift, math.sqrt(2.0 / (beta * N)))
    times, frames, _, h = _run(st, x[None, :].copy(), t_span, dt, noise, conf.labels - 1, stride)
    return Trajectory(times, frames, conf.labels, beta, h, seed,
                      meta={"scheme": "euler-maruyama", "stride": stride, "stream": stream})


def shift_process(traj, upsilon_L, T1):
    """lambda(t) - upsilon_L (t - T1) for every frame."""
    if not traj.times[0] - 1e-12 <= T1 <= traj.times[-1] + 1e-12:
        raise ValueError("T1 outside the trajectory time range")
    pos = traj.positions - upsilon_L * (traj.times - T1)[:, None]
    meta = dict(traj.meta)
    meta["shift"] = meta.get("shift", 0.0) + upsilon_L
    return Trajectory(traj.times, pos, traj.labels, traj.beta, traj.dt, traj.seed, meta, traj.ordered)


def _window_setup(x_init, exterior_labels, window, N=None):
    L, K = window
    x = np.asarray(x_init, dtype=float)
    if x.size != 2 * K + 1:
        raise ValueError("x_init must hold 2K+1 positions")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x_init must be strictly ordered")
    N = N or (x.size + len(exterior_labels))
    inside, outside = window_labels(L, K, N)
    if exterior_labels is not None and not np.array_equal(np.asarray(exterior_labels), outside):
        raise ValueError("exterior labels do not match the complement of the window")
    left = outside < L - K
    return x, N, inside, outside, left


def _bounds_from(ext_at, left):
    nl = int(left.sum())

    def bounds(t):
        y = ext_at(t)
        lo = y[nl - 1] if nl > 0 else -np.inf
        hi = y[nl] if nl < y.size else np.inf
        return lo, hi
    return bounds


def run_localized(x_init, exterior_path, window, upsilon_L=0.0, t_span=None, dt=None, beta=2.0,
                  seed=0, stride=1, stream=0, containment="reflect"):
    """Window SDE for the shifted process with a streamed exterior path.

    drift_i = -upsilon - (1/N) sum_{j in I} 1/(x_j - x_i) - (1/N) sum_k 1/(y_k(t) - x_i)
              - (x_i + upsilon (t - T1))/2,   T1 = t_span[0].
    The exterior path is linearly interpolated between its frames.
    """
    t_span = t_span or (exterior_path.times[0], exterior_path.times[-1])
    x, N, inside, outside, left = _window_setup(x_init, exterior_path.labels, window)
    if exterior_path.times[0] > t_span[0] + 1e-12 or exterior_path.times[-1] < t_span[1] - 1e-12:
        raise ValueError("exterior path does not cover t_span")
    T1 = float(t_span[0])
    y_at = exterior_path.at
    lo, hi = _bounds_from(y_at, left)(T1)
    if not (x[0] > lo and x[-1] < hi):
        raise ContainmentError("x_init is not inside the configuration interval")
    dt = default_dt(x) if dt is None else dt
    noise = NoiseStream(seed, N, stream)

    def drift(s, t):
        r = s[0]
        return (_interaction(r, N, y_at(t)) - upsilon_L - (r + upsilon_L * (t - T1)) / 2)[None, :]

    st = _Stepper(drift, math.sqrt(2.0 / (beta * N)), _bounds_from(y_at, left), containment)
    times, frames, _, h = _run(st, x[None, :].copy(), t_span, dt, noise, inside - 1, stride)
    return Trajectory(times, frames, inside, beta, h, seed,
                      meta={"scheme": "euler-maruyama", "window": [int(window[0]), int(window[1])],
                            "upsilon_L": upsilon_L, "N": N, "stride": stride, "stream": stream,
                            "events": st.events})


def run_coupled_reference(x_init, tilde_gamma, window, upsilon_L=0.0, t_span=(0.0, 1.0), dt=None,
                          beta=2.0, seed=0, stride=1, stream=0, containment="reflect"):
    """Window SDE with frozen exterior points tilde_gamma (labels = window complement).

    drift_i = -upsilon - (1/N) sum_{j in I} 1/(x_j - x_i) - (1/N) sum_k 1/(g_k - x_i) - x_i/2.
    Uses the same noise addressing as run_localized, so equal seeds give the
    same increments.
    """
    g = np.asarray(tilde_gamma, dtype=float)
    L, K = window
    N = g.size + 2 * K + 1
    x, N, inside, outside, left = _window_setup(x_init, None, window, N)
    if np.any(np.diff(g) <= 0):
        raise ValueError("tilde_gamma must be strictly ordered")
    const = lambda t: g  # noqa: E731
    lo, hi = _bounds_from(const, left)(0.0)
    if not (x[0] > lo and x[-1] < hi):
        raise ContainmentError("x_init is not inside the configuration interval")
    dt = default_dt(x) if dt is None else dt
    noise = NoiseStream(seed, N, stream)

    def drift(s, t):
        r = s[0]
        return (_interaction(r, N, g) - upsilon_L - r / 2)[None, :]

    st = _Stepper(drift, math.sqrt(2.0 / (beta * N)), _bounds_from(const, left), containment)
    times, frames, _, h = _run(st, x[None, :].copy(), t_span, dt, noise, inside - 1, stride)
    return Trajectory(times, frames, inside, beta, h, seed,
                      meta={"scheme": "euler-maruyama", "window": [int(L), int(K)],
                            "upsilon_L": upsilon_L, "N": N, "stride": stride, "stream": stream,
                            "events": st.events})


def default_eps(N, C1=1.5):
    return float(N) ** (-10.0 * C1)


def eps_matrix(row_labels, col_labels, eps, sigma_window):
    """eps_jk = +eps if j >= k else -eps, restricted to j, k in I_sigma."""
    lo, hi = sigma_window
    r = np.asarray(row_labels)[:, None]
    c = np.asarray(col_labels)[None, :]
    inside = (r >= lo) & (r <= hi) & (c >= lo) & (c <= hi)
    return np.where(r >= c, eps, -eps) * inside


def run_regularized(x_init, exterior_path, window, eps=None, C1=1.5, upsilon_L=0.0, t_span=None,
                    dt=None, beta=2.0, seed=0, stride=1, stream=0, sigma_window=None,
                    containment="reflect"):
    """epsilon-regularized window process x_hat.

    x_bar is integrated alongside (same noise, same substeps) because the
    x_hat drift is evaluated on the unregularized x_bar and y_bar:
        drift_i = -upsilon + (1/N) sum_{j != i} 1/(xb_i - xb_j + e_ij)
                  + (1/N) sum_k 1/(xb_i - yb_k + e_ik) - (xh_i + upsilon (t - T1))/2.
    The x_bar path is returned in meta["xbar"].
    """
    t_span = t_span or (exterior_path.times[0], exterior_path.times[-1])
    x, N, inside, outside, left = _window_setup(x_init, exterior_path.labels, window)
    eps = default_eps(N, C1) if eps is None else float(eps)
    if not eps > 0:
        raise ValueError("eps must be positive")
    sigma_window = sigma_window or (1, N)
    e_in = eps_matrix(inside, inside, eps, sigma_window)
    np.fill_diagonal(e_in, 0.0)
    e_out = eps_matrix(inside, outside, eps, sigma_window)
    T1 = float(t_span[0])
    y_at = exterior_path.at
    dt = default_dt(x) if dt is None else dt
    noise = NoiseStream(seed, N, stream)

    def drift(s, t):
        xb, xh = s
        y = y_at(t)
        shift = upsilon_L * (t - T1)
        db = _interaction(xb, N, y) - upsilon_L - (xb + shift) / 2
        d = xb[:, None] - xb[None, :] + e_in
        np.fill_diagonal(d, np.inf)
        inter = (1.0 / d).sum(1) + (1.0 / (xb[:, None] - y[None, :] + e_out)).sum(1)
        dh = inter / N - upsilon_L - (xh + shift) / 2
        return np.stack([db, dh])

    st = _Stepper(drift, math.sqrt(2.0 / (beta * N)), _bounds_from(y_at, left), containment)
    times, frames, extra, h = _run(st, np.stack([x, x]), t_span, dt, noise, inside - 1, stride)
    xbar = Trajectory(times, frames, inside, beta, h, seed)
    return Trajectory(times, extra[:, 0, :], inside, beta, h, seed, ordered=False,
                      meta={"scheme": "euler-maruyama", "window": [int(window[0]), int(window[1])],
                            "eps": eps, "upsilon_L": upsilon_L, "N": N, "xbar": xbar,
                            "events": st.events})


# ---------------------------------------------------------------- coupling

@dataclass
class CouplingCoefficients:
    times: np.ndarray
    B: np.ndarray    # (n_t, K, K)
    W: np.ndarray    # (n_t, K)
    F1: np.ndarray   # (n_t, K)
    F2: np.ndarray   # (n_t, K)
    eps: float
    window: tuple
    flags: dict = field(default_factory=dict)

    def rate_bound(self, f=None):
        """max_i (sum_j B_ij + W_i) at frame f (or over all frames)."""
        r = self.B.sum(axis=2) + self.W
        return float(r.max()) if f is None else float(r[f].max())

    def to_csv(self, path, f):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "B", "W_i", "F1_i", "F2_i"])
            K = self.W.shape[1]
            for i in range(K):
                for j in range(K):
                    w.writerow([i, j, repr(float(self.B[f, i, j])), repr(float(self.W[f, i])),
                                repr(float(self.F1[f, i])), repr(float(self.F2[f, i]))])


def extract_coupling(xbar, xtilde, exterior_path, tilde_gamma, eps=0.0, window=None, xhat=None,
                     upsilon_L=0.0, T1=None, T1p=None, sigma_window=None):
    """Coefficients of the difference equation for v = e^{(t-T1')/2}(x_hat - x_tilde)."""
    if not np.allclose(xbar.times, xtilde.times, rtol=0, atol=1e-12):
        raise ValueError("trajectories must share their times")
    if not np.array_equal(xbar.labels, xtilde.labels):
        raise ValueError("trajectories must share their window")
    times = xbar.times
    inside = xbar.labels
    outside = exterior_path.labels
    N = inside.size + outside.size
    if window is None:
        window = ((inside[0] + inside[-1]) // 2, (inside[-1] - inside[0]) // 2)
    sigma_window = sigma_window or (1, N)
    T1 = times[0] if T1 is None else T1
    T1p = T1 if T1p is None else T1p
    g = np.asarray(tilde_gamma, dtype=float)
    e_in = eps_matrix(inside, inside, eps, sigma_window)
    e_out = eps_matrix(inside, outside, eps, sigma_window)
    xh_all = xbar.positions if xhat is None else xhat.positions
    nt, K = xbar.positions.shape
    B = np.zeros((nt, K, K))
    W = np.zeros((nt, K))
    F1 = np.zeros((nt, K))
    F2 = np.zeros((nt, K))
    zero_den = 0
    off = ~np.eye(K, dtype=bool)
    for f, t in enumerate(times):
        xb, xt, xh = xbar.positions[f], xtilde.positions[f], xh_all[f]
        y = exterior_path.at(t)
        den = N * (xb[:, None] - xb[None, :] + e_in) * (xt[:, None] - xt[None, :])
        bad = (den == 0) & off
        zero_den += int(bad.sum())
        with np.errstate(divide="ignore"):
            b = np.where(off & ~bad, 1.0 / np.where(den == 0, 1.0, den), 0.0)
        B[f] = b
        dk = (xb[:, None] - y[None, :] + e_out) * (xt[:, None] - g[None, :])
        badk = dk == 0
        zero_den += int(badk.sum())
        wk = np.where(badk, 0.0, 1.0 / np.where(badk, 1.0, dk)) / N
        W[f] = wk.sum(1)
        r = xh - xb
        F1[f] = (b * (r[:, None] - r[None, :] + e_in)).sum(1) \
            - 0.5 * math.exp((t - T1p) / 2) * upsilon_L * (t - T1)
        F2[f] = (wk * (r[:, None] + e_out)).sum(1) + (wk * (y[None, :] - g[None, :])).sum(1)
    flags = {"zero_denominators": zero_den, "negative_B": int((B < 0).sum()),
             "negative_W": int((W < 0).sum())}
    return CouplingCoefficients(times, B, W, F1, F2, float(eps), tuple(map(int, window)), flags)


def evolve_parabolic(coeffs, v0, forcing=None, t_span=None, dt=None):
    """Explicit SSP Heun scheme for dv/dt = -sum_j B_ij (v_i - v_j) - W_i v_i + F_i.

    Each step averages the start with two chained forward Euler stages, so it
    keeps the sum conservation and the max principle of a single Euler step
    under the same stability bound while being second order. Coefficients are
    held piecewise constant from each stored frame to the next. Returns
    (times, V) with V[n] the state after n steps.
    """
    times = coeffs.times
    t_span = t_span or (times[0], times[-1])
    if dt is None:
        raise StepSizeError("dt must be chosen by the caller")
    t0, n, h = _time_grid(t_span, dt)
    v = np.array(v0, dtype=float)
    if v.shape != coeffs.W.shape[1:]:
        raise ValueError("v0 does not match the window size")
    if forcing is not None:
        forcing = np.asarray(forcing, dtype=float)
        if forcing.shape != coeffs.W.shape:
            raise ValueError("forcing must match the coefficient frames")
    rates = coeffs.B.sum(axis=2) + coeffs.W
    checked = set()
    out = np.empty((n + 1, v.size))
    out[0] = v
    for k in range(n):
        t = t0 + k * h
        f = max(int(np.searchsorted(times, t + 1e-12 * max(1.0, abs(t)), side="right")) - 1, 0)
        if f not in checked:
            if h * rates[f].max() > 0.5:
                raise StepSizeError(f"dt * rate = {h * rates[f].max():.3g} > 0.5 at t={times[f]:.6g}")
            checked.add(f)
        B, W = coeffs.B[f], coeffs.W[f]
        F = 0.0 if forcing is None else forcing[f]
        rate = B.sum(1) + W
        u = v + h * (B @ v - rate * v + F)
        v = 0.5 * (v + u + h * (B @ u - rate * u + F))
        out[k + 1] = v
    return t0 + h * np.arange(n + 1), out
