"""Empirical checks: rigidity, level repulsion, gap laws, regularity,
finite speed of propagation, persistent trailing and gap flattening.

Every check returns a DiagnosticsReport whose pass flags are recomputed from
its statistics and thresholds.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dbm import Trajectory, evolve_parabolic
from .errors import (ContractError, DomainError, InsufficientDataError, LabelingError,
                     PreconditionError)
from .measures import Measure1D, quantiles
from .report import DiagnosticsReport

BUMP_CENTERS = (0.5, 1.0, 1.5)
BUMP_WIDTH = 0.5


@dataclass
class GapSample:
    """Rescaled consecutive gaps, one row per (replica, center index)."""

    gaps: np.ndarray
    i0: object = None
    T: float = None
    rho_star: float = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gaps = np.atleast_2d(np.asarray(self.gaps, dtype=float))
        if np.any(self.gaps < 0):
            raise ValueError("rescaled gaps must be nonnegative")

    @property
    def first(self):
        return self.gaps[:, 0]

    @property
    def flat(self):
        return self.gaps.ravel()

    def __len__(self):
        return self.gaps.shape[0]


def _as_list(traj):
    return list(traj) if isinstance(traj, (list, tuple)) else [traj]


# ---------------------------------------------------------------- rigidity

def match_labeling(lam, gamma, window, max_shift=None):
    """Integer shift minimising sum_{i in window} |lam_i - gamma_{i+shift}|.

    `window` is an inclusive pair of 1-based labels; lam and gamma are full
    ordered vectors indexed by label.
    """
    lam = np.asarray(getattr(lam, "positions", lam), dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    N = gamma.size
    lo, hi = window
    idx = np.arange(lo, hi + 1)
    max_shift = N // 10 if max_shift is None else max_shift
    best, best_cost = None, np.inf
    for sh in range(-max_shift, max_shift + 1):
        j = idx + sh
        if j[0] < 1 or j[-1] > N:
            continue
        cost = float(np.sum(np.abs(lam[idx - 1] - gamma[j - 1])))
        if cost < best_cost - 1e-15:
            best, best_cost = sh, cost
    if best is None or best_cost / idx.size > 10 * math.log(N) / N:
        raise LabelingError("no shift gives a mean deviation within 10 log N / N")
    return best


def strong_rigidity_check(traj, qpath, window, threshold=None, fraction=0.95, shifts=None):
    """Per replica: N sup_{t, i in window} |lam_i(t) - gamma_{i+shift}(t)|.

    The labeling shift is matched once at the first time and then frozen.
    """
    trajs = _as_list(traj)
    N = int(trajs[0].labels.size)
    threshold = 5 * math.log(N) if threshold is None else threshold
    lo, hi = window
    idx = np.arange(lo, hi + 1)
    qidx = {int(k): r for r, k in enumerate(qpath.indices)}
    per, used = [], []
    for r, tr in enumerate(trajs):
        gam0 = np.full(N, np.nan)
        g0 = qpath.at(tr.times[0])
        for k, row in qidx.items():
            if 1 <= k <= N:
                gam0[k - 1] = g0[row]
        if shifts is not None:
            sh = shifts[r]
        else:
            sh = _match_partial(tr.positions[0], gam0, idx, N)
        rows = np.array([qidx[int(k)] for k in idx + sh])
        worst = 0.0
        for f, t in enumerate(tr.times):
            g = qpath.at(t)[rows]
            worst = max(worst, float(np.max(np.abs(tr.positions[f, idx - 1] - g))))
        per.append(N * worst)
        used.append(int(sh))
    per = np.array(per)
    rep = DiagnosticsReport(
        "strong_rigidity",
        manifest={"N": N, "window": [int(lo), int(hi)], "seeds": [int(t.seed) for t in trajs],
                  "shifts": used, "t_window": [float(trajs[0].times[0]), float(trajs[0].times[-1])]},
        statistics={"max_scaled_deviation": float(per.max()), "median_scaled_deviation": float(np.median(per)),
                    "pass_fraction": float(np.mean(per <= threshold))},
        thresholds={"deviation": float(threshold), "fraction": fraction},
        replicas=len(trajs),
    )
    rep.manifest["per_replica"] = per.tolist()
    rep.require("rigid", "pass_fraction", ">=", "fraction")
    return rep


def _match_partial(lam, gam, idx, N):
    """match_labeling when only some gamma entries are known (NaN elsewhere)."""
    best, best_cost = None, np.inf
    for sh in range(-(N // 10), N // 10 + 1):
        j = idx + sh
        if j[0] < 1 or j[-1] > N or np.any(np.isnan(gam[j - 1])):
            continue
        cost = float(np.sum(np.abs(lam[idx - 1] - gam[j - 1])))
        if cost < best_cost - 1e-15:
            best, best_cost = sh, cost
    if best is None or best_cost / idx.size > 10 * math.log(N) / N:
        raise LabelingError("no shift gives a mean deviation within 10 log N / N")
    return best


def _density_integral(rho, E, lo, hi, n=20001):
    """int over [lo, hi] of rho(x) / (x - E) dx with E outside (lo, hi)."""
    if hi <= lo:
        return 0.0
    x = np.linspace(lo, hi, n)
    return float(np.trapezoid(rho.density(x) / (x - E), x))


def weak_rigidity_check(traj, rho_t, E_star, L, sigma_N, delta_threshold=0.05):
    """Exterior Stieltjes sum vs its continuum counterpart, at every stored time.

    rho_t is a Measure1D (time independent) or a callable t -> Measure1D.
    The excluded interval is I(t) = [gamma_{L - sigma_N}(t), gamma_{L + sigma_N}(t)].
    """
    N = traj.labels.size
    k = np.arange(1, N + 1)
    outside = np.abs(L - k) >= sigma_N
    config_ok = bool(outside.any()) and L - sigma_N >= 1 and L + sigma_N <= N
    worst = 0.0
    for f, t in enumerate(traj.times):
        rho = rho_t(t) if callable(rho_t) and not isinstance(rho_t, Measure1D) else rho_t
        slo, shi = rho.support
        a = quantiles(rho, N, max(L - sigma_N, 1)) if L - sigma_N >= 1 else slo
        b = quantiles(rho, N, min(L + sigma_N, N)) if L + sigma_N <= N else shi
        if not a < E_star < b:
            raise DomainError("E_star must lie inside the excluded interval I(t)")
        lam = traj.positions[f, outside]
        s = float(np.sum(1.0 / (lam - E_star))) / N
        integral = _density_integral(rho, E_star, slo, a) + _density_integral(rho, E_star, b, shi)
        worst = max(worst, abs(s - integral))
    rep = DiagnosticsReport(
        "weak_rigidity",
        manifest={"N": int(N), "E_star": E_star, "L": int(L), "sigma_N": int(sigma_N),
                  "seed": int(traj.seed)},
        statistics={"max_discrepancy": worst, "configuration_ok": float(config_ok)},
        thresholds={"delta": float(delta_threshold), "one": 1.0},
    )
    rep.require("weak_rigid", "max_discrepancy", "<=", "delta")
    rep.require("configuration", "configuration_ok", ">=", "one")
    if not config_ok:
        rep.notes.append("empty exterior: the statistic is the full integral")
    return rep


# ---------------------------------------------------------------- gaps

def gap_statistics(spectra, i0, n, rho_star, T=None, bulk=None):
    """(N rho*) (lam_{i0+j} - lam_{i0+j-1}), j = 1..n, for every replica.

    `spectra` is a 2-D array (replica, label), a Trajectory or a list of
    trajectories (read at time T). i0 may be a sequence of centers.
    """
    if not rho_star > 0:
        raise ValueError("rho_star must be positive")
    if isinstance(spectra, Trajectory) or (isinstance(spectra, (list, tuple))
                                           and spectra and isinstance(spectra[0], Trajectory)):
        trajs = _as_list(spectra)
        T = trajs[0].times[-1] if T is None else T
        rows = np.array([tr.at(T) for tr in trajs])
    else:
        rows = np.atleast_2d(np.asarray(spectra, dtype=float))
    N = rows.shape[1]
    lo, hi = bulk if bulk is not None else (N // 4 + 1, 3 * N // 4)
    centers = np.atleast_1d(np.asarray(i0, dtype=int))
    if np.any(centers < lo) or np.any(centers + n > hi):
        raise DomainError(f"gap indices leave the bulk window [{lo}, {hi}]")
    out = []
    for r in rows:
        for c in centers:
            out.append(np.diff(r[c - 1:c + n]) * N * rho_star)
    return GapSample(np.array(out), i0=centers.tolist(), T=T, rho_star=float(rho_star),
                     meta={"N": int(N), "n": int(n)})


def unfolded_gaps(rows, density, lo, hi):
    """Bulk gaps rescaled by the local density at their midpoints."""
    rows = np.atleast_2d(rows)
    N = rows.shape[1]
    x = rows[:, lo - 1:hi]
    mid = 0.5 * (x[:, 1:] + x[:, :-1])
    return np.diff(x, axis=1) * N * density(mid)


def level_repulsion_fit(samples, beta, u_max=0.3, band=0.3, k_min=10, n_boot=200, seed=0):
    """Log-log regression of the empirical small-gap CDF.

    Regresses log(k/n) on log s_(k) over the order statistics s_(k) <= u_max,
    skipping the k_min - 1 smallest (their CDF estimate is too noisy). The
    CI is a bootstrap percentile interval; the MLE of the exponent under a
    pure power law is reported alongside.
    """
    if not u_max <= 0.5:
        raise ValueError("u_max must be <= 0.5")
    g = np.concatenate([s.flat for s in samples]) if isinstance(samples, (list, tuple)) \
        else (samples.flat if isinstance(samples, GapSample) else np.ravel(samples))
    g = np.asarray(g, dtype=float)

    def fit(x):
        s = np.sort(x)
        m = int(np.searchsorted(s, u_max, side="right"))
        if m < 100:
            raise InsufficientDataError(f"only {m} gaps below u_max = {u_max} (need 100)")
        k = np.arange(k_min, m + 1)
        slope = np.polyfit(np.log(s[k - 1]), np.log(k / x.size), 1)[0]
        mle = m / np.sum(np.log(u_max / s[:m]))
        return slope, mle, m

    slope, mle, m = fit(g)
    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(n_boot):
        try:
            boot.append(fit(rng.choice(g, g.size))[0])
        except InsufficientDataError:
            continue
    lo, hi = np.percentile(boot, [2.5, 97.5]) if boot else (np.nan, np.nan)
    target = beta + 1
    rep = DiagnosticsReport(
        "level_repulsion",
        manifest={"beta": beta, "u_max": u_max, "n_gaps": int(g.size), "k_min": k_min},
        statistics={"slope": float(slope), "slope_ci_low": float(lo), "slope_ci_high": float(hi),
                    "mle_exponent": float(mle), "n_small": float(m)},
        thresholds={"band_low": target - band, "band_high": target + band},
    )
    rep.require("in_band", "slope", ">=", "band_low")
    rep.require("in_band", "slope", "<=", "band_high")
    if g.size < 10_000:
        rep.notes.append(f"only {g.size} gaps; at least 10^4 recommended")
    return rep


def bump(s, c, w=BUMP_WIDTH):
    """exp(-1 / (1 - ((s - c)/w)^2)) on |s - c| < w, else 0."""
    u = (np.asarray(s, dtype=float) - c) / w
    inside = np.abs(u) < 1
    out = np.zeros_like(u)
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def observable_battery(sample):
    """E phi_c(g1) and E phi_c(g1) phi_c(g2) for the fixed centers."""
    g = sample.gaps
    vals = [float(np.mean(bump(g[:, 0], c))) for c in BUMP_CENTERS]
    if g.shape[1] >= 2:
        vals += [float(np.mean(bump(g[:, 0], c) * bump(g[:, 1], c))) for c in BUMP_CENTERS]
    return np.array(vals)


def compare_gap_laws(a, b, ks_factor=1.5, obs_threshold=0.05):
    na, nb = len(a), len(b)
    if na < 1000 or nb < 1000:
        raise InsufficientDataError("need at least 10^3 gaps on each side")
    ks = float(stats.ks_2samp(a.first, b.first).statistic)
    oa, ob = observable_battery(a), observable_battery(b)
    k = min(oa.size, ob.size)
    diff = np.abs(oa[:k] - ob[:k])
    rep = DiagnosticsReport(
        "gap_comparison",
        manifest={"n_a": na, "n_b": nb, "bump_centers": list(BUMP_CENTERS), "bump_width": BUMP_WIDTH},
        statistics={"ks": ks, "observable_mean_abs_diff": float(diff.mean()),
                    "observable_max_abs_diff": float(diff.max())},
        thresholds={"ks_bound": ks_factor * 1.36 * math.sqrt(1.0 / na + 1.0 / nb),
                    "observable": obs_threshold},
    )
    rep.require("ks", "ks", "<=", "ks_bound")
    rep.require("observables", "observable_mean_abs_diff", "<=", "observable")
    return rep


# ---------------------------------------------------------------- parabolic equation

def regularity_average(coeffs, Z, theta, rho_threshold=0.1, N=None):
    """sup over recorded t and dyadic M of
    (1/N + |t - theta|)^{-1} int_t^theta M^{-1} sum_{i<j, |i-Z|,|j-Z| <= M} |B_ij| ds.

    Z is a position inside the window (0-based). Reports rho_hat = log_N(stat / N).
    """
    times = coeffs.times
    if times.size < 2:
        raise InsufficientDataError("need at least two coefficient records")
    K = coeffs.B.shape[1]
    N = N or K
    if not times[0] - 1e-12 <= theta <= times[-1] + 1e-12:
        raise InsufficientDataError("theta outside the recorded times")
    Ms = [1]
    while 2 * Ms[-1] <= K:
        Ms.append(2 * Ms[-1])
    absB = np.abs(coeffs.B)
    dts = np.diff(times)
    best = 0.0
    for M in Ms:
        lo, hi = max(0, Z - M), min(K, Z + M + 1)
        sub = absB[:, lo:hi, lo:hi]
        per_t = np.triu(sub, 1).sum(axis=(1, 2)) / M
        # cumulative integral with left-point rule on the recorded grid
        cum = np.concatenate([[0.0], np.cumsum(per_t[:-1] * dts)])
        f_theta = int(np.argmin(np.abs(times - theta)))
        integ = np.abs(cum[f_theta] - cum)
        val = integ / (1.0 / N + np.abs(times - theta))
        best = max(best, float(val.max()))
    rho_hat = math.log(best / N, N) if best > 0 else -np.inf
    rep = DiagnosticsReport(
        "regularity_average",
        manifest={"Z": int(Z), "theta": float(theta), "N": int(N), "dyadic_M": Ms},
        statistics={"statistic": best, "rho_hat": float(rho_hat)},
        thresholds={"rho": rho_threshold},
    )
    rep.require("regular", "rho_hat", "<=", "rho")
    return rep


def finite_speed_check(coeffs, j, t_span=None, N=None, C_threshold=10.0, dt=None, safety=0.45):
    """Propagator column U_{.j}(t, s) by the explicit parabolic scheme from the basis vector e_j.

    ratio(i, t) = |U_ij| |i - j| / (K^{1/2} sqrt(N (t - s) + 1)), i != j.
    K here is the half-width of the window, (size - 1) / 2. Unless dt is
    given, each coefficient frame is stepped with its own stable step
    safety / rate, so a single stiff frame does not slow down the others.
    """
    size = coeffs.W.shape[1]
    K = (size - 1) // 2
    N = N or size
    times = coeffs.times
    t_span = t_span or (times[0], times[-1])
    s0, s1 = float(t_span[0]), float(t_span[1])
    rates = (coeffs.B.sum(axis=2) + coeffs.W).max(axis=1)
    cuts = [s0] + [float(t) for t in times if s0 < t < s1] + [s1]
    v = np.zeros(size)
    v[j] = 1.0
    ts, rows, steps = [np.array([s0])], [v[None, :]], 0
    for a, b in zip(cuts[:-1], cuts[1:]):
        f = max(int(np.searchsorted(times, a + 1e-12 * max(1.0, abs(a)), side="right")) - 1, 0)
        h = dt if dt is not None else safety / max(float(rates[f]), 1e-300)
        h = min(h, b - a)
        tt, U = evolve_parabolic(coeffs, v, None, (a, b), h)
        v = U[-1]
        ts.append(tt[1:])
        rows.append(U[1:])
        steps += tt.size - 1
    ts, U = np.concatenate(ts), np.vstack(rows)
    dist = np.abs(np.arange(size) - j).astype(float)
    denom = math.sqrt(max(K, 1)) * np.sqrt(N * (ts - s0) + 1.0)
    ratio = np.abs(U) * dist[None, :] / denom[:, None]
    rep = DiagnosticsReport(
        "finite_speed",
        manifest={"j": int(j), "t_span": [s0, s1], "N": int(N), "K": int(K), "steps": int(steps)},
        statistics={"max_ratio": float(ratio.max()), "sup_norm_end": float(np.abs(U[-1]).max()),
                    "mass_end": float(U[-1].sum())},
        thresholds={"C": C_threshold},
    )
    rep.require("finite_speed", "max_ratio", "<=", "C")
    return rep


# ---------------------------------------------------------------- trailing and flattening

def persistent_trailing_check(traj, qpath, L, t_span=None, start_C=None, sup_threshold=None,
                              ratio_threshold=0.5, fraction=0.9, match_halfwidth=10):
    """sup_t N |lam_L - gamma_{l(L)}| and sup_t |lam_L(t) - lam_L(t1)| / sqrt((t2 - t1)/N)."""
    trajs = _as_list(traj)
    N = int(trajs[0].labels.size)
    sup_threshold = 5 * math.log(N) ** 2 if sup_threshold is None else sup_threshold
    start_C = sup_threshold if start_C is None else start_C
    qidx = {int(k): r for r, k in enumerate(qpath.indices)}
    sups, ratios = [], []
    for tr in trajs:
        sel = np.ones(tr.times.size, bool)
        if t_span is not None:
            sel = (tr.times >= t_span[0] - 1e-12) & (tr.times <= t_span[1] + 1e-12)
        times = tr.times[sel]
        pos = tr.positions[sel]
        gam0 = np.full(N, np.nan)
        g0 = qpath.at(times[0])
        for k, r in qidx.items():
            if 1 <= k <= N:
                gam0[k - 1] = g0[r]
        win = np.arange(max(1, L - match_halfwidth), min(N, L + match_halfwidth) + 1)
        sh = _match_partial(pos[0], gam0, win, N)
        row = qidx[L + sh]
        gam = np.array([qpath.at(t)[row] for t in times])
        lamL = pos[:, L - 1]
        if N * abs(lamL[0] - gam[0]) > start_C:
            raise PreconditionError("lambda_L starts too far from its quantile")
        sups.append(N * float(np.max(np.abs(lamL - gam))))
        ratios.append(float(np.max(np.abs(lamL - lamL[0]))) / math.sqrt((times[-1] - times[0]) / N))
    sups, ratios = np.array(sups), np.array(ratios)
    ok = (sups <= sup_threshold) & (ratios <= ratio_threshold)
    rep = DiagnosticsReport(
        "persistent_trailing",
        manifest={"N": N, "L": int(L), "seeds": [int(t.seed) for t in trajs]},
        statistics={"max_scaled_sup": float(sups.max()), "median_ratio": float(np.median(ratios)),
                    "max_ratio": float(ratios.max()), "pass_fraction": float(ok.mean())},
        thresholds={"sup": float(sup_threshold), "ratio": ratio_threshold, "fraction": fraction},
        replicas=len(trajs),
    )
    rep.manifest["per_replica_sup"] = sups.tolist()
    rep.manifest["per_replica_ratio"] = ratios.tolist()
    rep.require("trailing", "pass_fraction", ">=", "fraction")
    return rep


def gap_difference(xhat, xtilde, L, t, C=2):
    """N max_{|i - L| <= C} |(xh_{i+1} - xh_i) - (xt_{i+1} - xt_i)| at time t."""
    a, b = xhat.at(t), xtilde.at(t)
    pos = int(np.flatnonzero(xhat.labels == L)[0])
    lo, hi = max(0, pos - C), min(a.size - 1, pos + C + 1)
    da = np.diff(a[lo:hi])
    db = np.diff(b[lo:hi])
    N = xhat.meta.get("N", a.size)
    return float(N * np.max(np.abs(da - db)))


def gap_flattening_check(xhat, xtilde, L, T1p, T1pp, C=2, factor=0.5, fraction=None,
                         require_coupled=True):
    """Ratio of the gap-difference statistic at T1'' to its value at T1'.

    xhat, xtilde are trajectories (or equal-length lists of them). With
    require_coupled the pairs must share their seed and noise stream.
    """
    xs, ys = _as_list(xhat), _as_list(xtilde)
    if len(xs) != len(ys):
        raise ValueError("need as many x_hat as x_tilde trajectories")
    s1, s2 = [], []
    for a, b in zip(xs, ys):
        if require_coupled and (a.seed != b.seed or a.meta.get("stream", 0) != b.meta.get("stream", 0)):
            raise ContractError("trajectories are not driven by the same noise")
        if not np.array_equal(a.labels, b.labels):
            raise ContractError("trajectories cover different windows")
        s1.append(gap_difference(a, b, L, T1p, C))
        s2.append(gap_difference(a, b, L, T1pp, C))
    s1, s2 = np.array(s1), np.array(s2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = s2 <= factor * s1
    frac = float(ok.mean())
    fraction = (1.0 if len(xs) == 1 else 0.8) if fraction is None else fraction
    rep = DiagnosticsReport(
        "gap_flattening",
        manifest={"L": int(L), "T1p": float(T1p), "T1pp": float(T1pp), "C": int(C),
                  "seeds": [int(a.seed) for a in xs]},
        statistics={"median_stat_T1p": float(np.median(s1)), "median_stat_T1pp": float(np.median(s2)),
                    "pass_fraction": frac},
        thresholds={"fraction": fraction},
        replicas=len(xs),
    )
    rep.manifest["per_replica_T1p"] = s1.tolist()
    rep.manifest["per_replica_T1pp"] = s2.tolist()
    rep.require("flattened", "pass_fraction", ">=", "fraction")
    return rep
