"""Named experiments for the runner.

Each experiment has a parameter model, a `simulate(cfg, p, seed)` step that
returns named Frames (the only data that gets persisted) and an
`analyze(cfg, p, data)` step that turns {seed: {name: Frames}} into reports
without drawing any randomness. `figure(cfg, p, data)` returns (series, x, y)
rows that the runner writes to CSV and plots from that CSV alone.
"""

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import dbm, diagnostics, flow, local_gibbs, matrix_flow, measures
from .dbm import Trajectory
from .report import DiagnosticsReport
from .rng import derive_seed


@dataclass
class Frames:
    times: np.ndarray
    values: np.ndarray
    labels: np.ndarray = None
    beta: float = 0.0
    dt: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.labels is None:
            self.labels = np.arange(1, self.values.shape[1] + 1)
        self.labels = np.asarray(self.labels, dtype=int)

    @classmethod
    def of(cls, traj):
        return cls(traj.times, traj.positions, traj.labels, traj.beta, traj.dt, traj.seed)

    def trajectory(self, ordered=False, **meta):
        return Trajectory(self.times, self.values, self.labels, self.beta, self.dt, int(self.seed),
                          meta=dict(meta), ordered=ordered)


class Params(BaseModel):
    model_config = ConfigDict(extra="forbid")


@dataclass
class Experiment:
    name: str
    params: type
    simulate: object
    analyze: object
    figure: object
    description: str = ""
    deterministic: bool = False
    defaults: dict = field(default_factory=dict)


REGISTRY = {}


def register(name, params, description, deterministic=False):
    def deco(cls):
        REGISTRY[name] = Experiment(name, params, cls.simulate, cls.analyze, cls.figure,
                                    description, deterministic)
        return cls
    return deco


def _tw(cfg, default):
    return tuple(cfg.t_window) if cfg.t_window is not None else default


def _semicircle_qpath(N, indices, t_end):
    g = measures.semicircle_quantiles(N)[np.asarray(indices) - 1]
    return flow.QuantilePath(indices, [0.0, max(t_end, 1e-12)], np.column_stack([g, g]))


# ---------------------------------------------------------------- flow experiments

class SemicircleParams(Params):
    times: list[float] = [0.1, 1.0, 5.0]
    nodes: int = Field(1200, ge=50)
    grid_n: int = Field(401, ge=3)
    bulk: float = Field(1.9, gt=0, lt=2)
    tolerance: float = 1e-4


@register("semicircle-invariance", SemicircleParams,
          "flow_density of the semicircle stays the semicircle", deterministic=True)
class _SemicircleInvariance:
    @staticmethod
    def simulate(cfg, p, seed):
        rho = measures.semicircle_nodes(p.nodes)
        grid = np.linspace(-p.bulk, p.bulk, p.grid_n)
        vals = [np.clip(flow.density_and_hilbert(rho, t, grid)[0], 0.0, None) for t in p.times]
        return {"density": Frames(p.times, np.array(vals), np.arange(1, grid.size + 1))}

    @staticmethod
    def analyze(cfg, p, data):
        grid = np.linspace(-p.bulk, p.bulk, p.grid_n)
        d = data[min(data)]["density"]
        dev = float(np.max(np.abs(d.values - measures.semicircle_density(grid)[None, :])))
        rep = DiagnosticsReport("semicircle_invariance",
                                manifest={"times": list(p.times), "grid": [-p.bulk, p.bulk, p.grid_n]},
                                statistics={"sup_deviation": dev}, thresholds={"deviation": p.tolerance})
        return [rep.require("invariant", "sup_deviation", "<=", "deviation")]

    @staticmethod
    def figure(cfg, p, data):
        grid = np.linspace(-p.bulk, p.bulk, p.grid_n)
        d = data[min(data)]["density"]
        rows = [("semicircle", x, y) for x, y in zip(grid, measures.semicircle_density(grid))]
        for t, v in zip(d.times, d.values):
            rows += [(f"t={t:g}", x, y) for x, y in zip(grid, v)]
        return rows


class AtomParams(Params):
    times: list[float] = [0.2, math.log(2.0), 2.0]
    atom: float = 0.0
    grid_n: int = Field(401, ge=3)
    bulk_fraction: float = Field(0.95, gt=0, lt=1)
    tolerance: float = 1e-4


def _atom_grid(p, t):
    r = 2 * math.sqrt(-math.expm1(-t))
    c = p.atom * math.exp(-t / 2)
    return c + np.linspace(-p.bulk_fraction * r, p.bulk_fraction * r, p.grid_n), c, r / 2


@register("flow-from-atoms", AtomParams, "flow of a point mass against the scaled semicircle",
          deterministic=True)
class _FlowFromAtoms:
    @staticmethod
    def simulate(cfg, p, seed):
        rho = measures.point_mass(p.atom)
        vals = []
        for t in p.times:
            grid, _, _ = _atom_grid(p, t)
            vals.append(np.clip(flow.density_and_hilbert(rho, t, grid)[0], 0.0, None))
        return {"density": Frames(p.times, np.array(vals))}

    @staticmethod
    def analyze(cfg, p, data):
        d = data[min(data)]["density"]
        dev = 0.0
        for t, v in zip(d.times, d.values):
            grid, c, scale = _atom_grid(p, t)
            dev = max(dev, float(np.max(np.abs(v - measures.semicircle_density(grid, c, scale)))))
        rep = DiagnosticsReport("flow_from_atoms", manifest={"times": list(p.times), "atom": p.atom},
                                statistics={"sup_deviation": dev}, thresholds={"deviation": p.tolerance})
        return [rep.require("scaled_semicircle", "sup_deviation", "<=", "deviation")]

    @staticmethod
    def figure(cfg, p, data):
        d = data[min(data)]["density"]
        rows = []
        for t, v in zip(d.times, d.values):
            grid, _, _ = _atom_grid(p, t)
            rows += [(f"t={t:g}", x, y) for x, y in zip(grid, v)]
        return rows


class QuantileParams(Params):
    atoms: list[float] = [-1.0, 1.0]
    indices: list[int] = [30, 60, 80, 120, 140, 170]
    n_times: int = Field(11, ge=2)
    tolerance: float = 1e-4
    reanchor_every: Optional[int] = None


@register("quantile-consistency", QuantileParams,
          "quantile ODE against direct quantiles of the evolved density", deterministic=True)
class _QuantileConsistency:
    @staticmethod
    def simulate(cfg, p, seed):
        rho = measures.Measure1D.atomic(p.atoms)
        t0, t1 = _tw(cfg, (0.0, 0.5))
        tg = np.linspace(t0, t1, p.n_times)
        path = flow.quantile_flow(rho, cfg.N, p.indices, tg, reanchor_every=p.reanchor_every)
        direct = [flow.direct_quantiles(rho, t, cfg.N, p.indices) if t > 0
                  else np.asarray(measures.quantiles(rho, cfg.N, p.indices)) for t in tg]
        return {"ode": Frames(path.times, path.gamma.T, p.indices),
                "direct": Frames(tg, np.array(direct), p.indices)}

    @staticmethod
    def analyze(cfg, p, data):
        d = data[min(data)]
        dev = float(np.max(np.abs(d["ode"].values - d["direct"].values)))
        rep = DiagnosticsReport("quantile_consistency",
                                manifest={"N": cfg.N, "atoms": list(p.atoms), "indices": list(p.indices)},
                                statistics={"max_deviation": dev}, thresholds={"deviation": p.tolerance})
        return [rep.require("consistent", "max_deviation", "<=", "deviation")]

    @staticmethod
    def figure(cfg, p, data):
        d = data[min(data)]
        rows = []
        for j, k in enumerate(d["ode"].labels):
            rows += [(f"ode {k}", t, g) for t, g in zip(d["ode"].times, d["ode"].values[:, j])]
            rows += [(f"direct {k}", t, g) for t, g in zip(d["direct"].times, d["direct"].values[:, j])]
        return rows


# ---------------------------------------------------------------- particle experiments

class RigidityParams(Params):
    window_exponent: float = Field(0.2, gt=0)
    dt: Optional[float] = None
    stride: int = Field(10, ge=1)
    threshold_logs: float = 5.0
    fraction: float = 0.95


@register("dbm-rigidity", RigidityParams, "GUE-started DBM stays near its quantiles")
class _DbmRigidity:
    @staticmethod
    def simulate(cfg, p, seed):
        N = cfg.N
        lam = matrix_flow.eigenvalues(matrix_flow.gaussian_ensemble(N, int(cfg.beta), seed))
        tw = _tw(cfg, (0.0, N ** -p.window_exponent))
        tr = dbm.run_dbm(lam, tw, dt=p.dt or 0.1 / N, beta=cfg.beta, seed=seed, stride=p.stride)
        return {"trajectory": Frames.of(tr)}

    @staticmethod
    def analyze(cfg, p, data):
        N = cfg.N
        trs = [data[s]["trajectory"].trajectory() for s in sorted(data)]
        lo, hi = N // 3 + 1, 2 * N // 3
        margin = N // 10
        qp = _semicircle_qpath(N, np.arange(max(1, lo - margin), min(N, hi + margin) + 1), trs[0].times[-1])
        return [diagnostics.strong_rigidity_check(trs, qp, (lo, hi), p.threshold_logs * math.log(N),
                                                  p.fraction)]

    @staticmethod
    def figure(cfg, p, data):
        N = cfg.N
        g = measures.semicircle_quantiles(N)
        rows = []
        for s in sorted(data):
            tr = data[s]["trajectory"]
            i = N // 2
            rows += [(f"seed {s}", t, N * (x - g[i - 1])) for t, x in zip(tr.times, tr.values[:, i - 1])]
        return rows


class OUParams(Params):
    t: float = Field(0.5, gt=0)
    n_steps: int = Field(100, ge=1)
    start: Literal["gaussian", "deformed"] = "deformed"


@register("ou-crosscheck", OUParams, "composed OU steps against the closed-form OU law")
class _OUCrosscheck:
    @staticmethod
    def simulate(cfg, p, seed):
        N, beta = cfg.N, int(cfg.beta)
        spec = matrix_flow.deformed_spec(N, beta) if p.start == "deformed" else matrix_flow.WignerLikeSpec(N, beta)
        H0 = matrix_flow.sample_matrix(spec, seed)
        a = matrix_flow.ou_path(H0, p.t, p.n_steps, derive_seed(seed, 1), beta)
        b = matrix_flow.ou_closed_form(H0, p.t, derive_seed(seed, 2), beta)
        return {"composed": Frames([p.t], matrix_flow.eigenvalues(a)[None, :], seed=seed),
                "closed": Frames([p.t], matrix_flow.eigenvalues(b)[None, :], seed=seed)}

    @staticmethod
    def analyze(cfg, p, data):
        from scipy import stats
        N = cfg.N
        sl = slice(N // 4, 3 * N // 4)
        a = np.concatenate([data[s]["composed"].values[0, sl] for s in sorted(data)])
        b = np.concatenate([data[s]["closed"].values[0, sl] for s in sorted(data)])
        ks = float(stats.ks_2samp(a, b).statistic)
        rep = DiagnosticsReport("ou_crosscheck", manifest={"N": N, "t": p.t, "n_steps": p.n_steps,
                                                           "seeds": sorted(data)},
                                statistics={"ks": ks},
                                thresholds={"ks_bound": 1.36 * math.sqrt(1 / a.size + 1 / b.size)},
                                replicas=len(data))
        return [rep.require("same_law", "ks", "<=", "ks_bound")]

    @staticmethod
    def figure(cfg, p, data):
        N = cfg.N
        sl = slice(N // 4, 3 * N // 4)
        rows = []
        for name in ("composed", "closed"):
            x = np.sort(np.concatenate([data[s][name].values[0, sl] for s in sorted(data)]))
            rows += [(name, v, (i + 1) / x.size) for i, v in enumerate(x[::10])]
        return rows


class UniversalityParams(Params):
    t: float = Field(0.5, ge=0)
    n_centers: int = Field(20, ge=1)
    n_gaps: int = Field(2, ge=1, le=2)
    rescale: Literal["matched", "semicircle"] = "matched"
    ks_factor: float = 1.5
    observable_tolerance: float = 0.05


def _universality_centers(N, p):
    return np.linspace(N // 4 + 1, 3 * N // 4 - p.n_gaps - 1, p.n_centers).round().astype(int)


def _deformed_law(N, t):
    """Limit law of exp(-t/2)(A + W) + sqrt(1 - e^{-t}) U: exp(-t/2) A boxplus SC(1)."""
    A = measures.Measure1D.atomic([-1.0, 1.0])
    grid = np.linspace(-1.0 - 2.5, 1.0 + 2.5, 7001)
    return flow.free_convolution_density(A, math.exp(-t / 2), 1.0, grid)


@register("gap-universality", UniversalityParams, "deformed Wigner gaps after the OU flow against GUE")
class _GapUniversality:
    @staticmethod
    def simulate(cfg, p, seed):
        N, beta = cfg.N, int(cfg.beta)
        H0 = matrix_flow.sample_matrix(matrix_flow.deformed_spec(N, beta), seed)
        H = matrix_flow.ou_closed_form(H0, p.t, derive_seed(seed, 1), beta)
        G = matrix_flow.gaussian_ensemble(N, beta, derive_seed(seed, 2))
        return {"deformed": Frames([p.t], matrix_flow.eigenvalues(H)[None, :], seed=seed),
                "gaussian": Frames([0.0], matrix_flow.eigenvalues(G)[None, :], seed=seed)}

    @staticmethod
    def samples(cfg, p, data):
        N = cfg.N
        centers = _universality_centers(N, p)
        law = _deformed_law(N, p.t)
        gq = np.asarray(measures.quantiles(law, N, centers))
        rho_def = law.density(gq) if p.rescale == "matched" else \
            measures.semicircle_density(measures.semicircle_quantiles(N)[centers - 1])
        rho_sc = measures.semicircle_density(measures.semicircle_quantiles(N)[centers - 1])
        A = np.array([data[s]["deformed"].values[0] for s in sorted(data)])
        B = np.array([data[s]["gaussian"].values[0] for s in sorted(data)])
        ga, gb = [], []
        for c, ra, rb in zip(centers, rho_def, rho_sc):
            ga.append(diagnostics.gap_statistics(A, int(c), p.n_gaps, float(ra)).gaps)
            gb.append(diagnostics.gap_statistics(B, int(c), p.n_gaps, float(rb)).gaps)
        return (diagnostics.GapSample(np.vstack(ga), centers.tolist()),
                diagnostics.GapSample(np.vstack(gb), centers.tolist()))

    @staticmethod
    def analyze(cfg, p, data):
        a, b = _GapUniversality.samples(cfg, p, data)
        rep = diagnostics.compare_gap_laws(a, b, p.ks_factor, p.observable_tolerance)
        rep.manifest.update({"N": cfg.N, "t": p.t, "rescale": p.rescale, "seeds": sorted(data)})
        rep.replicas = len(data)
        return [rep]

    @staticmethod
    def figure(cfg, p, data):
        a, b = _GapUniversality.samples(cfg, p, data)
        edges = np.linspace(0, 4, 41)
        rows = []
        for name, s in (("deformed", a), ("gaussian", b)):
            h, _ = np.histogram(s.first, edges, density=True)
            rows += [(name, 0.5 * (edges[i] + edges[i + 1]), h[i]) for i in range(h.size)]
        return rows


class RepulsionParams(Params):
    generator: Literal["gaussian", "poisson-control"] = "gaussian"
    u_max: float = Field(0.3, gt=0, le=0.5)
    band: float = 0.3
    k_min: int = Field(10, ge=1)
    n_boot: int = Field(200, ge=0)


@register("level-repulsion", RepulsionParams, "small-gap exponent of Gaussian ensembles")
class _LevelRepulsion:
    @staticmethod
    def simulate(cfg, p, seed):
        N = cfg.N
        if p.generator == "gaussian":
            lam = matrix_flow.eigenvalues(matrix_flow.gaussian_ensemble(N, int(cfg.beta), seed))
        else:
            lam = np.sort(np.random.default_rng(seed).uniform(0.0, 1.0, N))
        return {"spectrum": Frames([0.0], lam[None, :], seed=seed)}

    @staticmethod
    def gaps(cfg, p, data):
        N = cfg.N
        rows = np.array([data[s]["spectrum"].values[0] for s in sorted(data)])
        dens = measures.semicircle_density if p.generator == "gaussian" else (lambda x: np.ones_like(x))
        return diagnostics.unfolded_gaps(rows, dens, N // 4 + 1, 3 * N // 4).ravel()

    @staticmethod
    def analyze(cfg, p, data):
        g = _LevelRepulsion.gaps(cfg, p, data)
        rep = diagnostics.level_repulsion_fit(g, cfg.beta, p.u_max, p.band, p.k_min, p.n_boot)
        rep.manifest.update({"N": cfg.N, "generator": p.generator, "seeds": sorted(data)})
        rep.replicas = len(data)
        return [rep]

    @staticmethod
    def figure(cfg, p, data):
        s = np.sort(_LevelRepulsion.gaps(cfg, p, data))
        m = int(np.searchsorted(s, p.u_max))
        k = np.arange(1, m + 1)
        return [("empirical", math.log(s[i - 1]), math.log(i / s.size)) for i in k if s[i - 1] > 0]


class GibbsParams(Params):
    K: int = Field(20, ge=1)
    L: Optional[int] = None
    n_samples: int = Field(250, ge=1)
    dt: Optional[float] = None
    rigidity_logs: float = 5.0
    violation_fraction: float = 0.05
    u_max: float = Field(0.3, gt=0, le=0.5)
    band: float = 0.3
    n_boot: int = Field(200, ge=0)


def _gibbs_spec(cfg, p):
    N, K = cfg.N, p.K
    L = p.L or N // 2
    g = measures.semicircle_quantiles(N)
    _, outside = dbm.window_labels(L, K, N)
    return local_gibbs.LocalMeasureSpec(L, K, g[outside - 1], N, cfg.beta)


@register("local-gibbs-sample", GibbsParams, "Langevin samples of the local measure: rigidity and repulsion")
class _LocalGibbs:
    @staticmethod
    def simulate(cfg, p, seed):
        spec = _gibbs_spec(cfg, p)
        # small gaps need steps well below the 0.1/N default: per-step noise must stay
        # under the gap scale the repulsion fit reads (u <= 0.3 mean spacings)
        dt = p.dt or 0.01 / spec.N
        res = local_gibbs.sample_local_gibbs(spec, n_samples=p.n_samples, dt=dt, seed=seed)
        inside, _ = dbm.window_labels(spec.L, spec.K, spec.N)
        return {"samples": Frames(res.times, res.samples, inside, cfg.beta, res.meta["dt"], seed)}

    @staticmethod
    def analyze(cfg, p, data):
        spec = _gibbs_spec(cfg, p)
        N = spec.N
        alpha = local_gibbs.equidistant_points(spec)
        X = np.vstack([data[s]["samples"].values for s in sorted(data)])
        dev = N * np.max(np.abs(X - alpha[None, :]), axis=1)
        viol = float(np.mean(dev > p.rigidity_logs * math.log(N)))
        rig = DiagnosticsReport("local_gibbs_rigidity",
                                manifest={"N": N, "K": spec.K, "L": spec.L, "seeds": sorted(data)},
                                statistics={"violation_fraction": viol, "max_scaled_deviation": float(dev.max())},
                                thresholds={"violations": p.violation_fraction}, replicas=X.shape[0])
        rig.require("rigid", "violation_fraction", "<=", "violations")
        rho = measures.semicircle_density(0.5 * (X[:, 1:] + X[:, :-1]))
        g = (np.diff(X, axis=1) * N * rho).ravel()
        rep = diagnostics.level_repulsion_fit(g, cfg.beta, p.u_max, p.band, n_boot=p.n_boot)
        rep.name = "local_gibbs_repulsion"
        rep.replicas = X.shape[0]
        return [rig, rep]

    @staticmethod
    def figure(cfg, p, data):
        spec = _gibbs_spec(cfg, p)
        inside, _ = dbm.window_labels(spec.L, spec.K, spec.N)
        X = np.vstack([data[s]["samples"].values for s in sorted(data)])
        d = spec.N * (X - local_gibbs.equidistant_points(spec)[None, :])
        return [("mean", int(k), float(m)) for k, m in zip(inside, d.mean(0))] + \
            [("std", int(k), float(v)) for k, v in zip(inside, d.std(0))]


# ---------------------------------------------------------------- coupling experiments

class CouplingParams(Params):
    K: int = Field(20, ge=1)
    L: Optional[int] = None
    dt: Optional[float] = None
    stride: int = Field(5, ge=1)
    t1p_offset: float = Field(1.0, ge=0)       # T1' - T1 in units of 1/N
    t1pp_offset: Optional[float] = None        # T1'' - T1' in units of 1/N, default K
    C: int = Field(2, ge=1)
    factor: float = 0.5
    fraction: float = 0.8
    coupled: bool = True
    start: Literal["equidistant", "same"] = "equidistant"


def _window_setup(cfg, K, L, seed, t_end, dt, stride):
    """Full DBM from a GUE/GOE draw, its exterior path and the reference points."""
    N = cfg.N
    lam = matrix_flow.eigenvalues(matrix_flow.gaussian_ensemble(N, int(cfg.beta), seed))
    full = dbm.run_dbm(lam, (0.0, t_end), dt=dt, beta=cfg.beta, seed=seed, stride=stride)
    inside, outside = dbm.window_labels(L, K, N)
    rho = measures.semicircle()
    y0 = lam[outside - 1]
    aux = local_gibbs.build_aux_ensemble(rho, measures.quantiles(rho, N, L), y0, L, K, N)
    g = local_gibbs.build_reference_points(y0, aux.z, L, K, N)
    return lam, full, inside, outside, g


@register("coupling-flatten", CouplingParams, "gap differences of the coupled pair flatten out")
class _CouplingFlatten:
    @staticmethod
    def times(cfg, p):
        N = cfg.N
        t1p = p.t1p_offset / N
        return t1p, t1p + (p.t1pp_offset if p.t1pp_offset is not None else p.K) / N

    @staticmethod
    def simulate(cfg, p, seed):
        N, K = cfg.N, p.K
        L = p.L or N // 2
        dt = p.dt or 0.1 / N
        _, t_end = _CouplingFlatten.times(cfg, p)
        lam, full, inside, outside, g = _window_setup(cfg, K, L, seed, t_end, dt, p.stride)
        xh = dbm.run_regularized(lam[inside - 1], full.select(outside), (L, K), t_span=(0.0, t_end),
                                 dt=dt, beta=cfg.beta, seed=seed, stride=p.stride)
        if p.start == "same":
            x0 = lam[inside - 1]
        else:
            lo, hi = g[L - K - 2], g[L - K - 1]
            x0 = lo + (hi - lo) * np.arange(1, 2 * K + 2) / (2 * K + 2)
        xt = dbm.run_coupled_reference(x0, g, (L, K), t_span=(0.0, t_end), dt=dt, beta=cfg.beta,
                                       seed=seed, stride=p.stride, stream=0 if p.coupled else 1)
        return {"xhat": Frames.of(xh), "xtilde": Frames.of(xt)}

    @staticmethod
    def analyze(cfg, p, data):
        N = cfg.N
        L = p.L or N // 2
        t1p, t1pp = _CouplingFlatten.times(cfg, p)
        xs = [data[s]["xhat"].trajectory(N=N) for s in sorted(data)]
        ys = [data[s]["xtilde"].trajectory(N=N, stream=0 if p.coupled else 1) for s in sorted(data)]
        rep = diagnostics.gap_flattening_check(xs, ys, L, t1p, t1pp, p.C, p.factor, p.fraction,
                                               require_coupled=p.coupled)
        rep.manifest.update({"N": N, "K": p.K, "coupled": p.coupled, "start": p.start})
        return [rep]

    @staticmethod
    def figure(cfg, p, data):
        N = cfg.N
        L = p.L or N // 2
        rows = []
        for s in sorted(data):
            a = data[s]["xhat"].trajectory(N=N)
            b = data[s]["xtilde"].trajectory(N=N)
            rows += [(f"seed {s}", t, diagnostics.gap_difference(a, b, L, t, p.C)) for t in a.times[1:]]
        return rows


class FiniteSpeedParams(Params):
    K: int = Field(20, ge=1)
    L: Optional[int] = None
    j: Optional[int] = None
    span: Optional[float] = None       # default K/N
    dt: Optional[float] = None
    stride: int = Field(10, ge=1)
    C: float = 10.0


@register("finite-speed", FiniteSpeedParams, "propagator of the coupling equation stays local")
class _FiniteSpeed:
    @staticmethod
    def simulate(cfg, p, seed):
        N, K = cfg.N, p.K
        L = p.L or N // 2
        dt = p.dt or 0.1 / N
        span = p.span or K / N
        lam, full, inside, outside, g = _window_setup(cfg, K, L, seed, span, dt, p.stride)
        xt = dbm.run_coupled_reference(lam[inside - 1], g, (L, K), t_span=(0.0, span), dt=dt,
                                       beta=cfg.beta, seed=seed, stride=p.stride)
        return {"xbar": Frames.of(full.select(inside)), "xtilde": Frames.of(xt),
                "exterior": Frames.of(full.select(outside)),
                "tilde_gamma": Frames([0.0], g[None, :], outside)}

    @staticmethod
    def coefficients(cfg, p, d):
        return dbm.extract_coupling(d["xbar"].trajectory(), d["xtilde"].trajectory(),
                                    d["exterior"].trajectory(), d["tilde_gamma"].values[0])

    @staticmethod
    def analyze(cfg, p, data):
        reps = []
        for s in sorted(data):
            c = _FiniteSpeed.coefficients(cfg, p, data[s])
            reps.append(diagnostics.finite_speed_check(c, p.j if p.j is not None else p.K, N=cfg.N,
                                                       C_threshold=p.C))
        ratios = np.array([r.statistics["max_ratio"] for r in reps])
        rep = DiagnosticsReport("finite_speed", manifest={"N": cfg.N, "K": p.K, "seeds": sorted(data),
                                                          "per_replica": ratios.tolist()},
                                statistics={"max_ratio": float(ratios.max()),
                                            "median_ratio": float(np.median(ratios))},
                                thresholds={"C": p.C}, replicas=len(data))
        return [rep.require("finite_speed", "max_ratio", "<=", "C")]

    @staticmethod
    def figure(cfg, p, data):
        s = min(data)
        c = _FiniteSpeed.coefficients(cfg, p, data[s])
        r = (c.B.sum(axis=2) + c.W).max(axis=1)
        return [("max rate", t, v) for t, v in zip(c.times, r)]


class TrailingParams(Params):
    L: Optional[int] = None
    halfwidth: int = Field(10, ge=1)
    dt: Optional[float] = None
    stride: int = Field(10, ge=1)
    generator: Literal["dbm", "independent-ou"] = "dbm"
    ratio: float = 0.5
    fraction: float = 0.9


@register("persistent-trailing", TrailingParams, "a bulk particle trails its quantile")
class _PersistentTrailing:
    @staticmethod
    def simulate(cfg, p, seed):
        N = cfg.N
        L = p.L or N // 2
        dt = p.dt or 0.1 / N
        tw = _tw(cfg, (0.0, N ** -0.2))
        lam = matrix_flow.eigenvalues(matrix_flow.gaussian_ensemble(N, int(cfg.beta), seed))
        labels = np.arange(L - p.halfwidth, L + p.halfwidth + 1)
        if p.generator == "dbm":
            tr = dbm.run_dbm(lam, tw, dt=dt, beta=cfg.beta, seed=seed, stride=p.stride).select(labels)
            return {"trajectory": Frames.of(tr)}
        # independent OU particles with the DBM noise strength and confinement
        rng = np.random.default_rng(derive_seed(seed, 7))
        n = int(math.ceil((tw[1] - tw[0]) / dt - 1e-9))
        h = (tw[1] - tw[0]) / n
        x = lam[labels - 1].copy()
        sig = math.sqrt(2.0 / (cfg.beta * N) * h)
        out, ts = [x.copy()], [tw[0]]
        for k in range(1, n + 1):
            x = x - 0.5 * x * h + sig * rng.standard_normal(x.size)
            if k % p.stride == 0 or k == n:
                out.append(x.copy())
                ts.append(tw[0] + k * h)
        return {"trajectory": Frames(ts, np.array(out), labels, cfg.beta, h, seed)}

    @staticmethod
    def analyze(cfg, p, data):
        N = cfg.N
        L = p.L or N // 2
        trs = []
        for s in sorted(data):
            f = data[s]["trajectory"]
            full = np.full((f.times.size, N), np.nan)
            full[:, f.labels - 1] = f.values
            # pad unknown labels so label L keeps its index; only the matched window is read
            full = _fill(full)
            trs.append(Trajectory(f.times, full, np.arange(1, N + 1), f.beta, f.dt, int(f.seed), ordered=False))
        qp = _semicircle_qpath(N, np.arange(max(1, L - 3 * p.halfwidth), min(N, L + 3 * p.halfwidth) + 1),
                               trs[0].times[-1])
        rep = diagnostics.persistent_trailing_check(trs, qp, L, ratio_threshold=p.ratio, fraction=p.fraction,
                                                    match_halfwidth=p.halfwidth)
        rep.manifest["generator"] = p.generator
        return [rep]

    @staticmethod
    def figure(cfg, p, data):
        N = cfg.N
        L = p.L or N // 2
        g = measures.semicircle_quantiles(N)[L - 1]
        rows = []
        for s in sorted(data):
            f = data[s]["trajectory"]
            i = int(np.flatnonzero(f.labels == L)[0])
            rows += [(f"seed {s}", t, N * (x - g)) for t, x in zip(f.times, f.values[:, i])]
        return rows


def _fill(a):
    """Replace NaN columns by the nearest known column (keeps values finite)."""
    known = np.flatnonzero(~np.isnan(a[0]))
    idx = known[np.clip(np.searchsorted(known, np.arange(a.shape[1])), 0, known.size - 1)]
    return a[:, idx] if np.isnan(a).any() else a


def names():
    return sorted(REGISTRY)
