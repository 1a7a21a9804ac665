"""Wigner-type matrices, the matrix Ornstein-Uhlenbeck flow, spectra and local-law residuals.

Normalisation: off-diagonal entries have E|h_ij|^2 = S_ij. For gaussian
entries the diagonal follows the GOE/GUE convention, variance (2/beta) S_ii,
which is what the OU flow produces (real diagonal Brownian motions of variance
2t for beta = 1 and t for beta = 2).
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SpecError
from .flow import FlowSolverConfig, default_flow_grid, flow_density, solve_mt
from .measures import Measure1D, quantiles
from .report import DiagnosticsReport

ENTRY_LAWS = ("gaussian", "bernoulli", "uniform")


@dataclass(frozen=True)
class WignerLikeSpec:
    N: int
    beta: int = 2
    S: np.ndarray = None
    A: np.ndarray = None
    entry_law: str = "gaussian"

    def __post_init__(self):
        if self.N < 1:
            raise SpecError("N must be positive")
        if self.beta not in (1, 2):
            raise SpecError("beta must be 1 (real symmetric) or 2 (complex hermitian)")
        if self.entry_law not in ENTRY_LAWS:
            raise SpecError(f"entry_law must be one of {ENTRY_LAWS}")
        S = np.full((self.N, self.N), 1.0 / self.N) if self.S is None else np.asarray(self.S, float)
        if S.shape != (self.N, self.N) or np.any(S < 0) or not np.array_equal(S, S.T):
            raise SpecError("S must be a symmetric nonnegative N x N matrix")
        A = np.zeros((self.N, self.N)) if self.A is None else np.asarray(self.A)
        if A.shape != (self.N, self.N):
            raise SpecError("A must be N x N")
        if self.beta == 1 and np.iscomplexobj(A) and np.any(A.imag != 0):
            raise SpecError("A must be real for beta = 1")
        if not np.allclose(A, A.conj().T, rtol=0, atol=1e-14):
            raise SpecError("A must be symmetric/hermitian")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "A", A)

    @property
    def row_sums(self):
        return self.S.sum(axis=1)

    @property
    def equal_row_sums(self):
        r = self.row_sums
        return bool(np.allclose(r, r[0], rtol=1e-12, atol=0))


def deformed_spec(N, beta=2, signs="alternating"):
    """W + A with A = diag(+1, -1, +1, ...)."""
    d = np.where(np.arange(N) % 2 == 0, 1.0, -1.0)
    return WignerLikeSpec(N, beta, A=np.diag(d))


def band_profile(N, width):
    """Periodic band variance profile with equal row sums 1."""
    i = np.arange(N)
    dist = np.abs(i[:, None] - i[None, :])
    dist = np.minimum(dist, N - dist)
    S = (dist <= width).astype(float)
    return S / S.sum(axis=1, keepdims=True)


def block_profile(N, sizes, levels):
    """Block-constant variance profile (generally unequal row sums)."""
    if sum(sizes) != N:
        raise SpecError("block sizes must add up to N")
    edges = np.cumsum([0] + list(sizes))
    S = np.empty((N, N))
    lv = np.asarray(levels, float)
    for a in range(len(sizes)):
        for b in range(len(sizes)):
            S[edges[a]:edges[a + 1], edges[b]:edges[b + 1]] = lv[a, b] / N
    return S


def _unit_entries(rng, law, shape):
    if law == "gaussian":
        return rng.standard_normal(shape)
    if law == "bernoulli":
        return rng.choice([-1.0, 1.0], size=shape)
    return rng.uniform(-math.sqrt(3), math.sqrt(3), size=shape)


def sample_matrix(spec, seed):
    """One draw with independent entries (up to symmetry), E|h_ij|^2 = S_ij, mean A."""
    rng = np.random.default_rng(seed)
    N = spec.N
    if spec.beta == 1:
        X = _unit_entries(rng, spec.entry_law, (N, N))
    else:
        X = (_unit_entries(rng, spec.entry_law, (N, N))
             + 1j * _unit_entries(rng, spec.entry_law, (N, N))) / math.sqrt(2)
    X = np.triu(X, 1)
    X = X + X.conj().T
    diag = _unit_entries(rng, spec.entry_law, N)
    if spec.entry_law == "gaussian":
        diag = diag * math.sqrt(2.0 / spec.beta)
    H = X * np.sqrt(spec.S)
    H[np.diag_indices(N)] = diag * np.sqrt(np.diag(spec.S))
    return H + spec.A


def gaussian_ensemble(N, beta, seed):
    return sample_matrix(WignerLikeSpec(N, beta), seed)


def _ou_noise(rng, N, beta, dt):
    """Increment of B / sqrt(N) over time dt with the OU variance convention."""
    if beta == 1:
        X = rng.standard_normal((N, N))
        d = rng.standard_normal(N) * math.sqrt(2.0)
    else:
        X = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / math.sqrt(2)
        d = rng.standard_normal(N)
    X = np.triu(X, 1)
    X = X + X.conj().T
    X[np.diag_indices(N)] = d
    return X * math.sqrt(dt / N)


def _beta_of(H):
    return 2 if np.iscomplexobj(H) else 1


def ou_step(H, dt, seed, beta=None):
    """h <- h (1 - dt/2) + N^{-1/2} dB. `seed` may be an int or a Generator."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return np.array(H, copy=True)
    beta = beta or _beta_of(H)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    N = H.shape[0]
    out = H * (1 - dt / 2) + _ou_noise(rng, N, beta, dt)
    if beta == 1:
        out = out.real
    return out


def ou_path(H0, t, n_steps, seed, beta=None):
    """Composition of n_steps ou_step calls to time t."""
    rng = np.random.default_rng(seed)
    H = np.array(H0, copy=True)
    for _ in range(n_steps):
        H = ou_step(H, t / n_steps, rng, beta)
    return H


def ou_closed_form(H0, t, seed, beta=None):
    """exp(-t/2) H0 + sqrt(1 - exp(-t)) U with U an independent GOE/GUE draw."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return np.array(H0, copy=True)
    beta = beta or _beta_of(H0)
    U = gaussian_ensemble(H0.shape[0], beta, seed)
    return math.exp(-t / 2) * H0 + math.sqrt(-math.expm1(-t)) * U


def eigenvalues(H, tol=1e-12):
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise SpecError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if np.max(np.abs(H - H.conj().T), initial=0.0) > tol * scale:
        raise SpecError("matrix is not symmetric/hermitian")
    return scipy.linalg.eigvalsh(H, check_finite=True)


def empirical_stieltjes(spectrum, z):
    lam = np.asarray(spectrum, float)
    z = np.asarray(z, dtype=complex)
    return (1.0 / (lam[None, :] - z.ravel()[:, None])).mean(axis=1).reshape(z.shape)


def local_law_residuals(spectra, rho0, t, E_star, Sigma, eta_grid, cfg=None, n_E=21,
                        c_res=3.0, fraction=0.9, quantile_grid=None):
    """Empirical vs limiting Stieltjes transform and window counting.

    Statistics per replica: max over E in [E*-Sigma, E*+Sigma] and eta of
    N eta |m_N - m_t|; and the maximal counting discrepancy over windows of
    length eta inside [E*-Sigma/2, E*+Sigma/2].
    """
    spectra = [np.sort(np.asarray(s, float)) for s in spectra]
    if len(spectra) < 20:
        raise ValueError("need at least 20 spectra")
    N = spectra[0].size
    eta_grid = np.asarray(eta_grid, float)
    if np.any(eta_grid < 1.0 / N - 1e-15) or np.any(eta_grid > 1):
        raise ValueError("eta_grid must lie in [1/N, 1]")
    cfg = cfg or FlowSolverConfig()
    Es = np.linspace(E_star - Sigma, E_star + Sigma, n_E)
    z = (Es[None, :] + 1j * eta_grid[:, None]).ravel()
    m_lim = np.asarray(solve_mt(rho0, t, z, cfg))
    scale = np.repeat(N * eta_grid, n_E)
    if t == 0:
        dens = rho0
    else:
        dens = flow_density(rho0, t, quantile_grid if quantile_grid is not None
                            else default_flow_grid(rho0, t, n=4001), cfg)
    gam = np.asarray(quantiles(dens, N, np.arange(1, N + 1)))
    res, cnt = [], []
    for lam in spectra:
        res.append(float(np.max(scale * np.abs(empirical_stieltjes(lam, z) - m_lim))))
        worst = 0
        for eta in eta_grid:
            starts = np.arange(E_star - Sigma / 2, E_star + Sigma / 2 - eta + 1e-15, eta)
            for e1 in starts:
                e2 = e1 + eta
                a = np.searchsorted(lam, e2, "right") - np.searchsorted(lam, e1, "left")
                b = np.searchsorted(gam, e2, "right") - np.searchsorted(gam, e1, "left")
                worst = max(worst, abs(int(a) - int(b)))
        cnt.append(worst)
    res, cnt = np.array(res), np.array(cnt)
    rep = DiagnosticsReport(
        "local_law",
        manifest={"N": N, "t": t, "E_star": E_star, "Sigma": Sigma,
                  "eta_grid": eta_grid.tolist(), "replicas": len(spectra)},
        statistics={"max_scaled_residual": float(res.max()),
                    "frac_residual_ok": float(np.mean(res <= c_res)),
                    "max_count_discrepancy": float(cnt.max()),
                    "frac_count_ok": float(np.mean(cnt <= 3 + math.log(N)))},
        thresholds={"fraction": fraction},
        replicas=len(spectra),
    )
    rep.require("residual", "frac_residual_ok", ">=", "fraction")
    rep.require("counting", "frac_count_ok", ">=", "fraction")
    rep.manifest["per_replica_residual"] = res.tolist()
    rep.manifest["per_replica_count"] = cnt.tolist()
    return rep


def spectrum_measure(spectrum):
    return Measure1D.atomic(spectrum, np.full(len(spectrum), 1.0 / len(spectrum)))
