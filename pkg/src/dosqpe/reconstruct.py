"""Sparse recovery of phases and integer degeneracies from a coarse QPE
histogram.

Pipeline: a dictionary of squared Dirichlet kernels on a candidate grid
finer than the bins, a nonnegative l1-regularized least-squares fit solved
by accelerated proximal gradient (optionally refined by reweighted l1
rounds and a greedy support polish), then thresholding, single-linkage
clustering on the circle and rounding of cluster masses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Union

import numpy as np
from scipy.optimize import nnls

from .errors import InvalidArgumentError, ResourceLimitError
from .hamlib import Spectrum, wrap_phase
from .simengine import PhaseHistogram

MAX_DICTIONARY_ENTRIES = 1 << 24
LAMBDA_SWEEP = tuple(np.logspace(-4, -1, 7))


def _fold(theta) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    return t - np.floor(t + 0.5)


def kernel_value(theta, M: int):
    """``|sin(pi M t) / (M sin(pi t))|^2`` with ``t`` folded into ``[-1/2, 1/2)``."""
    t = _fold(theta)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.ones(t.shape)
    r = M * t
    nearest = np.round(r)
    on_zero = np.abs(r - nearest) < 1e-12
    out[on_zero & (nearest != 0)] = 0.0
    free = ~on_zero
    out[free] = (np.sin(np.pi * r[free]) / (M * np.sin(np.pi * t[free]))) ** 2
    return float(out[0]) if scalar else out


@dataclass(frozen=True, eq=False)
class KernelDictionary:
    M: int
    bin_phases: np.ndarray
    grid_phases: np.ndarray
    matrix: np.ndarray

    @property
    def grid_factor(self) -> int:
        return len(self.grid_phases) // len(self.bin_phases)


def build_dictionary(m: int, grid_factor: int,
                     max_entries: int = MAX_DICTIONARY_ENTRIES) -> KernelDictionary:
    """``A[i, j] = K(i/N - j/G)`` with ``N = 2**m`` bins and ``G = grid_factor*N``."""
    if m < 1 or grid_factor < 1:
        raise InvalidArgumentError("m and grid_factor must be positive")
    N = 2 ** m
    G = grid_factor * N
    if N * G > max_entries:
        raise ResourceLimitError(f"dictionary of {N}x{G} exceeds {max_entries} entries")
    bins = np.arange(N) / N
    grid = np.arange(G) / G
    A = kernel_value(bins[:, None] - grid[None, :], N)
    return KernelDictionary(N, bins, grid, A)


@dataclass(frozen=True)
class ReconstructionConfig:
    """Solver and post-processing settings.

    ``lam=None`` selects the l1 strength by a logarithmic sweep;
    ``cluster_eps=None`` uses one bin width ``1/2**m``.  Set
    ``reweight_rounds=0`` and ``polish=False`` for the plain nonnegative
    LASSO fit.
    """

    total: int
    grid_factor: int = 4
    lam: Optional[float] = None
    tau: float = 0.1
    cluster_eps: Optional[float] = None
    tol: float = 1e-10
    kkt_tol: float = 1e-7
    max_iter: int = 50_000
    constraint_mode: Literal["soft_total", "hard_simplex"] = "soft_total"
    objective: Literal["l2", "l1"] = "l2"
    huber_width: float = 1e-4
    reweight_rounds: int = 6
    reweight_eps: float = 1e-2
    polish: bool = True

    def __post_init__(self):
        if self.total < 1:
            raise InvalidArgumentError("total must be positive")
        if self.grid_factor < 1:
            raise InvalidArgumentError("grid_factor must be positive")
        if self.lam is not None and self.lam < 0:
            raise InvalidArgumentError("lambda must be nonnegative")
        if not 0 <= self.tau < self.total:
            raise InvalidArgumentError("tau must lie in [0, total)")
        if self.cluster_eps is not None and self.cluster_eps <= 0:
            raise InvalidArgumentError("cluster_eps must be positive")
        if self.constraint_mode not in ("soft_total", "hard_simplex"):
            raise InvalidArgumentError(f"unknown constraint mode {self.constraint_mode!r}")
        if self.objective not in ("l2", "l1"):
            raise InvalidArgumentError(f"unknown objective {self.objective!r}")
        if self.reweight_rounds < 0 or self.reweight_eps <= 0:
            raise InvalidArgumentError("reweight_rounds must be >= 0 and reweight_eps > 0")

    def eps_for(self, M: int) -> float:
        return self.cluster_eps if self.cluster_eps is not None else 1.0 / M


@dataclass(frozen=True, eq=False)
class SolveResult:
    weights: np.ndarray
    lam: float
    objective: float
    iterations: int
    residual_norm: float
    kkt_residual: float
    converged: bool
    history: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass(frozen=True, eq=False)
class SpectralEstimate:
    phases: np.ndarray
    degeneracies: np.ndarray
    raw_weights: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    diagnostics: dict = field(default_factory=dict)

    @property
    def entries(self) -> list[tuple[float, int]]:
        return [(float(t), int(d)) for t, d in zip(self.phases, self.degeneracies)]

    @property
    def total(self) -> int:
        return int(np.sum(self.degeneracies))

    @property
    def empty(self) -> bool:
        return len(self.phases) == 0

    def __len__(self):
        return len(self.phases)

    def to_csv(self) -> str:
        lines = ["theta_hat,d_hat"]
        lines += [f"{float(t)!r},{int(d)}" for t, d in zip(self.phases, self.degeneracies)]
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# solver


def histogram_targets(p: Union[PhaseHistogram, np.ndarray], total: int) -> np.ndarray:
    """Shot-normalized frequencies scaled to ``total`` expected multiplicities."""
    values = p.values if isinstance(p, PhaseHistogram) else np.asarray(p, dtype=float)
    values = values.astype(float)
    s = values.sum()
    if s <= 0:
        raise InvalidArgumentError("histogram has no mass")
    return total * values / s


def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = total}`` (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def _power_iteration(Q: np.ndarray, iters: int = 500, rtol: float = 1e-12) -> float:
    x = np.ones(Q.shape[0]) / math.sqrt(Q.shape[0])
    est = 0.0
    for _ in range(iters):
        y = Q @ x
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - est) <= rtol * new:
            return new
        est = new
    return est


class _Problem:
    """Smooth part, its gradient and the prox of the nonsmooth part.

    ``penalty`` holds one l1 weight per grid point (``lam`` times the
    reweighting factors).
    """

    def __init__(self, A: np.ndarray, P: np.ndarray, cfg: ReconstructionConfig,
                 penalty: np.ndarray, sigma2: Optional[float] = None):
        self.A, self.P, self.cfg, self.penalty = A, P, cfg, penalty
        self.hard = cfg.constraint_mode == "hard_simplex"
        if sigma2 is None:
            sigma2 = _power_iteration(A.T @ A)
        if cfg.objective == "l2":
            self.Q = A.T @ A
            self.b = A.T @ P
            self.L = 2.0 * sigma2 * 1.05
        else:
            self.L = sigma2 / cfg.huber_width * 1.05

    def smooth(self, w: np.ndarray) -> float:
        if self.cfg.objective == "l2":
            r = self.A @ w - self.P
            return float(r @ r)
        r = np.abs(self.A @ w - self.P)
        mu = self.cfg.huber_width
        return float(np.sum(np.where(r <= mu, r * r / (2 * mu), r - mu / 2)))

    def grad(self, w: np.ndarray) -> np.ndarray:
        if self.cfg.objective == "l2":
            return 2.0 * (self.Q @ w - self.b)
        r = self.A @ w - self.P
        return self.A.T @ np.clip(r / self.cfg.huber_width, -1.0, 1.0)

    def value(self, w: np.ndarray) -> float:
        return self.smooth(w) + float(self.penalty @ w)

    def reported(self, w: np.ndarray) -> float:
        r = self.A @ w - self.P
        fit = float(r @ r) if self.cfg.objective == "l2" else float(np.sum(np.abs(r)))
        return fit + float(self.penalty @ w)

    def prox(self, v: np.ndarray) -> np.ndarray:
        if self.hard:
            return project_simplex(v, self.cfg.total)
        return np.maximum(v - self.penalty / self.L, 0.0)

    def gradient_map(self, w: np.ndarray) -> np.ndarray:
        return self.L * (w - self.prox(w - self.grad(w) / self.L))


def _apg(prob: _Problem, w0: np.ndarray, scale: float) -> SolveResult:
    """FISTA with monotone restarts.

    Stops once the scaled gradient-map norm drops below ``kkt_tol`` or the
    relative objective change stays below ``tol`` for 50 iterations.
    """
    cfg = prob.cfg
    w = prob.prox(w0)
    F = prob.value(w)
    y, t = w.copy(), 1.0
    history = [F]
    kkt = float(np.max(np.abs(prob.gradient_map(w)))) / scale
    it = 0
    flat = 0
    while it < cfg.max_iter and kkt > cfg.kkt_tol and flat < 50:
        it += 1
        w_new = prob.prox(y - prob.grad(y) / prob.L)
        F_new = prob.value(w_new)
        if F_new > F:
            # momentum overshoot: restart from a plain proximal step at w
            t = 1.0
            w_new = prob.prox(w - prob.grad(w) / prob.L)
            F_new = prob.value(w_new)
            if F_new > F:
                w_new, F_new = w, F
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        change = abs(F - F_new) / max(abs(F), 1e-300)
        w, F, t = w_new, F_new, t_new
        history.append(F)
        flat = flat + 1 if change <= cfg.tol else 0
        if it % 10 == 0:
            kkt = float(np.max(np.abs(prob.gradient_map(w)))) / scale
    kkt = float(np.max(np.abs(prob.gradient_map(w)))) / scale
    residual = float(np.linalg.norm(prob.A @ w - prob.P))
    converged = kkt <= cfg.kkt_tol or flat >= 50
    return SolveResult(w, float(np.min(prob.penalty)), prob.reported(w), it, residual, kkt,
                       converged, np.array(history))


def _kkt_scale(A: np.ndarray, P: np.ndarray) -> float:
    return max(2.0 * float(np.max(np.abs(A.T @ P))), 1e-300)


def _solve_fixed(A: np.ndarray, P: np.ndarray, cfg: ReconstructionConfig, lam: float,
                 sigma2: Optional[float] = None) -> SolveResult:
    G = A.shape[1]
    prob = _Problem(A, P, cfg, np.full(G, lam), sigma2)
    return _apg(prob, np.full(G, cfg.total / G), _kkt_scale(A, P))


def reweight(A: np.ndarray, P: np.ndarray, cfg: ReconstructionConfig, start: SolveResult,
             sigma2: Optional[float] = None) -> SolveResult:
    """Iteratively reweighted l1: penalty ``lam / (w_j + eps)``, normalized so
    the smallest weight stays ``lam``, warm-started from the previous round.

    Every column of the dictionary has the same sum, so the plain l1 term
    barely distinguishes spread-out fits from sparse ones; reweighting does.
    """
    if cfg.constraint_mode == "hard_simplex" or start.lam <= 0:
        return start
    fit = start
    scale = _kkt_scale(A, P)
    for _ in range(cfg.reweight_rounds):
        omega = 1.0 / (fit.weights + cfg.reweight_eps)
        prob = _Problem(A, P, cfg, start.lam * omega / omega.min(), sigma2)
        nxt = _apg(prob, fit.weights, scale)
        nxt = SolveResult(nxt.weights, start.lam, nxt.objective, fit.iterations + nxt.iterations,
                          nxt.residual_norm, nxt.kkt_residual, nxt.converged, nxt.history)
        fit = nxt
    return fit


def select_lambda(A: np.ndarray, P: np.ndarray, cfg: ReconstructionConfig,
                  sigma2: Optional[float] = None) -> SolveResult:
    """Sweep ``lam = c * max|A^T P|`` over ``c`` in ``1e-4 .. 1e-1`` and keep the
    sparsest fit whose residual is within 10% of the best one."""
    base = float(np.max(np.abs(A.T @ P)))
    fits = [_solve_fixed(A, P, cfg, c * base, sigma2) for c in LAMBDA_SWEEP]
    best = min(f.residual_norm for f in fits)
    ok = [f for f in fits if f.residual_norm <= 1.1 * best + 1e-12]
    return min(ok, key=lambda f: (int(np.sum(f.weights > cfg.tau)), f.residual_norm))


def solve(A: KernelDictionary, p: Union[PhaseHistogram, np.ndarray],
          cfg: ReconstructionConfig) -> SolveResult:
    """Approximately minimize ``||A w - P||^2 + lam*||w||_1`` over ``w >= 0``,
    followed by ``cfg.reweight_rounds`` reweighted rounds.

    ``P`` is the histogram rescaled to ``cfg.total``.  In ``hard_simplex``
    mode ``sum(w) = total`` is enforced and the l1 term is constant.
    """
    P = histogram_targets(p, cfg.total)
    if P.shape != (A.matrix.shape[0],):
        raise InvalidArgumentError("histogram size does not match the dictionary")
    sigma2 = _power_iteration(A.matrix.T @ A.matrix)
    if cfg.lam is None:
        fit = select_lambda(A.matrix, P, cfg, sigma2)
    else:
        fit = _solve_fixed(A.matrix, P, cfg, cfg.lam, sigma2)
    return reweight(A.matrix, P, cfg, fit, sigma2)


def _nnls(A: np.ndarray, P: np.ndarray, support: list[int]) -> tuple[np.ndarray, float]:
    if not support:
        return np.zeros(0), float(np.linalg.norm(P))
    x, r = nnls(A[:, support], P)
    return x, float(r)


def polish(A: KernelDictionary, p: Union[PhaseHistogram, np.ndarray], w: np.ndarray,
           cfg: ReconstructionConfig) -> np.ndarray:
    """Collapse the fit to one grid atom per cluster and improve it locally.

    Amplitudes are refit by nonnegative least squares on the support; moves
    are shifting an atom by up to one bin, merging or jointly shifting two
    atoms closer than two bins, and adding the grid point that best explains the residual (kept
    only if its amplitude exceeds ``tau``).  The best residual-decreasing move
    is applied until none is left.
    """
    P = histogram_targets(p, cfg.total)
    mat = A.matrix
    G = mat.shape[1]
    gf = A.grid_factor
    grid = A.grid_phases
    keep = np.nonzero(w > 0.5 * cfg.tau)[0]
    order = keep[np.argsort(grid[keep], kind="stable")]
    support = set()
    for members in _circular_clusters(grid[order], cfg.eps_for(A.M)):
        idx = order[members]
        z = np.sum(w[idx] * np.exp(2j * np.pi * grid[idx]))
        support.add(int(np.round(np.angle(z) / (2 * np.pi) * G)) % G)
    sup = sorted(support)
    x, r = _nnls(mat, P, sup)

    while True:
        candidates = []
        for i in range(len(sup)):
            for step in range(-gf, gf + 1):
                moved = (sup[i] + step) % G
                if step and moved not in sup:
                    candidates.append(sorted(sup[:i] + [moved] + sup[i + 1:]))
        if len(sup) > 1:
            for i in range(len(sup)):
                a, b = sup[i], sup[(i + 1) % len(sup)]
                gap = (b - a) % G
                if gap <= 2 * gf:
                    rest = [q for q in sup if q not in (a, b)]
                    candidates += [sorted(set(rest + [(a + k) % G])) for k in range(gap + 1)]
                    # close pairs can be stuck where only a joint shift helps
                    for step in range(-gf, gf + 1):
                        pair = {(a + step) % G, (b + step) % G}
                        if step and not pair & set(rest):
                            candidates.append(sorted(rest + list(pair)))
        resid = P - (mat[:, sup] @ x if sup else 0.0)
        score = mat.T @ resid
        score[sup] = -np.inf
        if np.max(score) > 0:
            candidates.append(sorted(sup + [int(np.argmax(score))]))

        best_r, best = r, None
        for cand in candidates:
            xc, rc = _nnls(mat, P, cand)
            if len(cand) > len(sup) and np.min(xc) <= cfg.tau:
                continue
            if rc < best_r - 1e-12 * max(1.0, r):
                best_r, best = rc, cand
        if best is None:
            break
        x, r = _nnls(mat, P, best)
        sup = [q for q, v in zip(best, x) if v > 0]
        x, r = _nnls(mat, P, sup)

    out = np.zeros(G)
    out[sup] = x
    return out


# --------------------------------------------------------------------------
# post-processing


def _circular_clusters(phases: np.ndarray, eps: float) -> list[np.ndarray]:
    """Single-linkage clusters of sorted phases on the unit circle."""
    n = len(phases)
    if n == 0:
        return []
    limit = eps * (1 + 1e-9)
    gaps = np.diff(phases)
    breaks = list(np.nonzero(gaps > limit)[0] + 1)
    groups = np.split(np.arange(n), breaks)
    wrap_gap = phases[0] + 1.0 - phases[-1]
    if len(groups) > 1 and wrap_gap <= limit:
        groups[0] = np.concatenate([groups[-1], groups[0]])
        groups.pop()
    return groups


def threshold_cluster_round(w: np.ndarray, grid: np.ndarray, cfg: ReconstructionConfig,
                            M: Optional[int] = None) -> SpectralEstimate:
    """Keep ``w_j > tau``, merge neighbours within ``eps`` and round cluster masses."""
    w = np.asarray(w, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if np.any(w < 0):
        raise InvalidArgumentError("weights must be nonnegative")
    if M is None:
        M = len(grid) // cfg.grid_factor
    eps = cfg.eps_for(M)
    keep = np.nonzero(w > cfg.tau)[0]
    order = keep[np.argsort(grid[keep], kind="stable")]
    phases, masses = [], []
    for members in _circular_clusters(grid[order], eps):
        idx = order[members]
        th = grid[idx].copy()
        # unwrap clusters that straddle zero before averaging
        if th.max() - th.min() > 0.5:
            th[th > 0.5] -= 1.0
        mass = float(w[idx].sum())
        d_hat = int(math.floor(mass + 0.5))
        if d_hat == 0:
            continue
        phases.append(float(wrap_phase(np.sum(w[idx] * th) / mass)))
        masses.append(d_hat)
    if phases:
        order = np.argsort(phases)
        ph = np.array(phases)[order]
        dh = np.array(masses, dtype=np.int64)[order]
    else:
        ph, dh = np.zeros(0), np.zeros(0, dtype=np.int64)
    return SpectralEstimate(ph, dh, w.copy(), {"empty": len(ph) == 0, "clusters": len(ph)})


def reconstruct(p: Union[PhaseHistogram, np.ndarray], cfg: ReconstructionConfig,
                dictionary: Optional[KernelDictionary] = None) -> SpectralEstimate:
    """Dictionary, solve, threshold, cluster and round in one call."""
    values = p.values if isinstance(p, PhaseHistogram) else np.asarray(p)
    m = int(round(math.log2(len(values))))
    A = dictionary if dictionary is not None else build_dictionary(m, cfg.grid_factor)
    fit = solve(A, p, cfg)
    weights = fit.weights
    residual = fit.residual_norm
    polished = cfg.polish and cfg.constraint_mode == "soft_total"
    if polished:
        weights = polish(A, p, weights, cfg)
        residual = float(np.linalg.norm(A.matrix @ weights - histogram_targets(p, cfg.total)))
    est = threshold_cluster_round(weights, A.grid_phases, cfg, A.M)
    est.diagnostics.update(objective=fit.objective, iterations=fit.iterations,
                           residual_norm=residual, polished=polished,
                           reweight_rounds=cfg.reweight_rounds, kkt_residual=fit.kkt_residual,
                           converged=fit.converged, lam=fit.lam,
                           grid_factor=A.grid_factor, tau=cfg.tau, cluster_eps=cfg.eps_for(A.M),
                           constraint_mode=cfg.constraint_mode, objective_kind=cfg.objective)
    return est


# --------------------------------------------------------------------------
# scoring

Measure = Union[Spectrum, SpectralEstimate, PhaseHistogram, tuple]


def as_measure(x: Measure) -> tuple[np.ndarray, np.ndarray]:
    """``(phases, masses)`` of a spectrum, estimate, histogram or pair of arrays."""
    if isinstance(x, Spectrum):
        return np.asarray(x.values, float), np.asarray(x.degeneracies, float)
    if isinstance(x, SpectralEstimate):
        return np.asarray(x.phases, float), np.asarray(x.degeneracies, float)
    if isinstance(x, PhaseHistogram):
        return x.phases, x.values.astype(float)
    phases, masses = x
    return np.asarray(phases, float), np.asarray(masses, float)


def rounded_histogram(p: PhaseHistogram, total: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin phases with integer multiplicities ``round(total * frequency)``."""
    d = np.floor(histogram_targets(p, total) + 0.5)
    keep = d > 0
    return p.phases[keep], d[keep]


def wasserstein1(a: Measure, b: Measure, circular: bool = False) -> float:
    """1-Wasserstein distance between two unit-normalized discrete measures.

    The linear version integrates the gap between the two quantile functions;
    ``circular=True`` measures arc length on the unit circle instead.
    """
    xa, ma = as_measure(a)
    xb, mb = as_measure(b)
    if len(xa) == 0 or len(xb) == 0 or ma.sum() <= 0 or mb.sum() <= 0:
        raise InvalidArgumentError("W1 needs two nonempty measures")
    if circular:
        return _circular_w1(wrap_phase(xa), ma / ma.sum(), wrap_phase(xb), mb / mb.sum())
    ia, ib = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, qa = xa[ia], np.cumsum(ma[ia]) / ma.sum()
    xb, qb = xb[ib], np.cumsum(mb[ib]) / mb.sum()
    levels = np.union1d(qa, qb)
    levels = levels[levels < 1.0 - 1e-15]
    u = np.concatenate([[0.0], levels, [1.0]])
    mid = 0.5 * (u[:-1] + u[1:])
    fa = xa[np.minimum(np.searchsorted(qa, mid), len(xa) - 1)]
    fb = xb[np.minimum(np.searchsorted(qb, mid), len(xb) - 1)]
    return float(np.sum(np.diff(u) * np.abs(fa - fb)))


def _circular_w1(xa, pa, xb, pb) -> float:
    pts = np.concatenate([xa, xb])
    mass = np.concatenate([pa, -pb])
    order = np.argsort(pts, kind="stable")
    pts, mass = pts[order], mass[order]
    cdf = np.cumsum(mass)[:-1]
    widths = np.diff(pts)
    segs = np.concatenate([cdf, [0.0]])
    lens = np.concatenate([widths, [pts[0] + 1.0 - pts[-1]]])
    # min over shifts c of sum |F - c| * len: c is a weighted median of F
    o = np.argsort(segs)
    cum = np.cumsum(lens[o])
    c = segs[o][np.searchsorted(cum, 0.5 * cum[-1])]
    return float(np.sum(np.abs(segs - c) * lens))
