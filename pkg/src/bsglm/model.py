"""Generative model: data, design, AR(P) noise, priors, and likelihoods.

The AR-adjusted likelihood conditions on the first P time points. All
sums over the time dimension are isolated into precomputed tensors so
that likelihood evaluations and the Gibbs/VB update quantities cost
O(N K^2 P^2) instead of O(N T K). ``loglik_direct`` keeps the raw
per-timepoint form as the reference oracle for the precomputed path.

Gamma convention throughout: Ga(a, b) has scale a and shape b, so the
mean is a*b. The posterior shape parameters (T-P)/2 + u2 and N/2 + q2
land in the second slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import GmrfStructure, VoxelLattice

__all__ = [
    "GlmDataset",
    "PrecomputedStats",
    "ModelState",
    "PriorHyper",
    "GmrfPriors",
    "precompute",
    "loglik_fast",
    "loglik_direct",
    "log_joint_unnorm",
    "w_rhs",
    "w_data_blocks",
    "a_rhs",
    "a_data_blocks",
    "residual_quadform",
    "field_quadform",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GlmDataset:
    """Time series Y (T x N), design X (T x K), AR order P, and the lattice."""

    y: np.ndarray
    x: np.ndarray
    p: int
    lattice: VoxelLattice
    grand_mean: float | None = None  # recorded after any global rescaling

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        t, n = y.shape
        if x.shape[0] != t:
            raise ValueError("Y and X must have the same number of time points")
        if n != self.lattice.n_voxels:
            raise ValueError("Y columns must match the lattice voxel count")
        if self.p < 0:
            raise ValueError("AR order must be nonnegative")
        if t <= x.shape[1] + self.p:
            raise ValueError("need T > K + P time points")
        if not np.all(np.isfinite(y)):
            raise ValueError("Y must be finite")
        if np.any(np.all(x == 0.0, axis=0)):
            raise ValueError("design has an all-zero column")

    @property
    def t(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def k(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class PrecomputedStats:
    """Time-collapsed data tensors (sums run over t = P+1..T).

    d[n, p, s] holds the p+1-lagged response of voxel n at modeled time
    s, and xtilde[p, s, :] the matching lagged design row.
    """

    t: int
    n: int
    k: int
    p: int
    yty: np.ndarray              # (N,)
    ytx: np.ndarray              # (N, K)
    xtx: np.ndarray              # (K, K)
    d: np.ndarray | None         # (N, P, T-P)
    xtilde: np.ndarray | None    # (P, T-P, K)
    b: np.ndarray | None         # (N, P, K)
    r: np.ndarray | None         # (K, K, P)
    dn: np.ndarray | None        # (N, P, K, P)
    s: np.ndarray | None         # (P, K, K, P)
    ytd: np.ndarray | None       # (N, P)
    dtd: np.ndarray | None       # (N, P, P)


@dataclass
class ModelState:
    """Current parameter values; precisions must stay positive."""

    w: np.ndarray       # (K, N)
    a: np.ndarray       # (P, N)
    lam: np.ndarray     # (N,)
    alpha: np.ndarray   # (K,)
    beta: np.ndarray    # (P,)

    def __post_init__(self):
        for name in ("lam", "alpha", "beta"):
            v = getattr(self, name)
            if v.size and (np.any(v <= 0) or not np.all(np.isfinite(v))):
                raise ValueError(f"{name} must be positive and finite")

    def copy(self) -> "ModelState":
        return ModelState(
            w=self.w.copy(), a=self.a.copy(), lam=self.lam.copy(),
            alpha=self.alpha.copy(), beta=self.beta.copy(),
        )


@dataclass(frozen=True)
class PriorHyper:
    """Gamma hyperpriors, Ga(scale, shape) with mean scale*shape."""

    q1: float = 10.0      # alpha scale
    q2: float = 0.1       # alpha shape
    u1: float = 10.0      # lambda scale
    u2: float = 0.1       # lambda shape
    r1: float = 10_000.0  # beta scale
    r2: float = 0.1       # beta shape

    def __post_init__(self):
        for name in ("q1", "q2", "u1", "u2", "r1", "r2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def alpha_mean(self) -> float:
        return self.q1 * self.q2

    @property
    def lambda_mean(self) -> float:
        return self.u1 * self.u2

    @property
    def beta_mean(self) -> float:
        return self.r1 * self.r2


@dataclass(frozen=True)
class GmrfPriors:
    """Spatial structures for the coefficient and AR fields.

    The AR field reuses the coefficient structure by default (both live
    on the same lattice).
    """

    d_w: GmrfStructure
    d_a: GmrfStructure | None = None

    def __post_init__(self):
        if self.d_a is None:
            object.__setattr__(self, "d_a", self.d_w)


def precompute(dataset: GlmDataset) -> PrecomputedStats:
    """Collapse the time dimension of (Y, X) into the update tensors."""
    y, x, p = dataset.y, dataset.x, dataset.p
    t, n = y.shape
    k = x.shape[1]
    ys = y[p:]
    xs = x[p:]
    yty = np.einsum("tn,tn->n", ys, ys)
    ytx = ys.T @ xs
    xtx = xs.T @ xs
    if p == 0:
        return PrecomputedStats(
            t=t, n=n, k=k, p=0, yty=yty, ytx=ytx, xtx=xtx,
            d=None, xtilde=None, b=None, r=None, dn=None, s=None, ytd=None, dtd=None,
        )
    d = np.empty((n, p, t - p))
    xtilde = np.empty((p, t - p, k))
    for lag in range(1, p + 1):
        d[:, lag - 1, :] = y[p - lag : t - lag].T
        xtilde[lag - 1] = x[p - lag : t - lag]
    b = np.einsum("tn,ptk->npk", ys, xtilde) + np.einsum("npt,tk->npk", d, xs)
    r = np.einsum("tk,ptl->klp", xs, xtilde)
    dn = np.einsum("npt,qtk->npkq", d, xtilde)
    s = np.einsum("ptk,qtl->pklq", xtilde, xtilde)
    ytd = np.einsum("tn,npt->np", ys, d)
    dtd = np.einsum("npt,nqt->npq", d, d)
    return PrecomputedStats(
        t=t, n=n, k=k, p=p, yty=yty, ytx=ytx, xtx=xtx,
        d=d, xtilde=xtilde, b=b, r=r, dn=dn, s=s, ytd=ytd, dtd=dtd,
    )


# ---------------------------------------------------------------------------
# update quantities shared by the Gibbs sweep and the variational updates


def w_data_blocks(stats: PrecomputedStats, lam: np.ndarray, a: np.ndarray | None) -> np.ndarray:
    """Per-voxel K x K data blocks of the coefficient-field precision."""
    if stats.p == 0 or a is None:
        return lam[:, None, None] * stats.xtx[None, :, :]
    ra = np.einsum("klp,pn->nkl", stats.r, a)
    asa = np.einsum("pn,pklq,qn->nkl", a, stats.s, a)
    return lam[:, None, None] * (stats.xtx[None] - ra - ra.transpose(0, 2, 1) + asa)


def w_rhs(stats: PrecomputedStats, lam: np.ndarray, a: np.ndarray | None) -> np.ndarray:
    """Linear term b_w of the coefficient-field conditional (row-stacked)."""
    if stats.p == 0 or a is None:
        rows = stats.ytx * lam[:, None]
    else:
        ab = np.einsum("pn,npk->nk", a, stats.b)
        ada = np.einsum("pn,npkq,qn->nk", a, stats.dn, a)
        rows = lam[:, None] * (stats.ytx - ab + ada)
    return rows.T.ravel()


def a_data_blocks(stats: PrecomputedStats, lam: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-voxel P x P data blocks of the AR-field precision."""
    dw = np.einsum("npkq,kn->npq", stats.dn, w)
    wsw = np.einsum("kn,pklq,ln->npq", w, stats.s, w)
    return lam[:, None, None] * (stats.dtd - dw - dw.transpose(0, 2, 1) + wsw)


def a_rhs(stats: PrecomputedStats, lam: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Linear term b_a of the AR-field conditional (row-stacked)."""
    wb = np.einsum("kn,npk->np", w, stats.b)
    wrw = np.einsum("kn,klp,ln->np", w, stats.r, w)
    rows = lam[:, None] * (stats.ytd - wb + wrw)
    return rows.T.ravel()


def residual_quadform(stats: PrecomputedStats, w: np.ndarray, a: np.ndarray | None) -> np.ndarray:
    """Per-voxel AR-adjusted residual sum of squares from the precomputed tensors."""
    q = (
        stats.yty
        - 2.0 * np.einsum("nk,kn->n", stats.ytx, w)
        + np.einsum("kn,kl,ln->n", w, stats.xtx, w)
    )
    if stats.p == 0 or a is None:
        return q
    ra = np.einsum("klp,pn->nkl", stats.r, a)
    asa = np.einsum("pn,pklq,qn->nkl", a, stats.s, a)
    dw = np.einsum("npkq,kn->npq", stats.dn, w)
    q = q - 2.0 * np.einsum("np,pn->n", stats.ytd, a)
    q = q + np.einsum("pn,npq,qn->n", a, stats.dtd, a)
    q = q + 2.0 * np.einsum("pn,npk,kn->n", a, stats.b, w)
    q = q - 2.0 * np.einsum("kn,nkl,ln->n", w, ra, w)
    q = q - 2.0 * np.einsum("pn,npq,qn->n", a, dw, a)
    q = q + np.einsum("kn,nkl,ln->n", w, asa, w)
    return q


def field_quadform(structure: GmrfStructure, row: np.ndarray) -> float:
    """Quadratic form row' D row of one field row against the Laplacian."""
    return float(row @ structure.d.matvec(row))


# ---------------------------------------------------------------------------
# likelihoods and unnormalized joint posterior


def loglik_fast(state: ModelState, stats: PrecomputedStats) -> float:
    """Log-likelihood from the precomputed tensors (conditioning on t <= P)."""
    q = residual_quadform(stats, state.w, state.a if stats.p else None)
    tp = stats.t - stats.p
    return float(
        0.5 * tp * np.sum(np.log(state.lam))
        - 0.5 * np.sum(state.lam * q)
        - 0.5 * tp * stats.n * LOG_2PI
    )


def loglik_direct(state: ModelState, dataset: GlmDataset) -> float:
    """Reference log-likelihood from per-timepoint residuals."""
    y, x, p = dataset.y, dataset.x, dataset.p
    t = dataset.t
    e = y - x @ state.w
    if p:
        resid = e[p:].copy()
        for lag in range(1, p + 1):
            resid -= state.a[lag - 1][None, :] * e[p - lag : t - lag]
    else:
        resid = e
    tp = t - p
    rss = np.einsum("tn,tn->n", resid, resid)
    return float(
        0.5 * tp * np.sum(np.log(state.lam))
        - 0.5 * np.sum(state.lam * rss)
        - 0.5 * tp * dataset.n * LOG_2PI
    )


def log_joint_unnorm(
    state: ModelState,
    stats: PrecomputedStats,
    priors: GmrfPriors,
    hyper: PriorHyper,
) -> float:
    """Unnormalized log joint posterior; only differences are meaningful.

    The improper Laplacian prior contributes (N/2) log(alpha_k) per
    regressor because alpha factors out of its (pseudo)determinant.
    """
    n = stats.n
    total = loglik_fast(state, stats)
    for k in range(stats.k):
        quad = field_quadform(priors.d_w, state.w[k])
        total += 0.5 * n * np.log(state.alpha[k]) - 0.5 * state.alpha[k] * quad
    total += float(
        np.sum((hyper.q2 - 1.0) * np.log(state.alpha) - state.alpha / hyper.q1)
    )
    total += float(np.sum((hyper.u2 - 1.0) * np.log(state.lam) - state.lam / hyper.u1))
    if stats.p:
        for p_idx in range(stats.p):
            quad = field_quadform(priors.d_a, state.a[p_idx])
            total += 0.5 * n * np.log(state.beta[p_idx]) - 0.5 * state.beta[p_idx] * quad
        total += float(
            np.sum((hyper.r2 - 1.0) * np.log(state.beta) - state.beta / hyper.r1)
        )
    return float(total)
