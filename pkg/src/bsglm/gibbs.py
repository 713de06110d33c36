"""Gibbs sampler over (W, A, lambda, alpha, beta) with conjugate updates.

One sweep updates the coefficient field from its Gaussian conditional,
the AR field likewise, then the three precision blocks from their gamma
conditionals. Randomness comes from counter-based streams keyed by
(seed, block, iteration), so a chain is reproducible bit for bit and
tolerance changes perturb the noise path only through the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .model import (
    GlmDataset,
    GmrfPriors,
    ModelState,
    PrecomputedStats,
    PriorHyper,
    a_data_blocks,
    a_rhs,
    field_quadform,
    precompute,
    residual_quadform,
    w_data_blocks,
    w_rhs,
)
from .operators import PrecisionOperator, assemble_precision
from .ppm import Contrast
from .sampling import (
    SamplerConfig,
    data_block_factors,
    draw_noise,
    sample_cholesky,
    sample_pcg,
    solve_mean,
)
from .sparse import chol_symbolic, fill_reducing_order, ic0

__all__ = [
    "GibbsConfig",
    "PosteriorChain",
    "GibbsSampler",
    "run_gibbs",
    "update_lambda_params",
    "update_alpha_params",
    "update_beta_params",
    "inefficiency_factor",
]


@dataclass(frozen=True)
class GibbsConfig:
    n_burn: int = 1000
    n_iter: int = 20_000
    thin: int = 5
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(delta=1e-8))
    contrasts: tuple[Contrast, ...] = ()
    store_full_w: bool = False
    full_w_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_burn < 0 or self.n_iter < 0 or self.thin < 1:
            raise ValueError("invalid chain lengths")


@dataclass
class PosteriorChain:
    """Thinned contrast draws plus full hyperparameter traces.

    Contrast projections c'W are stored per draw because posterior maps
    only need them; the full coefficient field is kept only on request
    (optionally disk-backed).
    """

    contrast_samples: dict[str, np.ndarray]   # name -> (n_stored, N)
    alpha_trace: np.ndarray                   # (n_burn + n_iter, K)
    beta_trace: np.ndarray                    # (n_burn + n_iter, P)
    lambda_summary: np.ndarray                # (n_burn + n_iter, 3): mean, min, max
    w_mean: np.ndarray                        # (K, N) over stored draws
    w_second_moment: np.ndarray               # (K, N)
    n_stored: int
    n_burn: int
    n_iter: int
    thin: int
    seed: int
    contrasts: tuple[Contrast, ...]
    lattice: object
    final_state: ModelState
    full_w: np.ndarray | None = None          # (n_stored, K, N)

    @property
    def w_std(self) -> np.ndarray:
        var = np.maximum(self.w_second_moment - self.w_mean**2, 0.0)
        return np.sqrt(var)


def update_lambda_params(
    stats: PrecomputedStats, state: ModelState, hyper: PriorHyper
) -> tuple[np.ndarray, float]:
    """Gamma parameters (scale vector, shape) of the noise-precision conditional."""
    q = residual_quadform(stats, state.w, state.a if stats.p else None)
    inv_scale = 0.5 * q + 1.0 / hyper.u1
    if np.any(inv_scale <= 0):
        raise FloatingPointError("non-positive lambda scale: inconsistent residual quadratic form")
    shape = 0.5 * (stats.t - stats.p) + hyper.u2
    return 1.0 / inv_scale, shape


def update_alpha_params(
    priors: GmrfPriors, state: ModelState, hyper: PriorHyper
) -> tuple[np.ndarray, float]:
    """Gamma parameters of the spatial-precision conditional for each regressor."""
    k, n = state.w.shape
    quad = np.array([field_quadform(priors.d_w, state.w[i]) for i in range(k)])
    if np.any(quad < -1e-9 * max(1.0, float(np.abs(quad).max()))):
        raise FloatingPointError("negative Laplacian quadratic form; D_w must be PSD")
    inv_scale = 0.5 * np.maximum(quad, 0.0) + 1.0 / hyper.q1
    return 1.0 / inv_scale, 0.5 * n + hyper.q2


def update_beta_params(
    priors: GmrfPriors, state: ModelState, hyper: PriorHyper
) -> tuple[np.ndarray, float]:
    """Gamma parameters of the AR spatial-precision conditional."""
    p, n = state.a.shape
    quad = np.array([field_quadform(priors.d_a, state.a[i]) for i in range(p)])
    if np.any(quad < -1e-9 * max(1.0, float(np.abs(quad).max()))):
        raise FloatingPointError("negative Laplacian quadratic form; D_a must be PSD")
    inv_scale = 0.5 * np.maximum(quad, 0.0) + 1.0 / hyper.r1
    return 1.0 / inv_scale, 0.5 * n + hyper.r2


class GibbsSampler:
    """Workspace caching the fixed-pattern structures across sweeps."""

    def __init__(
        self,
        dataset: GlmDataset,
        priors: GmrfPriors,
        hyper: PriorHyper,
        cfg: GibbsConfig,
        stats: PrecomputedStats | None = None,
    ):
        self.dataset = dataset
        self.priors = priors
        self.hyper = hyper
        self.cfg = cfg
        self.stats = precompute(dataset) if stats is None else stats
        self.k = dataset.k
        self.n = dataset.n
        self.p = dataset.p
        self._w_perm = None
        self._w_symbolic = None
        self._a_perm = None
        self._a_symbolic = None

    # -- field updates

    def _sample_field(self, blocks, rhs, structure, alpha_vec, rows, which, it, x_start):
        cfg = self.cfg.sampler
        dim = rows * self.n
        method = cfg.resolve(dim)
        btilde = assemble_precision(None, None, alpha_vec, structure.d, blocks=blocks)
        if method == "cholesky":
            symbolic = self._w_symbolic if which == "w" else self._a_symbolic
            if symbolic is None:
                symbolic = chol_symbolic(btilde)
                if which == "w":
                    self._w_symbolic = symbolic
                else:
                    self._a_symbolic = symbolic
            rng = stream(self.cfg.seed, f"gibbs-{which}-chol", it)
            draw, _ = sample_cholesky(btilde, rhs, rng=rng, symbolic=symbolic)
            return draw
        perm = self._w_perm if which == "w" else self._a_perm
        if perm is None:
            perm = fill_reducing_order(btilde)
            if which == "w":
                self._w_perm = perm
            else:
                self._a_perm = perm
        op = PrecisionOperator(xtx=None, lam=None, alpha=alpha_vec, d_w=structure.d, blocks=blocks)
        noise = draw_noise(
            (self.cfg.seed, f"gibbs-{which}-noise", it), rows, structure.n_pairs, self.n
        )
        res = sample_pcg(
            op,
            rhs,
            structure,
            noise,
            x_start=x_start,
            delta=cfg.delta,
            l_data=data_block_factors(blocks),
            btilde=btilde,
            perm=perm,
            max_iter=cfg.max_iter,
        )
        return res.w_r

    def update_w(self, state: ModelState, it: int) -> np.ndarray:
        blocks = w_data_blocks(self.stats, state.lam, state.a if self.p else None)
        rhs = w_rhs(self.stats, state.lam, state.a if self.p else None)
        draw = self._sample_field(
            blocks, rhs, self.priors.d_w, state.alpha, self.k, "w", it,
            x_start=state.w.ravel(),
        )
        return draw.reshape(self.k, self.n)

    def update_a(self, state: ModelState, it: int) -> np.ndarray:
        if self.p == 0:
            return state.a
        blocks = a_data_blocks(self.stats, state.lam, state.w)
        rhs = a_rhs(self.stats, state.lam, state.w)
        draw = self._sample_field(
            blocks, rhs, self.priors.d_a, state.beta, self.p, "a", it,
            x_start=state.a.ravel(),
        )
        return draw.reshape(self.p, self.n)

    def update_lambda(self, state: ModelState, it: int) -> np.ndarray:
        scale, shape = update_lambda_params(self.stats, state, self.hyper)
        rng = stream(self.cfg.seed, "gibbs-lambda", it)
        return rng.gamma(shape=shape, scale=scale)

    def update_alpha(self, state: ModelState, it: int) -> np.ndarray:
        scale, shape = update_alpha_params(self.priors, state, self.hyper)
        rng = stream(self.cfg.seed, "gibbs-alpha", it)
        return rng.gamma(shape=shape, scale=scale)

    def update_beta(self, state: ModelState, it: int) -> np.ndarray:
        if self.p == 0:
            return state.beta
        scale, shape = update_beta_params(self.priors, state, self.hyper)
        rng = stream(self.cfg.seed, "gibbs-beta", it)
        return rng.gamma(shape=shape, scale=scale)

    # -- driver

    def initial_state(self) -> ModelState:
        hyper = self.hyper
        lam = np.full(self.n, hyper.lambda_mean)
        alpha = np.full(self.k, hyper.alpha_mean)
        beta = np.full(self.p, hyper.beta_mean)
        blocks = w_data_blocks(self.stats, lam, None)
        rhs = w_rhs(self.stats, lam, None)
        op = PrecisionOperator(xtx=None, lam=None, alpha=alpha, d_w=self.priors.d_w.d, blocks=blocks)
        w0 = solve_mean(op, rhs, config=self.cfg.sampler).reshape(self.k, self.n)
        return ModelState(w=w0, a=np.zeros((self.p, self.n)), lam=lam, alpha=alpha, beta=beta)

    def run(self) -> PosteriorChain:
        cfg = self.cfg
        total = cfg.n_burn + cfg.n_iter
        n_stored = cfg.n_iter // cfg.thin
        k, n, p = self.k, self.n, self.p

        contrast_samples = {
            c.name: np.zeros((n_stored, n)) for c in cfg.contrasts
        }
        alpha_trace = np.zeros((total, k))
        beta_trace = np.zeros((total, p))
        lambda_summary = np.zeros((total, 3))
        w_sum = np.zeros((k, n))
        w2_sum = np.zeros((k, n))
        full_w = None
        if cfg.store_full_w and n_stored:
            if cfg.full_w_path is not None:
                full_w = np.lib.format.open_memmap(
                    cfg.full_w_path, mode="w+", dtype=np.float64, shape=(n_stored, k, n)
                )
            else:
                full_w = np.zeros((n_stored, k, n))

        state = self.initial_state()
        stored = 0
        for it in range(total):
            try:
                state.w = self.update_w(state, it)
                state.a = self.update_a(state, it)
                state.lam = self.update_lambda(state, it)
                state.alpha = self.update_alpha(state, it)
                state.beta = self.update_beta(state, it)
            except Exception as exc:
                raise RuntimeError(f"Gibbs update failed at iteration {it}") from exc
            alpha_trace[it] = state.alpha
            beta_trace[it] = state.beta
            lambda_summary[it] = (state.lam.mean(), state.lam.min(), state.lam.max())
            j = it - cfg.n_burn + 1
            if j >= 1 and j % cfg.thin == 0 and stored < n_stored:
                for c in cfg.contrasts:
                    contrast_samples[c.name][stored] = c.vector @ state.w
                w_sum += state.w
                w2_sum += state.w**2
                if full_w is not None:
                    full_w[stored] = state.w
                stored += 1

        denom = max(stored, 1)
        return PosteriorChain(
            contrast_samples=contrast_samples,
            alpha_trace=alpha_trace,
            beta_trace=beta_trace,
            lambda_summary=lambda_summary,
            w_mean=w_sum / denom,
            w_second_moment=w2_sum / denom,
            n_stored=stored,
            n_burn=cfg.n_burn,
            n_iter=cfg.n_iter,
            thin=cfg.thin,
            seed=cfg.seed,
            contrasts=cfg.contrasts,
            lattice=self.dataset.lattice,
            final_state=state,
            full_w=full_w,
        )


def run_gibbs(
    dataset: GlmDataset,
    priors: GmrfPriors,
    hyper: PriorHyper,
    cfg: GibbsConfig,
) -> PosteriorChain:
    """Run the full Gibbs sweep W -> A -> lambda -> alpha -> beta."""
    return GibbsSampler(dataset, priors, hyper, cfg).run()


def inefficiency_factor(trace: np.ndarray, max_lag: int | None = None) -> float:
    """1 + 2 * sum of autocorrelations, truncated at the first non-positive lag.

    Estimates how many chain draws one effectively independent draw
    costs. Requires at least 100 points and a non-constant trace.
    """
    trace = np.asarray(trace, dtype=float)
    n = trace.shape[0]
    if n < 100:
        raise ValueError("trace too short for an autocorrelation estimate (need >= 100)")
    centered = trace - trace.mean()
    var = float(centered @ centered) / n
    if var == 0.0:
        raise ValueError("zero variance: constant trace")
    if max_lag is None:
        max_lag = n - 1
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1].real / n
    rho = acov / acov[0]
    total = 0.0
    for j in range(1, max_lag + 1):
        if rho[j] <= 0.0:
            break
        total += rho[j]
    return float(1.0 + 2.0 * total)
