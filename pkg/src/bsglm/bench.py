"""Benchmark harness: sampling scalings, accuracy ordering, convergence.

Timings are wall-clock means over repeated draws, reported together with
PCG iteration counts so that machine-independent assertions can be made
on counts and slope signs rather than absolute seconds. The per-draw
costs mirror what a Gibbs sweep pays when hyperparameters change every
iteration: the exact route refactors numerically on a cached symbolic
analysis, the iterative route refreshes its incomplete factor and
re-solves.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ._rng import stream
from .gibbs import GibbsConfig, run_gibbs
from .lattice import build_ugl
from .model import GlmDataset, GmrfPriors, PriorHyper, precompute, w_data_blocks, w_rhs
from .operators import PrecisionOperator, assemble_precision
from .sampling import SamplerConfig, data_block_factors, draw_noise, sample_cholesky, sample_pcg
from .sparse import chol_symbolic, fill_reducing_order, ic0, pcg
from .svb import SvbConfig, run_svb
from .synth import SynthConfig, simulate

__all__ = [
    "MASK_FOR_SIZE",
    "bench_sampling",
    "bench_accuracy",
    "convergence_report",
    "ConvergenceReport",
]

MASK_FOR_SIZE = {1000: (10, 10, 10), 10_000: (25, 20, 20), 100_000: (50, 50, 40)}


def _bench_instance(n_voxels: int, k: int, t: int, seed: int):
    """Posterior-precision instance from the synthetic model at truth values."""
    mask = MASK_FOR_SIZE.get(n_voxels)
    if mask is None:
        raise ValueError(f"no mask layout for N={n_voxels}; known: {sorted(MASK_FOR_SIZE)}")
    cfg = SynthConfig(
        block_dims=mask, mask_dims=mask, t=t, n_task=k - 1,
        alpha_true=tuple(np.geomspace(1e-4, 1e-2, k - 1)), seed=seed,
    )
    dataset, truth = simulate(cfg)
    stats = precompute(dataset)
    lam = truth.state.lam
    alpha = np.concatenate([truth.alpha_true_scaled, [truth.state.alpha[-1]]])
    blocks = w_data_blocks(stats, lam, truth.state.a)
    rhs = w_rhs(stats, lam, truth.state.a)
    return dataset, build_ugl(dataset.lattice), alpha, blocks, rhs


def bench_sampling(
    sizes=(1000, 10_000),
    k: int = 5,
    deltas=(1e-6, 1e-8),
    n_draws: int = 100,
    t: int = 351,
    seed: int = 0,
    include_cholesky: bool = True,
) -> list[dict]:
    """Mean per-draw seconds for exact and PCG sampling across sizes.

    Returns one row per (method, size, delta) with timing, PCG iteration
    counts, and a status that reports out-of-memory instead of raising
    (the exact route is expected to exhaust memory first as sizes grow).
    """
    rows: list[dict] = []
    for n_voxels in sizes:
        dataset, structure, alpha, blocks, rhs = _bench_instance(n_voxels, k, t, seed)
        btilde = assemble_precision(None, None, alpha, structure.d, blocks=blocks)
        dim = k * n_voxels

        if include_cholesky:
            try:
                t0 = time.perf_counter()
                symbolic = chol_symbolic(btilde)
                setup = time.perf_counter() - t0
                rng = stream(seed, "bench-chol", n_voxels)
                sample_cholesky(btilde, rhs, rng=rng, symbolic=symbolic)  # untimed warmup
                t0 = time.perf_counter()
                for _ in range(n_draws):
                    sample_cholesky(btilde, rhs, rng=rng, symbolic=symbolic)
                per_draw = (time.perf_counter() - t0) / n_draws
                rows.append(
                    dict(method="cholesky", n_voxels=n_voxels, dim=dim, delta=0.0,
                         n_draws=n_draws, mean_seconds=per_draw, setup_seconds=setup,
                         mean_pcg_iters=0.0, factor_nnz=int(symbolic.indices.shape[0]),
                         status="ok")
                )
            except MemoryError:
                rows.append(
                    dict(method="cholesky", n_voxels=n_voxels, dim=dim, delta=0.0,
                         n_draws=0, mean_seconds=float("nan"), setup_seconds=float("nan"),
                         mean_pcg_iters=float("nan"), factor_nnz=0, status="oom")
                )

        op = PrecisionOperator(xtx=None, lam=None, alpha=alpha, d_w=structure.d, blocks=blocks)
        l_data = data_block_factors(blocks)
        t0 = time.perf_counter()
        perm = fill_reducing_order(btilde)
        setup = time.perf_counter() - t0
        warm = draw_noise((seed, "bench-pcg-warm", n_voxels), k, structure.n_pairs, n_voxels)
        sample_pcg(op, rhs, structure, warm, delta=min(deltas), l_data=l_data,
                   btilde=btilde, perm=perm)  # untimed warmup
        for delta in deltas:
            iters = np.zeros(n_draws)
            t0 = time.perf_counter()
            for j in range(n_draws):
                noise = draw_noise((seed, "bench-pcg", n_voxels, j), k, structure.n_pairs, n_voxels)
                res = sample_pcg(
                    op, rhs, structure, noise, delta=delta,
                    l_data=l_data, btilde=btilde, perm=perm,
                )
                iters[j] = res.iters
            per_draw = (time.perf_counter() - t0) / n_draws
            rows.append(
                dict(method="pcg", n_voxels=n_voxels, dim=dim, delta=delta,
                     n_draws=n_draws, mean_seconds=per_draw, setup_seconds=setup,
                     mean_pcg_iters=float(iters.mean()), factor_nnz=int(btilde.nnz_lower),
                     status="ok")
            )
    return rows


def loglog_slope(rows: list[dict], method: str, delta: float | None = None) -> float:
    """Slope of log(mean_seconds) against log(n_voxels) for one method."""
    pts = [
        (r["n_voxels"], r["mean_seconds"])
        for r in rows
        if r["method"] == method
        and r["status"] == "ok"
        and (delta is None or r["delta"] == delta)
    ]
    if len(pts) < 2:
        raise ValueError(f"need at least two sizes for {method}")
    pts.sort()
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def pcg_iteration_comparison(btilde, rhs, delta: float = 1e-8) -> tuple[int, int]:
    """(preconditioned, unpreconditioned) PCG iteration counts for one solve."""
    perm = fill_reducing_order(btilde)
    a_p = btilde.permuted(perm)
    b_p = perm.permute_vec(rhs)
    with_ic = pcg(a_p, b_p, m=ic0(a_p), delta=delta, max_iter=100_000)
    without = pcg(a_p, b_p, m=None, delta=delta, max_iter=100_000)
    return with_ic.iters, without.iters


def bench_accuracy(
    dataset: GlmDataset,
    priors: GmrfPriors,
    hyper: PriorHyper,
    reference_cfg: GibbsConfig,
    runs: list[dict],
    n_task: int = 4,
) -> dict:
    """RMSE of posterior-mean task coefficients against a tight reference.

    ``runs`` entries look like {"method": "mcmc"|"svb", "delta": float,
    "ns": int | None, "seed": int | None}. RMSE is computed over the
    first ``n_task`` regressor rows. The reference chain's Monte Carlo
    standard-error floor (RMS of per-entry posterior-mean standard
    errors) is reported for calibration.
    """
    reference = run_gibbs(dataset, priors, hyper, reference_cfg)
    ref_mean = reference.w_mean[:n_task]
    se = reference.w_std[:n_task] / np.sqrt(max(reference.n_stored, 1))
    floor = float(np.sqrt(np.mean(se**2)))

    rows = []
    for spec in runs:
        method = spec["method"]
        delta = spec.get("delta", 1e-8)
        seed = spec.get("seed", reference_cfg.seed)
        if method == "mcmc":
            cfg = GibbsConfig(
                n_burn=reference_cfg.n_burn, n_iter=reference_cfg.n_iter,
                thin=reference_cfg.thin, seed=seed,
                contrasts=reference_cfg.contrasts,
                sampler=SamplerConfig(
                    method=reference_cfg.sampler.method, delta=delta,
                    dimension_threshold=reference_cfg.sampler.dimension_threshold,
                ),
            )
            mean = run_gibbs(dataset, priors, hyper, cfg).w_mean[:n_task]
        elif method == "svb":
            cfg = SvbConfig(
                max_iter=spec.get("max_iter", 100), n_s_main=spec.get("ns", 100),
                delta=delta, seed=seed, conv_tol=spec.get("conv_tol", 1e-3),
            )
            post = run_svb(dataset, priors, hyper, cfg)
            mean = post.marginal_stats().mean[:n_task]
        else:
            raise ValueError(f"unknown method {method!r}")
        rmse = float(np.sqrt(np.mean((mean - ref_mean) ** 2)))
        rows.append(dict(method=method, delta=delta, ns=spec.get("ns"), rmse=rmse))
    return dict(rows=rows, mc_se_floor=floor, reference=reference)


@dataclass(frozen=True)
class ConvergenceReport:
    """Relative-error curves toward the final value, per parameter."""

    curves: np.ndarray          # (iters, K) relative errors
    first_within: np.ndarray    # (K,) 1-based first iteration with error < tol, 0 if never
    final: np.ndarray           # (K,)
    tol: float


def convergence_report(
    trace: np.ndarray, mode: str = "vb", tol: float = 0.01, final: np.ndarray | None = None
) -> ConvergenceReport:
    """Iterations-to-within-tol of the final value for each trace column.

    ``mode='vb'`` uses the iterate values directly with the last value
    as the long-run final; ``mode='mcmc'`` applies the same rule to the
    cumulative mean of the draws.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.ndim == 1:
        trace = trace[:, None]
    if mode == "mcmc":
        values = np.cumsum(trace, axis=0) / np.arange(1, trace.shape[0] + 1)[:, None]
    elif mode == "vb":
        values = trace
    else:
        raise ValueError("mode must be 'vb' or 'mcmc'")
    if final is None:
        final = values[-1]
    final = np.asarray(final, dtype=float)
    if np.any(final == 0.0):
        raise ValueError("final value is zero; relative error undefined")
    curves = np.abs(values / final[None, :] - 1.0)
    first = np.zeros(curves.shape[1], dtype=np.int64)
    for j in range(curves.shape[1]):
        hits = np.nonzero(curves[:, j] < tol)[0]
        first[j] = hits[0] + 1 if hits.size else 0
    return ConvergenceReport(curves=curves, first_within=first, final=final, tol=tol)
