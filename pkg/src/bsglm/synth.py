"""Synthetic datasets with known ground truth.

Coefficient and AR fields are drawn from the intrinsic Laplacian prior
on a full rectangular block (perturbation PCG with zero data term and
zero start), the intercept i.i.d. normal, and the noise by the AR
recursion. The block is globally rescaled so the in-mask grand mean is
100, and a centered mask selects the working voxels. The returned truth
is expressed in the rescaled units the fitted model sees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from ._rng import stream
from .lattice import GmrfStructure, VoxelLattice, build_lattice, build_ugl
from .model import GlmDataset, ModelState
from .sampling import sample_prior

__all__ = ["SynthConfig", "SynthTruth", "make_design", "hrf_convolve", "canonical_hrf", "simulate"]


@dataclass(frozen=True)
class SynthConfig:
    block_dims: tuple[int, int, int] = (53, 63, 46)
    mask_dims: tuple[int, int, int] = (10, 10, 10)  # centered in the block
    t: int = 351
    n_task: int = 4
    p: int = 1
    tr: float = 2.0
    alpha_true: tuple[float, ...] = (1e-4, 5e-4, 2e-3, 1e-2)
    beta_true: float = 10.0
    noise_var: float = 100.0
    intercept_mean: float = 900.0
    intercept_sd: float = 130.0
    target_grand_mean: float = 100.0
    mode: str = "3d"
    seed: int = 0
    prior_delta: float = 1e-8

    def __post_init__(self):
        if len(self.alpha_true) != self.n_task:
            raise ValueError("alpha_true must have one value per task regressor")
        if any(m > b for m, b in zip(self.mask_dims, self.block_dims)):
            raise ValueError("mask must fit inside the block")

    @property
    def k(self) -> int:
        return self.n_task + 1


@dataclass(frozen=True)
class SynthTruth:
    """Ground truth in the units of the returned (rescaled) dataset."""

    state: ModelState
    scale: float
    alpha_true: np.ndarray          # configured values (pre-scaling units)
    alpha_true_scaled: np.ndarray   # alpha / scale^2, matches state.w
    beta_true: float
    lambda_true_scaled: float
    block_lattice: VoxelLattice
    block_structure: GmrfStructure
    w_block: np.ndarray             # (K, N_block) scaled field on the full block
    a_block: np.ndarray             # (P, N_block)
    mask_index: np.ndarray          # block voxel index of each dataset voxel


def canonical_hrf(tr: float, duration: float = 32.0) -> np.ndarray:
    """Double-gamma hemodynamic response (response delay 6 s, undershoot 16 s)."""
    t = np.arange(0.0, duration + 1e-9, tr)
    def gpdf(x, shape, scale):
        x = np.maximum(x, 1e-12)
        return np.exp(
            (shape - 1) * np.log(x) - x / scale - gammaln(shape) - shape * np.log(scale)
        )
    h = gpdf(t, 6.0, 1.0) - gpdf(t, 16.0, 1.0) / 6.0
    return h / h.sum()


def hrf_convolve(stimulus: np.ndarray, tr: float = 2.0) -> np.ndarray:
    """Convolve a stimulus train with the canonical response, same length."""
    stimulus = np.asarray(stimulus, dtype=float)
    return np.convolve(stimulus, canonical_hrf(tr))[: stimulus.shape[0]]


def make_design(t: int, n_task: int, seed: int = 0, tr: float = 2.0) -> np.ndarray:
    """Block-design task regressors convolved with the canonical response.

    Columns are mean-centered task regressors followed by the intercept
    (all ones) as the last column.
    """
    if t <= 10:
        raise ValueError("need more than 10 time points")
    cols = []
    for k in range(n_task):
        rng = stream(seed, "design-onsets", k)
        stim = np.zeros(t)
        pos = int(rng.integers(4, 11))
        while pos < t:
            on = int(rng.integers(4, 9))
            stim[pos : pos + on] = 1.0
            pos += on + int(rng.integers(4, 11))
        reg = hrf_convolve(stim, tr)
        cols.append(reg - reg.mean())
    cols.append(np.ones(t))
    return np.column_stack(cols)


def _stabilize_ar(
    a: np.ndarray, structure: GmrfStructure, beta: float, seed: int, lag: int
) -> np.ndarray:
    """Re-draw unstable AR voxels from their prior full conditionals.

    P=1 requires |a| < 1 per voxel; offending voxels are redrawn from
    the Laplacian conditional given their neighbors (truncated by
    rejection), which keeps the field coherent.
    """
    a = a.copy()
    deg = structure.d.diagonal()
    adj_t = structure.g_transpose()  # for neighbor sums via D: off-diagonals are -1
    d_full = structure.d.full
    rng = stream(seed, "synth-ar-stabilize", lag)
    for _ in range(200):
        bad = np.nonzero(np.abs(a) >= 1.0)[0]
        if bad.size == 0:
            return a
        # conditional mean = (sum of neighbor values) / degree
        neigh_sum = a * deg - (d_full @ a)
        for n in bad:
            if deg[n] <= 0:
                a[n] = 0.0
                continue
            mean = neigh_sum[n] / deg[n]
            sd = 1.0 / np.sqrt(beta * deg[n])
            for _ in range(1000):
                draw = mean + sd * rng.standard_normal()
                if abs(draw) < 1.0:
                    a[n] = draw
                    break
            else:
                a[n] = np.clip(mean, -0.99, 0.99)
    return np.clip(a, -0.999, 0.999)


def _companion_stable(a_cols: np.ndarray) -> np.ndarray:
    """Stability mask for AR(P) columns via companion-matrix spectral radius."""
    p, n = a_cols.shape
    ok = np.empty(n, dtype=bool)
    for i in range(n):
        comp = np.zeros((p, p))
        comp[0] = a_cols[:, i]
        if p > 1:
            comp[1:, :-1] = np.eye(p - 1)
        ok[i] = np.max(np.abs(np.linalg.eigvals(comp))) < 1.0
    return ok


def simulate(config: SynthConfig) -> tuple[GlmDataset, SynthTruth]:
    """Generate one dataset and its ground truth from the model."""
    nx, ny, nz = config.block_dims
    block_mask = np.ones(config.block_dims, dtype=bool)
    block = build_lattice(config.block_dims, block_mask, mode=config.mode)
    structure = build_ugl(block)
    n_block = block.n_voxels
    k, p, t = config.k, config.p, config.t

    x = make_design(config.t, config.n_task, seed=config.seed, tr=config.tr)

    w = np.zeros((k, n_block))
    for j in range(config.n_task):
        rng = stream(config.seed, "synth-w-prior", j)
        w[j] = sample_prior(
            structure, config.alpha_true[j], rng=rng, delta=config.prior_delta
        )
    w[-1] = config.intercept_mean + config.intercept_sd * stream(
        config.seed, "synth-intercept"
    ).standard_normal(n_block)

    a = np.zeros((p, n_block))
    for j in range(p):
        rng = stream(config.seed, "synth-a-prior", j)
        a[j] = sample_prior(structure, config.beta_true, rng=rng, delta=config.prior_delta)
        if p == 1:
            a[j] = _stabilize_ar(a[j], structure, config.beta_true, config.seed, j)
    if p > 1:
        stable = _companion_stable(a)
        if not np.all(stable):
            # shrink unstable voxels until the companion radius drops below one
            for i in np.nonzero(~stable)[0]:
                col = a[:, i]
                while not _companion_stable(col[:, None])[0]:
                    col *= 0.9
                a[:, i] = col

    # select masked voxels (centered) before building the time series
    offsets = [(b - m) // 2 for b, m in zip(config.block_dims, config.mask_dims)]
    mask = np.zeros(config.block_dims, dtype=bool)
    mask[
        offsets[0] : offsets[0] + config.mask_dims[0],
        offsets[1] : offsets[1] + config.mask_dims[1],
        offsets[2] : offsets[2] + config.mask_dims[2],
    ] = True
    lattice = build_lattice(config.block_dims, mask, mode=config.mode)
    coords = lattice.voxel_to_grid
    flat = coords[:, 0] + nx * (coords[:, 1] + ny * coords[:, 2])
    mask_index = block.grid_to_voxel[flat]
    n = lattice.n_voxels

    w_m = w[:, mask_index]
    a_m = a[:, mask_index]

    sigma = np.sqrt(config.noise_var)
    rng_noise = stream(config.seed, "synth-noise")
    burn = 200
    eps = sigma * rng_noise.standard_normal((burn + t, n))
    e = np.zeros((burn + t, n))
    for ti in range(burn + t):
        acc = eps[ti].copy()
        for lag in range(1, p + 1):
            if ti - lag >= 0:
                acc += a_m[lag - 1] * e[ti - lag]
        e[ti] = acc
    e = e[burn:]

    y = x @ w_m + e
    scale = config.target_grand_mean / float(y.mean())
    y = y * scale

    lam_true = 1.0 / config.noise_var / scale**2
    # task alphas transform like precisions of the scaled fields; the
    # intercept entry is nominal (its row is i.i.d., not Laplacian)
    alpha_scaled = np.asarray(config.alpha_true) / scale**2
    state = ModelState(
        w=w_m * scale,
        a=a_m,
        lam=np.full(n, lam_true),
        alpha=np.concatenate([alpha_scaled, [1.0 / (config.intercept_sd * scale) ** 2]]),
        beta=np.full(p, config.beta_true),
    )

    dataset = GlmDataset(y=y, x=x, p=p, lattice=lattice, grand_mean=config.target_grand_mean)
    truth = SynthTruth(
        state=state,
        scale=scale,
        alpha_true=np.asarray(config.alpha_true),
        alpha_true_scaled=alpha_scaled,
        beta_true=config.beta_true,
        lambda_true_scaled=lam_true,
        block_lattice=block,
        block_structure=structure,
        w_block=w * scale,
        a_block=a,
        mask_index=mask_index,
    )
    return dataset, truth
