"""Sampling from the Gaussian field conditional N(B^-1 b, B^-1).

Two routes: an exact Cholesky-based sampler (factor, solve for the mean,
perturb with a backward solve of white noise), and a perturbation
sampler that builds a randomized right-hand side whose covariance equals
the precision B and hands the solve to PCG. The perturbation route only
needs matrix-vector products and an incomplete factor, which is what
makes large lattices tractable; it also accepts injected noise and warm
starts, which the fixed-noise variational algorithm relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._rng import stream
from .operators import PrecisionOperator, assemble_precision, rows_to_voxel_major, voxel_major_to_rows
from .sparse import (
    CholeskySymbolic,
    Permutation,
    SparseSym,
    TriangularFactor,
    cholesky,
    chol_solve,
    fill_reducing_order,
    ic0,
    pcg,
    tri_solve,
)

__all__ = [
    "NoiseVectors",
    "SamplerConfig",
    "PcgSampleResult",
    "sample_cholesky",
    "sample_pcg",
    "solve_mean",
    "sample_prior",
    "draw_noise",
    "data_block_factors",
]

DIMENSION_THRESHOLD_DEFAULT = 10_000


@dataclass(frozen=True)
class NoiseVectors:
    """White noise driving one perturbation draw.

    z1 has one block of length n_pairs per field row (prior side), z2
    has one block of length n_voxels per field row (data side).
    """

    z1: np.ndarray
    z2: np.ndarray

    def check(self, rows: int, n_pairs: int, n_voxels: int) -> None:
        if self.z1.shape != (rows * n_pairs,):
            raise ValueError(f"z1 must have length {rows * n_pairs}, got {self.z1.shape}")
        if self.z2.shape != (rows * n_voxels,):
            raise ValueError(f"z2 must have length {rows * n_voxels}, got {self.z2.shape}")


def draw_noise(rng_or_key, rows: int, n_pairs: int, n_voxels: int) -> NoiseVectors:
    """Draw NoiseVectors from a Generator or a (seed, purpose, *indices) key."""
    rng = rng_or_key if isinstance(rng_or_key, np.random.Generator) else stream(*rng_or_key)
    return NoiseVectors(
        z1=rng.standard_normal(rows * n_pairs),
        z2=rng.standard_normal(rows * n_voxels),
    )


@dataclass(frozen=True)
class SamplerConfig:
    """Method selection and PCG settings for field draws."""

    method: str = "auto"  # "cholesky" | "pcg" | "auto"
    delta: float = 1e-8
    dimension_threshold: int = DIMENSION_THRESHOLD_DEFAULT
    max_iter: int | None = None

    def resolve(self, dim: int) -> str:
        if self.method != "auto":
            return self.method
        return "cholesky" if dim <= self.dimension_threshold else "pcg"


def sample_cholesky(
    btilde: SparseSym,
    b_w: np.ndarray,
    rng: np.random.Generator | None = None,
    z: np.ndarray | None = None,
    perm: Permutation | None = None,
    symbolic: CholeskySymbolic | None = None,
    factor: TriangularFactor | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact draw and mean from N(B^-1 b_w, B^-1) via sparse Cholesky.

    Returns (w_r, mu_w) in the original ordering. ``z`` injects the
    standard-normal vector (tests); ``factor`` reuses a factorization
    when the precision has not changed between draws.
    """
    if factor is None:
        factor = cholesky(btilde, perm=perm, symbolic=symbolic)
    p = factor.perm
    b_p = p.permute_vec(np.asarray(b_w, dtype=float))
    mu_p = tri_solve(factor, tri_solve(factor, b_p, "forward"), "backward")
    if z is None:
        if rng is None:
            raise ValueError("either rng or z must be given")
        z = rng.standard_normal(btilde.n)
    v = tri_solve(factor, np.asarray(z, dtype=float), "backward")
    return p.unpermute_vec(mu_p + v), p.unpermute_vec(mu_p)


def data_block_factors(blocks: np.ndarray) -> np.ndarray:
    """Per-voxel Cholesky factors of the K x K data blocks.

    Blocks are Gram matrices of the (AR-filtered) design scaled by the
    noise precision; a non-positive-definite block means the filtered
    design lost column rank at that voxel.
    """
    try:
        return np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError:
        for n in range(blocks.shape[0]):
            try:
                np.linalg.cholesky(blocks[n])
            except np.linalg.LinAlgError:
                raise np.linalg.LinAlgError(
                    f"data block of voxel {n} is not positive definite"
                ) from None
        raise


@dataclass(frozen=True)
class PcgSampleResult:
    w_r: np.ndarray
    iters: int
    relres: float
    rhs: np.ndarray


def perturbation_rhs(
    b_w: np.ndarray,
    g: sp.csr_matrix,
    g_t: sp.csr_matrix,
    alpha: np.ndarray,
    l_data: np.ndarray,
    noise: NoiseVectors,
) -> np.ndarray:
    """Randomized right-hand side with E[b] = b_w and Cov[b] = B.

    b = blkdiag_k(sqrt(alpha_k) G)' z1 + H' L_data H z2 + b_w, with
    L_data the per-voxel factors of the data blocks.
    """
    rows = alpha.shape[0]
    n_pairs, n_vox = g.shape
    noise.check(rows, n_pairs, n_vox)
    z1 = noise.z1.reshape(rows, n_pairs)
    prior_part = (np.sqrt(alpha)[:, None] * (g_t @ z1.T).T).ravel()
    z2_vox = rows_to_voxel_major(noise.z2, rows, n_vox).reshape(n_vox, rows)
    data_vox = np.einsum("nij,nj->ni", l_data, z2_vox)
    data_part = voxel_major_to_rows(data_vox.ravel(), rows, n_vox)
    return prior_part + data_part + b_w


def sample_pcg(
    op: PrecisionOperator,
    b_w: np.ndarray,
    structure,
    noise: NoiseVectors,
    x_start: np.ndarray | None = None,
    delta: float = 1e-8,
    l_data: np.ndarray | None = None,
    btilde: SparseSym | None = None,
    perm: Permutation | None = None,
    precond: TriangularFactor | None = None,
    max_iter: int | None = None,
) -> PcgSampleResult:
    """Perturbation draw from N(B^-1 b_w, B^-1) solved by PCG.

    ``structure`` supplies the incidence G (its rows scaled by sqrt of
    any pair weights). The assembled matrix, ordering, and IC(0)
    preconditioner can be passed in for reuse; otherwise they are built
    here, matching the one-shot algorithm.
    """
    if l_data is None:
        l_data = data_block_factors(op.data_blocks())
    b = perturbation_rhs(
        np.asarray(b_w, dtype=float), structure.g, structure.g_transpose(), op.alpha, l_data, noise
    )
    if btilde is None:
        btilde = assemble_precision(op.xtx, op.lam, op.alpha, op.d_w, blocks=op.blocks)
    if perm is None:
        perm = fill_reducing_order(btilde)
    b_p = perm.permute_vec(b)
    a_p = btilde.permuted(perm)
    if precond is None:
        precond = ic0(a_p)
    x0 = None if x_start is None else perm.permute_vec(np.asarray(x_start, dtype=float))
    res = pcg(a_p, b_p, m=precond, x0=x0, delta=delta, max_iter=max_iter)
    return PcgSampleResult(
        w_r=perm.unpermute_vec(res.x), iters=res.iters, relres=res.relres, rhs=b
    )


def solve_mean(
    op_or_btilde,
    b_w: np.ndarray,
    delta: float = 1e-8,
    method: str = "auto",
    config: SamplerConfig | None = None,
    x_start: np.ndarray | None = None,
) -> np.ndarray:
    """Posterior mean mu = B^-1 b_w by Cholesky or PCG."""
    if config is None:
        config = SamplerConfig(method=method, delta=delta)
    b_w = np.asarray(b_w, dtype=float)
    if isinstance(op_or_btilde, PrecisionOperator):
        op = op_or_btilde
        how = config.resolve(op.n)
        if how == "pcg":
            res = pcg(op, b_w, m=None, x0=x_start, delta=config.delta, max_iter=config.max_iter)
            return res.x
        btilde = assemble_precision(op.xtx, op.lam, op.alpha, op.d_w, blocks=op.blocks)
    else:
        btilde = op_or_btilde
        how = config.resolve(btilde.n)
    if how == "cholesky":
        return chol_solve(cholesky(btilde), b_w)
    perm = fill_reducing_order(btilde)
    a_p = btilde.permuted(perm)
    res = pcg(
        a_p,
        perm.permute_vec(b_w),
        m=ic0(a_p),
        x0=None if x_start is None else perm.permute_vec(x_start),
        delta=config.delta,
        max_iter=config.max_iter,
    )
    return perm.unpermute_vec(res.x)


def sample_prior(
    structure,
    alpha_k: float,
    noise_z1: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    delta: float = 1e-8,
    max_iter: int | None = None,
) -> np.ndarray:
    """Draw one field row from the intrinsic Laplacian prior.

    Solves alpha D_w w = sqrt(alpha) G' z1 by PCG from zero. The prior
    is improper (D_w is singular), but the right-hand side lies in the
    range of D_w, so PCG converges to a valid sample whose mean over
    draws is zero.
    """
    n_pairs = structure.g.shape[0]
    if noise_z1 is None:
        if rng is None:
            raise ValueError("either rng or noise_z1 must be given")
        noise_z1 = rng.standard_normal(n_pairs)
    if not np.any(noise_z1):
        return np.zeros(structure.d.n)
    rhs = np.sqrt(alpha_k) * (structure.g_transpose() @ noise_z1)
    a = SparseSym(structure.d.n, structure.d.lower * alpha_k)
    diag = a.diagonal()
    if max_iter is None:
        max_iter = min(100_000, max(1000, structure.d.n))
    res = pcg(a, rhs, m=np.where(diag > 0, diag, 1.0), delta=delta, max_iter=max_iter)
    return res.x
