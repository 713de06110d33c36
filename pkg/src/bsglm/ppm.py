"""Posterior probability maps from chain draws or variational samples.

The marginal map gives, per voxel, the posterior probability that a
contrast of coefficients exceeds the activity threshold. Chains use the
empirical exceedance fraction; the variational posterior uses the
Gaussian tail with sample moments, since its q(W) is exactly Gaussian
and small sample counts would make the empirical fraction needlessly
noisy. Joint exceedance over voxel sets and a greedy excursion-set
approximation support multiplicity-aware maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Contrast",
    "PpmMap",
    "marginal_ppm_mcmc",
    "marginal_ppm_svb",
    "joint_ppm",
    "excursion_set_greedy",
    "threshold_map",
    "contrast_draws",
]


@dataclass(frozen=True)
class Contrast:
    """Contrast weights c, threshold gamma (absolute signal units), name.

    When gamma was given as a percent of the grand mean signal, the
    percent and the grand mean used for conversion are recorded.
    """

    vector: np.ndarray
    gamma: float
    name: str
    gamma_percent: float | None = None
    grand_mean: float | None = None

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float)
        object.__setattr__(self, "vector", v)
        if not np.any(v):
            raise ValueError("contrast vector must be nonzero")
        if not np.isfinite(self.gamma):
            raise ValueError("gamma must be finite")


@dataclass(frozen=True)
class PpmMap:
    """Per-voxel exceedance probabilities with provenance."""

    prob: np.ndarray
    method: str
    n_draws: int
    contrast: Contrast
    lattice: object = None

    def __post_init__(self):
        p = np.asarray(self.prob, dtype=float)
        object.__setattr__(self, "prob", p)
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")


def contrast_draws(chain, contrast: Contrast) -> np.ndarray:
    """Stored draws of c'W for a contrast, (n_draws, N)."""
    draws = chain.contrast_samples.get(contrast.name)
    if draws is None:
        if getattr(chain, "full_w", None) is not None:
            return np.einsum("k,jkn->jn", contrast.vector, chain.full_w)
        raise KeyError(f"chain holds no draws for contrast {contrast.name!r}")
    return draws


def marginal_ppm_mcmc(chain, contrast: Contrast) -> PpmMap:
    """Fraction of draws with c'W > gamma, per voxel."""
    draws = contrast_draws(chain, contrast)
    if draws.shape[0] == 0:
        raise ValueError("chain holds zero draws")
    prob = np.mean(draws > contrast.gamma, axis=0)
    return PpmMap(
        prob=prob, method="mcmc", n_draws=draws.shape[0], contrast=contrast,
        lattice=getattr(chain, "lattice", None),
    )


def marginal_ppm_svb(svb_posterior, contrast: Contrast) -> PpmMap:
    """Gaussian tail probability from variational sample moments.

    Voxels with zero contrast variance degenerate to an indicator of
    the mean strictly exceeding gamma.
    """
    stats = svb_posterior.marginal_stats()
    c = contrast.vector
    mean = c @ stats.mean
    var = np.einsum("i,nij,j->n", c, stats.cov, c)
    prob = np.empty_like(mean)
    degenerate = var <= 0.0
    sd = np.sqrt(np.where(degenerate, 1.0, var))
    prob = ndtr((mean - contrast.gamma) / sd)
    prob[degenerate] = (mean[degenerate] > contrast.gamma).astype(float)
    return PpmMap(
        prob=prob, method="svb", n_draws=stats.n_samples, contrast=contrast,
        lattice=getattr(svb_posterior, "lattice", None),
    )


def joint_ppm(chain, contrast: Contrast, voxels: np.ndarray) -> float:
    """Probability that ALL voxels in the set exceed gamma simultaneously."""
    voxels = np.asarray(voxels, dtype=np.int64)
    if voxels.size == 0:
        raise ValueError("voxel set must be nonempty")
    draws = contrast_draws(chain, contrast)
    if draws.shape[0] == 0:
        raise ValueError("chain holds zero draws")
    exceed = draws[:, voxels] > contrast.gamma
    return float(np.mean(np.all(exceed, axis=1)))


def excursion_set_greedy(
    chain,
    contrast: Contrast,
    level: float,
    candidates: np.ndarray | None = None,
) -> np.ndarray:
    """Greedy approximation of the largest joint-exceedance voxel set.

    Voxels are ranked by descending marginal probability (index breaks
    ties) and added while the joint probability stays at or above the
    level; the scan stops at the first drop. ``candidates`` restricts
    the domain, e.g. to one slice.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    draws = contrast_draws(chain, contrast)
    if candidates is None:
        candidates = np.arange(draws.shape[1])
    else:
        candidates = np.asarray(candidates, dtype=np.int64)
    exceed = draws[:, candidates] > contrast.gamma
    marg = exceed.mean(axis=0)
    order = np.lexsort((candidates, -marg))
    joint = np.ones(draws.shape[0], dtype=bool)
    selected: list[int] = []
    for idx in order:
        trial = joint & exceed[:, idx]
        if float(trial.mean()) < level:
            break
        joint = trial
        selected.append(int(candidates[idx]))
    return np.asarray(sorted(selected), dtype=np.int64)


def threshold_map(ppm: PpmMap, cutoff: float = 0.9) -> np.ndarray:
    """Binary activation map: probability strictly greater than the cutoff."""
    if not 0.0 < cutoff < 1.0:
        raise ValueError("cutoff must lie in (0, 1)")
    return ppm.prob > cutoff
