"""Command-line front end.

Subcommands: simulate, fit-mcmc, fit-svb, ppm, bench-sampling,
bench-accuracy, diagnostics, rerun. Every run writes a manifest
(config echo, seed, versions, timings) into the output directory;
``rerun`` replays a manifest's command line, which reproduces all
deterministic outputs byte for byte.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import bench as bench_mod
from . import io as bio
from .gibbs import GibbsConfig, inefficiency_factor, run_gibbs
from .lattice import build_lattice
from .model import GlmDataset, GmrfPriors, PriorHyper
from .ppm import Contrast, PpmMap, excursion_set_greedy, marginal_ppm_mcmc, threshold_map
from .sampling import SamplerConfig
from .svb import SvbConfig, run_svb, svb_marginal_stats
from .synth import SynthConfig, simulate

__all__ = ["main", "parse_contrast"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def parse_contrast(spec: str, k: int, grand_mean: float | None) -> Contrast:
    """Parse ``name:w1,...,wK:gamma`` with an optional ``%`` gamma suffix."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise _UsageError(f"contrast must be name:w1,...,wK:gamma, got {spec!r}")
    name, weights_s, gamma_s = parts
    weights = np.array([float(v) for v in weights_s.split(",")])
    if weights.shape[0] != k:
        raise _UsageError(f"contrast {name!r} has {weights.shape[0]} weights, design has {k}")
    if gamma_s.endswith("%"):
        pct = float(gamma_s[:-1])
        if grand_mean is None:
            raise _UsageError("percent threshold needs the data grand mean (see --grand-mean)")
        return Contrast(
            vector=weights, gamma=pct / 100.0 * grand_mean, name=name,
            gamma_percent=pct, grand_mean=grand_mean,
        )
    return Contrast(vector=weights, gamma=float(gamma_s), name=name)


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _UsageError(f"config line is not key = value: {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config_defaults(args: argparse.Namespace, parser: argparse.ArgumentParser):
    if not getattr(args, "config", None):
        return
    overrides = _read_config_file(args.config)
    given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in sys.argv[1:] if a.startswith("--")}
    for key, val in overrides.items():
        if not hasattr(args, key):
            raise _UsageError(f"unknown config key {key!r}")
        if key in given:
            continue  # explicit flags win
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, val.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, key, int(val))
        elif isinstance(current, float):
            setattr(args, key, float(val))
        else:
            setattr(args, key, val)


def _ints(csv_text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in csv_text.split(","))


def _floats(csv_text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in csv_text.split(","))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(args, out: Path, config: dict, outputs: list[str], t0: float) -> int:
    manifest = bio.Manifest(
        command=list(args._argv),
        seed=getattr(args, "seed", None),
        config=config,
        outputs=sorted(outputs),
        elapsed_seconds=time.perf_counter() - t0,
    )
    bio.write_manifest(out / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    mask_dims = _ints(args.mask_dims)
    cfg = SynthConfig(
        block_dims=mask_dims if args.crop else _ints(args.block_dims),
        mask_dims=mask_dims,
        t=args.t, n_task=args.n_task, p=args.ar, seed=args.seed, mode=args.prior_mode(),
    )
    dataset, truth = simulate(cfg)
    lat = dataset.lattice
    scaling = f"grand_mean {dataset.grand_mean:.17g}"
    outputs = []

    def vol(name, frames, note=scaling):
        path = out / name
        bio.write_volume_series(path, lat.dims, frames, lat.voxel_size, scaling=note)
        outputs.append(name)

    vol("data.vols", bio.embed_masked(lat, dataset.y))
    vol("mask.vols", bio.embed_masked(lat, np.ones(lat.n_voxels)), note="mask")
    vol("truth_w.vols", bio.embed_masked(lat, truth.state.w))
    if cfg.p:
        vol("truth_a.vols", bio.embed_masked(lat, truth.state.a), note="ar_coefficients")
    bio.write_design_csv(out / "design.csv", dataset.x)
    outputs.append("design.csv")
    bio.save_state(out / "truth_state.bin", truth.state)
    outputs.append("truth_state.bin")
    return _finish(args, out, dict(vars(cfg).items()) | {"crop": args.crop}, outputs, t0)


def _load_fit_inputs(args):
    data = bio.read_volume_series(args.data)
    mask_vs = bio.read_volume_series(args.mask)
    if mask_vs.dims != data.dims:
        raise ValueError("mask and data dims differ")
    mask = bio.mask_from_volume(mask_vs)
    x, _names = bio.read_design_csv(args.design)
    mode = "2d" if args.prior == "2d" else "3d"
    lattice = build_lattice(data.dims, mask, mode=mode, voxel_size=data.voxel_size)
    y = bio.extract_masked(data, lattice)
    grand_mean = None
    if data.scaling.startswith("grand_mean"):
        grand_mean = float(data.scaling.split()[1])
    dataset = GlmDataset(y=y, x=x, p=args.ar, lattice=lattice, grand_mean=grand_mean)
    contrasts = tuple(
        parse_contrast(spec, dataset.k, grand_mean or args.grand_mean)
        for spec in (args.contrast or [])
    )
    return dataset, contrasts


def _slice_datasets(dataset: GlmDataset):
    """Split a dataset into independent per-slice models (2D prior mode)."""
    lat = dataset.lattice
    nx, ny, _ = lat.dims
    pieces = []
    for z in range(lat.dims[2]):
        sel = lat.voxel_to_grid[:, 2] == z
        if not sel.any():
            continue
        mask2d = lat.mask[:, :, z : z + 1]
        sub_lat = build_lattice((nx, ny, 1), mask2d, mode="2d", voxel_size=lat.voxel_size)
        sub = GlmDataset(
            y=dataset.y[:, sel], x=dataset.x, p=dataset.p, lattice=sub_lat,
            grand_mean=dataset.grand_mean,
        )
        pieces.append((z, sel, sub))
    return pieces


def _cmd_fit_mcmc(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    dataset, contrasts = _load_fit_inputs(args)
    hyper = PriorHyper()
    sampler = SamplerConfig(method=args.method, delta=args.delta)
    cfg = GibbsConfig(
        n_burn=args.burn, n_iter=args.iters, thin=args.thin, sampler=sampler,
        contrasts=contrasts, seed=args.seed, store_full_w=args.store_w,
        full_w_path=str(out / "w_draws.npy") if args.store_w else None,
    )
    from .lattice import build_ugl

    outputs = []
    if args.prior == "2d":
        pieces = _slice_datasets(dataset)
        chains = []
        for z, _sel, sub in pieces:
            priors = GmrfPriors(d_w=build_ugl(sub.lattice))
            chains.append((z, run_gibbs(sub, priors, hyper, cfg)))
        n = dataset.n
        w_mean = np.concatenate([c.w_mean for _, c in chains], axis=1)
        w_std = np.concatenate([c.w_std for _, c in chains], axis=1)
        contrast_draws = {
            c.name: np.concatenate([ch.contrast_samples[c.name] for _, ch in chains], axis=1)
            for c in contrasts
        }
        rows = []
        for z, ch in chains:
            for it in range(ch.alpha_trace.shape[0]):
                rows.append([z, it] + list(ch.alpha_trace[it]) + list(ch.beta_trace[it]))
        header = ["slice", "iter"] + [f"alpha{k}" for k in range(dataset.k)] + [
            f"beta{p}" for p in range(dataset.p)
        ]
        bio.write_matrix_csv(out / "hyper_trace.csv", np.asarray(rows), header=header)
        outputs.append("hyper_trace.csv")
        final_state = chains[-1][1].final_state
    else:
        priors = GmrfPriors(d_w=build_ugl(dataset.lattice))
        chain = run_gibbs(dataset, priors, hyper, cfg)
        w_mean, w_std = chain.w_mean, chain.w_std
        contrast_draws = {c.name: chain.contrast_samples[c.name] for c in contrasts}
        header = ["iter"] + [f"alpha{k}" for k in range(dataset.k)]
        bio.write_matrix_csv(
            out / "alpha_trace.csv",
            np.column_stack([np.arange(chain.alpha_trace.shape[0]), chain.alpha_trace]),
            header=header,
        )
        outputs.append("alpha_trace.csv")
        if dataset.p:
            bio.write_matrix_csv(
                out / "beta_trace.csv",
                np.column_stack([np.arange(chain.beta_trace.shape[0]), chain.beta_trace]),
                header=["iter"] + [f"beta{p}" for p in range(dataset.p)],
            )
            outputs.append("beta_trace.csv")
        bio.write_matrix_csv(
            out / "lambda_summary.csv", chain.lambda_summary, header=["mean", "min", "max"]
        )
        outputs.append("lambda_summary.csv")
        final_state = chain.final_state

    lat = dataset.lattice
    scaling = (
        f"grand_mean {dataset.grand_mean:.17g}" if dataset.grand_mean is not None else "none"
    )
    bio.write_volume_series(out / "w_mean.vols", lat.dims, bio.embed_masked(lat, w_mean),
                            lat.voxel_size, scaling=scaling)
    bio.write_volume_series(out / "w_std.vols", lat.dims, bio.embed_masked(lat, w_std),
                            lat.voxel_size, scaling=scaling)
    outputs += ["w_mean.vols", "w_std.vols"]
    for c in contrasts:
        name = f"contrast_{c.name}_draws.vols"
        bio.write_volume_series(out / name, lat.dims, bio.embed_masked(lat, contrast_draws[c.name]),
                                lat.voxel_size, scaling=scaling)
        outputs.append(name)
    bio.save_state(out / "state_final.bin", final_state)
    outputs.append("state_final.bin")
    config = dict(burn=args.burn, iters=args.iters, thin=args.thin, delta=args.delta,
                  ar=args.ar, prior=args.prior, method=args.method)
    return _finish(args, out, config, outputs, t0)


def _cmd_fit_svb(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    dataset, contrasts = _load_fit_inputs(args)
    hyper = PriorHyper()
    cfg = SvbConfig(
        max_iter=args.max_iter, n_s_main=args.ns, delta=args.delta,
        conv_tol=args.conv_tol, seed=args.seed, workers=args.workers,
    )
    from .lattice import build_ugl

    lat = dataset.lattice
    outputs = []
    scaling = (
        f"grand_mean {dataset.grand_mean:.17g}" if dataset.grand_mean is not None else "none"
    )
    if args.prior == "2d":
        pieces = _slice_datasets(dataset)
        posts = [
            (z, run_svb(sub, GmrfPriors(d_w=build_ugl(sub.lattice)), hyper, cfg))
            for z, _sel, sub in pieces
        ]
        stats = [p.marginal_stats() for _, p in posts]
        mean = np.concatenate([s.mean for s in stats], axis=1)
        var = np.concatenate([s.var for s in stats], axis=1)
        samples = np.concatenate([p.w_samples for _, p in posts], axis=2)
        log_rows = []
        for z, p in posts:
            for it in range(p.n_iterations):
                log_rows.append([z, it + 1] + list(p.alpha_trace[it]) + [p.pcg_iters_w[it]])
    else:
        post = run_svb(dataset, GmrfPriors(d_w=build_ugl(dataset.lattice)), hyper, cfg)
        stats = post.marginal_stats()
        mean, var, samples = stats.mean, stats.var, post.w_samples
        log_rows = [
            [0, it + 1] + list(post.alpha_trace[it]) + [post.pcg_iters_w[it]]
            for it in range(post.n_iterations)
        ]
        bio.write_matrix_csv(
            out / "svb_params.csv",
            np.column_stack([post.q1t, post.alpha_bar]),
            header=["q1_tilde", "alpha_bar"],
        )
        outputs.append("svb_params.csv")

    bio.write_matrix_csv(
        out / "iteration_log.csv", np.asarray(log_rows),
        header=["slice", "iter"] + [f"alpha{k}" for k in range(dataset.k)] + ["pcg_iters_w"],
    )
    outputs.append("iteration_log.csv")
    bio.write_volume_series(out / "w_mean.vols", lat.dims, bio.embed_masked(lat, mean),
                            lat.voxel_size, scaling=scaling)
    bio.write_volume_series(out / "w_var.vols", lat.dims, bio.embed_masked(lat, var),
                            lat.voxel_size, scaling=scaling)
    outputs += ["w_mean.vols", "w_var.vols"]
    n_s, k = samples.shape[0], samples.shape[1]
    flat = samples.reshape(n_s * k, samples.shape[2])
    bio.write_volume_series(
        out / "w_samples.vols", lat.dims, bio.embed_masked(lat, flat), lat.voxel_size,
        scaling=f"sample_block {n_s} {k}",
    )
    outputs.append("w_samples.vols")
    config = dict(max_iter=args.max_iter, ns=args.ns, delta=args.delta,
                  conv_tol=args.conv_tol, workers=args.workers, ar=args.ar, prior=args.prior)
    return _finish(args, out, config, outputs, t0)


def _cmd_ppm(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    outputs = []
    mask_vs = bio.read_volume_series(args.mask)
    mask = bio.mask_from_volume(mask_vs)
    lattice = build_lattice(mask_vs.dims, mask, mode="3d", voxel_size=mask_vs.voxel_size)

    if args.draws:
        vs = bio.read_volume_series(args.draws)
        draws = bio.extract_masked(vs, lattice)
        grand_mean = None
        if vs.scaling.startswith("grand_mean"):
            grand_mean = float(vs.scaling.split()[1])
        if args.gamma.endswith("%"):
            pct = float(args.gamma[:-1])
            gm = args.grand_mean or grand_mean
            if gm is None:
                raise ValueError("percent threshold needs --grand-mean or scaling provenance")
            gamma = pct / 100.0 * gm
        else:
            gamma = float(args.gamma)
        contrast = Contrast(vector=np.ones(1), gamma=gamma, name=args.name)
        chain = SimpleNamespace(contrast_samples={args.name: draws}, lattice=lattice)
        ppm = marginal_ppm_mcmc(chain, contrast)
        if args.excursion_level is not None:
            voxels = excursion_set_greedy(chain, contrast, args.excursion_level)
            bio.write_matrix_csv(out / "excursion_set.csv", voxels.reshape(-1, 1),
                                 header=["voxel"])
            outputs.append("excursion_set.csv")
    elif args.svb_samples:
        vs = bio.read_volume_series(args.svb_samples)
        parts = vs.scaling.split()
        if parts[0] != "sample_block":
            raise ValueError("svb sample volume lacks sample_block provenance")
        n_s, k = int(parts[1]), int(parts[2])
        flat = bio.extract_masked(vs, lattice)
        samples = flat.reshape(n_s, k, lattice.n_voxels)
        contrast = parse_contrast(args.contrast, k, args.grand_mean)
        stats = svb_marginal_stats(samples)
        from scipy.special import ndtr

        mean = contrast.vector @ stats.mean
        var = np.einsum("i,nij,j->n", contrast.vector, stats.cov, contrast.vector)
        degenerate = var <= 0
        prob = ndtr((mean - contrast.gamma) / np.sqrt(np.where(degenerate, 1.0, var)))
        prob[degenerate] = (mean[degenerate] > contrast.gamma).astype(float)
        ppm = PpmMap(prob=prob, method="svb", n_draws=n_s, contrast=contrast, lattice=lattice)
    else:
        raise ValueError("ppm needs --draws or --svb-samples")

    bio.write_volume_series(out / "ppm.vols", lattice.dims,
                            bio.embed_masked(lattice, ppm.prob), lattice.voxel_size,
                            scaling="probability")
    active = threshold_map(ppm, cutoff=args.cutoff)
    bio.write_volume_series(out / "active.vols", lattice.dims,
                            bio.embed_masked(lattice, active.astype(float)),
                            lattice.voxel_size, scaling=f"threshold {args.cutoff}")
    outputs += ["ppm.vols", "active.vols"]
    nx, ny, nz = lattice.dims
    grid = np.zeros(nx * ny * nz)
    inside = lattice.grid_to_voxel >= 0
    grid[inside] = ppm.prob[lattice.grid_to_voxel[inside]]
    cube = grid.reshape(nz, ny, nx)
    for z in range(nz):
        if lattice.mask[:, :, z].any():
            name = f"ppm_z{z:03d}.pgm"
            bio.write_pgm(out / name, cube[z], lo=0.0, hi=1.0)
            outputs.append(name)
    config = dict(cutoff=args.cutoff, gamma=getattr(args, "gamma", None))
    return _finish(args, out, config, outputs, t0)


def _cmd_bench_sampling(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    rows = bench_mod.bench_sampling(
        sizes=_ints(args.sizes), k=args.k, deltas=_floats(args.deltas),
        n_draws=args.draws, t=args.t, seed=args.seed,
        include_cholesky=not args.no_cholesky,
    )
    header = ["method", "n_voxels", "dim", "delta", "n_draws", "mean_seconds",
              "setup_seconds", "mean_pcg_iters", "factor_nnz", "status"]
    path = out / "sampling_times.csv"
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        if new:
            writer.writerow(header)
        for r in rows:
            writer.writerow([r[h] for h in header])
    for r in rows:
        print(
            f"{r['method']:9s} N={r['n_voxels']:>7d} delta={r['delta']:.0e} "
            f"t={r['mean_seconds']:.4f}s iters={r['mean_pcg_iters']:.1f} [{r['status']}]"
        )
    try:
        slope = bench_mod.loglog_slope(rows, "pcg", delta=_floats(args.deltas)[-1])
        print(f"pcg log-log slope: {slope:.3f}")
    except ValueError:
        pass
    return _finish(args, out, dict(sizes=args.sizes, deltas=args.deltas, draws=args.draws),
                   ["sampling_times.csv"], t0)


def _cmd_bench_accuracy(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    mask = bench_mod.MASK_FOR_SIZE[args.n]
    cfg = SynthConfig(block_dims=mask, mask_dims=mask, t=args.t, seed=args.seed)
    dataset, _truth = simulate(cfg)
    from .lattice import build_ugl

    priors = GmrfPriors(d_w=build_ugl(dataset.lattice))
    ref_cfg = GibbsConfig(
        n_burn=args.burn, n_iter=args.iters, thin=args.thin, seed=args.seed,
        sampler=SamplerConfig(method="auto", delta=1e-8),
    )
    runs = [
        dict(method="mcmc", delta=1e-6),
        dict(method="svb", delta=1e-6, ns=args.ns),
        dict(method="svb", delta=1e-4, ns=args.ns),
    ]
    result = bench_mod.bench_accuracy(dataset, priors, PriorHyper(), ref_cfg, runs)
    rows = [[r["method"], r["delta"], r["ns"] or 0, r["rmse"]] for r in result["rows"]]
    bio.write_matrix_csv(
        out / "accuracy_rmse.csv",
        np.array([[0, r[1], r[2], r[3]] for r in rows]),
        header=["method_idx", "delta", "ns", "rmse"],
    )
    for r in result["rows"]:
        print(f"{r['method']:5s} delta={r['delta']:.0e} ns={r['ns']} rmse={r['rmse']:.5f}")
    print(f"reference MC-SE floor: {result['mc_se_floor']:.5f}")
    return _finish(args, out, dict(n=args.n, iters=args.iters), ["accuracy_rmse.csv"], t0)


def _cmd_diagnostics(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    trace = bio.read_matrix_csv(args.trace, has_header=True)
    if args.drop_cols:
        trace = trace[:, args.drop_cols:]
    rows = []
    for j in range(trace.shape[1]):
        try:
            factor = inefficiency_factor(trace[:, j])
        except ValueError:
            factor = float("nan")
        rows.append([j, factor])
    bio.write_matrix_csv(out / "inefficiency.csv", np.asarray(rows), header=["column", "if"])
    report = bench_mod.convergence_report(trace, mode=args.mode, tol=args.tol)
    bio.write_matrix_csv(
        out / "convergence.csv",
        np.column_stack([np.arange(1, report.curves.shape[0] + 1), report.curves]),
        header=["iter"] + [f"rel_err{j}" for j in range(trace.shape[1])],
    )
    for j in range(trace.shape[1]):
        print(f"column {j}: IF={rows[j][1]:.3f} first-within-{args.tol:g}={report.first_within[j]}")
    return _finish(args, out, dict(mode=args.mode, tol=args.tol),
                   ["inefficiency.csv", "convergence.csv"], t0)


def _cmd_rerun(args) -> int:
    manifest = bio.read_manifest(args.manifest)
    return main(manifest.command)


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="bsglm", description=__doc__)
    sub = parser.add_subparsers(dest="mode")

    def common(p, out=True):
        p.add_argument("--config", help="key = value defaults file")
        p.add_argument("--seed", type=int, default=0)
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--block-dims", default="53,63,46")
    p.add_argument("--mask-dims", default="10,10,10")
    p.add_argument("--t", type=int, default=351)
    p.add_argument("--n-task", type=int, default=4)
    p.add_argument("--ar", type=int, default=1)
    p.add_argument("--prior", choices=("2d", "3d"), default="3d")
    p.add_argument("--crop", action="store_true", default=True,
                   help="emit volumes on the mask bounding box (default)")
    p.add_argument("--no-crop", dest="crop", action="store_false")
    p.set_defaults(func=_cmd_simulate)

    for name, fn in (("fit-mcmc", _cmd_fit_mcmc), ("fit-svb", _cmd_fit_svb)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on volume data")
        common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--mask", required=True)
        p.add_argument("--design", required=True)
        p.add_argument("--ar", type=int, default=0)
        p.add_argument("--prior", choices=("2d", "3d"), default="3d")
        p.add_argument("--delta", type=float, default=1e-8)
        p.add_argument("--contrast", action="append",
                       help="name:w1,...,wK:gamma (gamma% = percent of grand mean)")
        p.add_argument("--grand-mean", type=float, default=None)
        if name == "fit-mcmc":
            p.add_argument("--burn", type=int, default=1000)
            p.add_argument("--iters", type=int, default=20_000)
            p.add_argument("--thin", type=int, default=5)
            p.add_argument("--method", choices=("auto", "cholesky", "pcg"), default="auto")
            p.add_argument("--store-w", action="store_true")
            p.set_defaults(func=_cmd_fit_mcmc)
        else:
            p.add_argument("--max-iter", type=int, default=100)
            p.add_argument("--ns", type=int, default=100)
            p.add_argument("--conv-tol", type=float, default=1e-3)
            p.add_argument("--workers", type=int, default=1)
            p.set_defaults(func=_cmd_fit_svb)

    p = sub.add_parser("ppm", help="posterior probability maps from stored output")
    common(p)
    p.add_argument("--mask", required=True)
    p.add_argument("--draws", help="contrast draw volume from fit-mcmc")
    p.add_argument("--svb-samples", help="w_samples volume from fit-svb")
    p.add_argument("--contrast", help="needed with --svb-samples")
    p.add_argument("--gamma", default="0", help="threshold, absolute or percent (e.g. 1%%)")
    p.add_argument("--grand-mean", type=float, default=None)
    p.add_argument("--cutoff", type=float, default=0.9)
    p.add_argument("--name", default="contrast")
    p.add_argument("--excursion-level", type=float, default=None)
    p.set_defaults(func=_cmd_ppm)

    p = sub.add_parser("bench-sampling", help="sampling-time scaling table")
    common(p)
    p.add_argument("--sizes", default="1000,10000")
    p.add_argument("--deltas", default="1e-6,1e-8")
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--t", type=int, default=351)
    p.add_argument("--no-cholesky", action="store_true")
    p.set_defaults(func=_cmd_bench_sampling)

    p = sub.add_parser("bench-accuracy", help="posterior-mean RMSE table")
    common(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--t", type=int, default=351)
    p.add_argument("--burn", type=int, default=1000)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--ns", type=int, default=100)
    p.set_defaults(func=_cmd_bench_accuracy)

    p = sub.add_parser("diagnostics", help="inefficiency factors and convergence curves")
    common(p)
    p.add_argument("--trace", required=True, help="CSV with a header row")
    p.add_argument("--mode", choices=("vb", "mcmc"), default="vb")
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--drop-cols", type=int, default=0,
                   help="skip leading index columns of the trace")
    p.set_defaults(func=_cmd_diagnostics)

    p = sub.add_parser("rerun", help="replay a run manifest")
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_rerun)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "mode", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        if hasattr(args, "config"):
            _apply_config_defaults(args, parser)
        args._argv = argv

        def prior_mode():
            return "2d" if getattr(args, "prior", "3d") == "2d" else "3d"

        args.prior_mode = prior_mode
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help and friends
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
