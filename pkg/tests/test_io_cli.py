import numpy as np
import pytest

from bsglm import io as bio
from bsglm.cli import main, parse_contrast
from bsglm.lattice import build_lattice
from bsglm.model import ModelState
from bsglm.sparse import SparseSym


class TestVolumeSeries:
    def test_round_trip_bit_identical(self, rng, tmp_path):
        dims = (4, 3, 2)
        frames = rng.standard_normal((5, 24)).astype(np.float32)
        p1 = tmp_path / "a.vols"
        p2 = tmp_path / "b.vols"
        bio.write_volume_series(p1, dims, frames, voxel_size=(3.0, 3.0, 4.0), scaling="grand_mean 100")
        vs = bio.read_volume_series(p1)
        bio.write_volume_series(p2, vs.dims, vs.frames, vs.voxel_size, vs.scaling)
        assert p1.read_bytes() == p2.read_bytes()
        assert vs.dims == dims and vs.t == 5

    def test_payload_length_validation(self, tmp_path):
        p = tmp_path / "bad.vols"
        bio.write_volume_series(p, (2, 2, 2), np.zeros((1, 8)))
        data = p.read_bytes()
        p.write_bytes(data[:-8])  # truncate payload
        with pytest.raises(ValueError):
            bio.read_volume_series(p)

    def test_masked_embed_extract_round_trip(self, rng):
        mask = rng.random((4, 4, 3)) < 0.6
        mask[0, 0, 0] = True
        lat = build_lattice((4, 4, 3), mask)
        vals = rng.standard_normal((3, lat.n_voxels))
        frames = bio.embed_masked(lat, vals)
        vs = bio.VolumeSeries(dims=(4, 4, 3), voxel_size=(1, 1, 1), frames=frames)
        back = bio.extract_masked(vs, lat)
        np.testing.assert_allclose(back, vals, atol=1e-6)  # float32 round trip

    def test_mask_round_trip(self, rng, tmp_path):
        mask = rng.random((3, 4, 2)) < 0.5
        mask[1, 1, 1] = True
        lat = build_lattice((3, 4, 2), mask)
        p = tmp_path / "mask.vols"
        bio.write_volume_series(p, (3, 4, 2), bio.embed_masked(lat, np.ones(lat.n_voxels)))
        got = bio.mask_from_volume(bio.read_volume_series(p))
        np.testing.assert_array_equal(got, mask)


class TestCsv:
    def test_design_round_trip(self, rng, tmp_path):
        x = rng.standard_normal((8, 3))
        p = tmp_path / "x.csv"
        bio.write_design_csv(p, x, names=["a", "b", "c"])
        got, names = bio.read_design_csv(p)
        np.testing.assert_array_equal(got, x)
        assert names == ["a", "b", "c"]

    def test_matrix_round_trip(self, rng, tmp_path):
        a = rng.standard_normal((5, 2))
        p = tmp_path / "m.csv"
        bio.write_matrix_csv(p, a, header=["x", "y"])
        np.testing.assert_array_equal(bio.read_matrix_csv(p), a)


class TestCheckpoint:
    def test_state_round_trip(self, rng, tmp_path):
        state = ModelState(
            w=rng.standard_normal((3, 5)),
            a=rng.uniform(-0.5, 0.5, (2, 5)),
            lam=rng.uniform(0.5, 2, 5),
            alpha=rng.uniform(0.5, 2, 3),
            beta=rng.uniform(0.5, 2, 2),
        )
        p = tmp_path / "st.bin"
        bio.save_state(p, state)
        got = bio.load_state(p)
        for field in ("w", "a", "lam", "alpha", "beta"):
            np.testing.assert_array_equal(getattr(got, field), getattr(state, field))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOTSTATE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="checkpoint"):
            bio.load_state(p)


def test_pgm_output(tmp_path, rng):
    img = rng.random((5, 7))
    p = tmp_path / "s.pgm"
    bio.write_pgm(p, img, lo=0.0, hi=1.0)
    data = p.read_bytes()
    assert data.startswith(b"P5\n7 5\n255\n")
    assert len(data) == len(b"P5\n7 5\n255\n") + 35


def test_triplet_export(tmp_path):
    a = SparseSym.from_dense([[2.0, -1.0], [-1.0, 2.0]])
    p = tmp_path / "trip.txt"
    bio.export_triplets(p, a)
    lines = p.read_text().strip().splitlines()
    parsed = {(int(r), int(c)): float(v) for r, c, v in (l.split() for l in lines)}
    assert parsed[(0, 0)] == 2.0 and parsed[(0, 1)] == -1.0


class TestContrastParsing:
    def test_absolute_gamma(self):
        c = parse_contrast("faces:1,0,-1:0.5", 3, None)
        np.testing.assert_array_equal(c.vector, [1.0, 0.0, -1.0])
        assert c.gamma == 0.5 and c.name == "faces"

    def test_percent_gamma(self):
        c = parse_contrast("f:1,0:2%", 2, 100.0)
        assert c.gamma == pytest.approx(2.0)
        assert c.gamma_percent == 2.0 and c.grand_mean == 100.0

    def test_wrong_weight_count(self):
        from bsglm.cli import _UsageError

        with pytest.raises(_UsageError):
            parse_contrast("f:1,0:1", 3, None)


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = main([
        "simulate", "--out", str(out), "--mask-dims", "6,6,3", "--t", "60",
        "--seed", "5", "--ar", "1",
    ])
    assert code == 0
    return out


class TestCliFlow:
    def test_simulate_outputs(self, sim_dir):
        for name in ("data.vols", "mask.vols", "design.csv", "truth_w.vols", "manifest.json"):
            assert (sim_dir / name).exists()

    def test_fit_mcmc_and_ppm(self, sim_dir, tmp_path):
        fit = tmp_path / "fit"
        code = main([
            "fit-mcmc", "--data", str(sim_dir / "data.vols"), "--mask", str(sim_dir / "mask.vols"),
            "--design", str(sim_dir / "design.csv"), "--ar", "1", "--out", str(fit),
            "--burn", "5", "--iters", "20", "--thin", "2", "--seed", "1",
            "--contrast", "t1:1,0,0,0,0:1%",
        ])
        assert code == 0
        draws = bio.read_volume_series(fit / "contrast_t1_draws.vols")
        assert draws.t == 10
        maps = tmp_path / "maps"
        code = main([
            "ppm", "--mask", str(sim_dir / "mask.vols"), "--draws",
            str(fit / "contrast_t1_draws.vols"), "--gamma", "1%", "--out", str(maps),
        ])
        assert code == 0
        ppm = bio.read_volume_series(maps / "ppm.vols")
        assert 0.0 <= ppm.frames.min() and ppm.frames.max() <= 1.0

    def test_fit_svb_and_ppm(self, sim_dir, tmp_path):
        fit = tmp_path / "svb"
        code = main([
            "fit-svb", "--data", str(sim_dir / "data.vols"), "--mask", str(sim_dir / "mask.vols"),
            "--design", str(sim_dir / "design.csv"), "--ar", "1", "--out", str(fit),
            "--max-iter", "14", "--ns", "8", "--seed", "2",
        ])
        assert code == 0
        maps = tmp_path / "svbmaps"
        code = main([
            "ppm", "--mask", str(sim_dir / "mask.vols"), "--svb-samples",
            str(fit / "w_samples.vols"), "--contrast", "t1:1,0,0,0,0:1.0",
            "--out", str(maps),
        ])
        assert code == 0

    def test_2d_prior_fit(self, sim_dir, tmp_path):
        fit = tmp_path / "fit2d"
        code = main([
            "fit-mcmc", "--data", str(sim_dir / "data.vols"), "--mask", str(sim_dir / "mask.vols"),
            "--design", str(sim_dir / "design.csv"), "--ar", "1", "--prior", "2d",
            "--out", str(fit), "--burn", "3", "--iters", "10", "--thin", "1", "--seed", "1",
        ])
        assert code == 0
        assert (fit / "hyper_trace.csv").exists()

    def test_rerun_reproduces_bitwise(self, sim_dir, tmp_path):
        out2 = tmp_path / "replay"
        manifest = bio.read_manifest(sim_dir / "manifest.json")
        replay_cmd = ["rerun", str(sim_dir / "manifest.json")]
        # replaying overwrites the same out dir; copy the originals first
        original = (sim_dir / "data.vols").read_bytes()
        code = main(replay_cmd)
        assert code == 0
        assert (sim_dir / "data.vols").read_bytes() == original

    def test_exit_codes(self, tmp_path):
        assert main([]) == 1
        assert main(["fit-mcmc", "--out", str(tmp_path / "x")]) == 1  # missing required
        assert main([
            "fit-mcmc", "--data", "nope.vols", "--mask", "nope.vols",
            "--design", "nope.csv", "--out", str(tmp_path / "y"),
        ]) == 2

    def test_config_file_defaults(self, sim_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("burn = 2\niters = 8\nthin = 2\n")
        fit = tmp_path / "cfgfit"
        code = main([
            "fit-mcmc", "--config", str(cfg), "--data", str(sim_dir / "data.vols"),
            "--mask", str(sim_dir / "mask.vols"), "--design", str(sim_dir / "design.csv"),
            "--ar", "1", "--out", str(fit), "--seed", "3",
        ])
        assert code == 0
        draws_meta = bio.read_manifest(fit / "manifest.json")
        assert draws_meta.config["iters"] == 8

    def test_diagnostics_mode(self, tmp_path, rng):
        trace = rng.standard_normal((500, 2)).cumsum(axis=0) * 0.001 + 5.0
        p = tmp_path / "trace.csv"
        bio.write_matrix_csv(p, trace, header=["a0", "a1"])
        out = tmp_path / "diag"
        assert main(["diagnostics", "--trace", str(p), "--mode", "vb", "--out", str(out)]) == 0
        assert (out / "inefficiency.csv").exists()
        assert (out / "convergence.csv").exists()
