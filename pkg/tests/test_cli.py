import hashlib

import numpy as np
import pytest

from piesrgan.cli import main
from piesrgan.diagnostics import read_slice_csv
from piesrgan.networks import load_checkpoint, save_checkpoint
from piesrgan.pifd import read_pifd

TINY_CFG = """\
# tiny nets so the smoke pipeline stays fast
gen.feature_maps = 4
gen.num_rrdb = 1
gen.growth_channels = 2
gen.db_convs_per_block = 2
disc.base_filters = 2
disc.dense_width = 8
train.batch_size = 4
"""


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY_CFG)
    assert run("simulate", "--n", 32, "--steps", 4, "--output-every", 2, "--seed", 3,
               "--out", d / "sim") == 0
    snap = d / "sim" / "snap_000004.pifd"
    assert run("filter", snap, "--width-cells", 4, "--out-dir", d / "filt") == 0
    filt = d / "filt" / "snap_000004.filtered.pifd"
    assert run("make-dataset", "--stage", 1, "--filtered", filt, "--targets", snap,
               "--width-cells", 4, "--out", d / "ds.manifest") == 0
    assert run("train", "--config", d / "tiny.cfg", "--manifest", d / "ds.manifest", "--stage", 1,
               "--steps", 2, "--out-dir", d / "run") == 0
    assert run("reconstruct", "--input", filt, "--generator", d / "run" / "gen.ckpt",
               "--width-cells", 4, "--out", d / "recon.pifd") == 0
    assert run("spectrum", "--input", d / "recon.pifd", "--out", d / "spec.txt") == 0
    return d


def test_smoke_pipeline_outputs(pipeline):
    d = pipeline
    assert sorted(p.name for p in (d / "sim").iterdir()) == [
        "snap_000000.pifd", "snap_000002.pifd", "snap_000004.pifd", "stats.txt"]
    recon = read_pifd(d / "recon.pifd")
    assert recon.data.shape == (4, 32, 32, 32) and np.all(np.isfinite(recon.data))
    gen = load_checkpoint(d / "run" / "gen.ckpt")
    assert gen.meta["filter"]["kind"] == "gaussian_spectral"
    log = (d / "run" / "train.log").read_text().splitlines()
    assert log[0].startswith("# step") and len(log) == 3


def test_spectrum_file_is_two_columns(pipeline):
    lines = (pipeline / "spec.txt").read_text().splitlines()
    assert lines[0].startswith("#")
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    assert rows.shape == (17, 2)
    assert np.array_equal(rows[:, 0], np.arange(17))


def test_stage2_on_paired_manifest_exits_1(pipeline, capsys):
    d = pipeline
    assert run("train", "--config", d / "tiny.cfg", "--manifest", d / "ds.manifest",
               "--stage", 2, "--out-dir", d / "bad") == 1
    assert "stage" in capsys.readouterr().err


def test_usage_and_input_errors_exit_1(pipeline, tmp_path):
    assert run("no-such-command") == 1
    assert run("spectrum", "--input", tmp_path / "missing.pifd", "--out", tmp_path / "x") == 1
    assert run("slice", "--input", pipeline / "recon.pifd", "--index", 99, "--out", tmp_path / "s.csv") == 1
    # generator trained at width 4 cells must refuse a width-2 field
    assert run("reconstruct", "--input", pipeline / "recon.pifd", "--generator",
               pipeline / "run" / "gen.ckpt", "--width-cells", 2, "--out", tmp_path / "r.pifd") == 1
    (tmp_path / "broken.cfg").write_text("this line has no equals sign\n")
    assert run("spectrum", "--config", tmp_path / "broken.cfg", "--input", pipeline / "recon.pifd",
               "--out", tmp_path / "x") == 1


def test_training_is_bit_reproducible(pipeline):
    d = pipeline
    assert run("train", "--config", d / "tiny.cfg", "--manifest", d / "ds.manifest", "--stage", 1,
               "--steps", 2, "--out-dir", d / "again") == 0
    for name in ("gen.ckpt", "disc.ckpt", "train.log"):
        assert sha(d / "run" / name) == sha(d / "again" / name)


def test_simulate_is_bit_reproducible(pipeline, tmp_path):
    assert run("simulate", "--n", 32, "--steps", 4, "--output-every", 2, "--seed", 3,
               "--out", tmp_path / "sim") == 0
    for name in ("snap_000004.pifd", "stats.txt"):
        assert sha(pipeline / "sim" / name) == sha(tmp_path / "sim" / name)


def test_slice_and_a_priori(pipeline, tmp_path):
    d = pipeline
    assert run("slice", "--input", d / "recon.pifd", "--axis", "y", "--index", 5, "--component", 2,
               "--out", tmp_path / "s.csv", "--pgm", tmp_path / "s.pgm") == 0
    np.testing.assert_array_equal(read_slice_csv(tmp_path / "s.csv"),
                                  read_pifd(d / "recon.pifd").data[2][:, 5, :])
    assert run("a-priori", "--dns", d / "sim" / "snap_000004.pifd",
               "--filtered", d / "filt" / "snap_000004.filtered.pifd",
               "--recon", d / "recon.pifd", "--out", tmp_path / "ap.txt") == 0
    keys = [ln.split()[:2] for ln in (tmp_path / "ap.txt").read_text().splitlines()
            if not ln.startswith("#")]
    assert ["velocity", "ratio"] in keys and ["scalar", "ratio"] in keys


def test_les_run_unclosed_and_closed(pipeline, tmp_path):
    d = pipeline
    snap = d / "sim" / "snap_000004.pifd"
    assert run("les-run", "--initial", snap, "--width-cells", 4, "--coarsen", 2, "--steps", 4,
               "--output-every", 2, "--out", tmp_path / "un.txt") == 0
    rows = np.loadtxt(tmp_path / "un.txt")
    assert rows.shape == (3, 3) and np.all(np.diff(rows[:, 1]) < 0)
    assert run("les-run", "--initial", snap, "--generator", d / "run" / "gen.ckpt", "--width-cells", 4,
               "--coarsen", 2, "--steps", 1, "--out", tmp_path / "pi.txt") == 0
    assert np.all(np.isfinite(np.loadtxt(tmp_path / "pi.txt")))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_closure_exits_2(pipeline, tmp_path):
    gen = load_checkpoint(pipeline / "run" / "gen.ckpt")
    params = dict(gen.params)
    params["conv_last.bias"] = np.full_like(params["conv_last.bias"], np.nan)
    save_checkpoint(tmp_path / "nan.ckpt", gen.with_params(params))
    code = run("les-run", "--initial", pipeline / "sim" / "snap_000004.pifd", "--generator",
               tmp_path / "nan.ckpt", "--width-cells", 4, "--coarsen", 2, "--steps", 2,
               "--out", tmp_path / "x.txt")
    assert code == 2


def test_cfl_violation_exits_1(pipeline, tmp_path):
    code = run("les-run", "--initial", pipeline / "sim" / "snap_000004.pifd", "--width-cells", 4,
               "--coarsen", 2, "--steps", 3, "--dt", 50.0, "--out", tmp_path / "x.txt")
    assert code == 1
