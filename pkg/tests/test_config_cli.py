import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fctica import pipeline
from fctica.cli import main
from fctica.config import SCHEMA, load_config, parse_config
from fctica.container import read_container, write_container
from fctica.exceptions import ConfigError

SMALL = """\
# small study that converges in a few seconds
grid = 30x30
n_train = 20
n_test = 3
T_total = 400
T_model = 200
n_perm = 20
K = 2000
n_u = 1000
posterior_n_vb1 = 500
durations = 100
fit_retest = true
"""


def _cfg(tmp_path, out="run", extra=""):
    p = tmp_path / f"{out}.cfg"
    p.write_text(SMALL + f"out_dir = {tmp_path / out}\n" + extra)
    return str(p)


def _digests(root):
    # iteration logs carry wall-clock timings
    return {k: v for k, v in pipeline.tree_digests(root).items() if not k.endswith("log.jsonl")}


# config grammar


def test_defaults_are_explicit():
    cfg = parse_config()
    assert set(cfg) == set(SCHEMA)
    assert cfg.grid == (55, 55) and cfg.K == 50_000 and cfg.methods == ("dr", "tica", "vb1", "vb2")
    assert all(isinstance(cfg[k], int) for k in SCHEMA if k.endswith("_seed"))


def test_comments_blanks_and_overrides():
    cfg = parse_config("# header\n\nQ = 5  # trailing\nsnr=1.5\n", ["snr=0.25", "methods = DR, vb2"])
    assert cfg.snr == 0.25 and cfg.methods == ("dr", "vb2")


@pytest.mark.parametrize(
    "text, match",
    [
        ("bogus = 1", "unknown key 'bogus'"),
        ("Q 5", "expected key = value"),
        ("Q = five", "bad value for Q"),
        ("grid = 10", "grid"),
        ("tc_model = ar2", "tc_model"),
        ("methods = dr, gibbs", "unknown methods"),
        ("n_test = 2", "n_test"),
        ("T_model = 2000", "T_model"),
        ("durations = 1", "duration"),
        ("level = 1.0", "level"),
        ("write_data = maybe", "boolean"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_error_names_line(tmp_path):
    p = tmp_path / "x.cfg"
    p.write_text("Q = 5\n\nbogus = 1\n")
    with pytest.raises(ConfigError, match=r"x.cfg:3"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


@given(
    st.fixed_dictionaries(
        {},
        optional={
            "snr": st.floats(0.01, 10),
            "K": st.integers(1, 10**6),
            "grid": st.tuples(st.integers(1, 200), st.integers(1, 200)),
            "use_ess": st.booleans(),
            "methods": st.lists(st.sampled_from(["dr", "tica", "vb1", "vb2"]), min_size=1).map(tuple),
            "durations": st.lists(st.integers(2, 600), max_size=3).map(tuple),
            "out_dir": st.text("abc_/.-", min_size=1, max_size=12),
        },
    )
)
def test_canonical_text_round_trips(values):
    cfg = parse_config()
    cfg.update(values)
    assert parse_config(cfg.to_text()) == cfg


# command line


def test_show_config_round_trips(tmp_path, capsys):
    assert main(["show-config", "-c", _cfg(tmp_path), "-s", "snr=0.75"]) == 0
    cfg = parse_config(capsys.readouterr().out)
    assert cfg.snr == 0.75 and cfg.grid == (30, 30)


def test_config_errors_exit_2(tmp_path):
    assert main(["show-config", "-s", "nope=1"]) == 2
    assert main(["show-config", "-c", str(tmp_path / "missing.cfg")]) == 2
    assert main(["simulate", "-c", _cfg(tmp_path), "--threads", "0"]) == 2
    assert main(["posterior-fc", "-c", _cfg(tmp_path), "--method", "dr"]) == 2


def test_missing_inputs_exit_3(tmp_path):
    cfg = _cfg(tmp_path, "empty")
    assert main(["estimate-priors", "-c", cfg, "-q"]) == 3
    assert main(["fit", "-c", cfg, "-q", "--method", "dr"]) == 3
    assert main(["evaluate", "-c", cfg, "-q"]) == 3


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _cfg(tmp)
    assert main(["run-all", "-c", cfg, "-q"]) == 0
    return tmp, cfg


def test_run_all_writes_layout(finished_run):
    tmp, _ = finished_run
    run = tmp / "run"
    assert (run / "study" / "manifest.txt").exists()
    assert len(os.listdir(run / "study" / "train")) == 20
    assert len(os.listdir(run / "study" / "test")) == 3
    for name in ("template_mean", "template_var", "fc_train", "iw_psi0", "pchol_samples"):
        assert (run / "priors" / f"{name}.ftim").exists()
    assert read_container(run / "priors" / "pchol_samples.ftim").shape == (2000, 5, 5)
    for m in ("dr", "tica", "vb1", "vb2"):
        d = run / "fits" / m / "T200" / "sub-000"
        assert (d / "A_hat.ftim").exists() and (d / "fit.txt").exists()
        assert (run / "fits" / m / "T100").is_dir() and (run / "fits" / m / "retest").is_dir()
    post = read_container(run / "posterior" / "vb2" / "sub-000.ftim")
    assert post.shape == (5, 5, 5)
    assert np.all(post[2] <= post[3])
    for f in ("fc_mae_holdout", "map_mae", "fc_coverage", "fc_icc", "duration", "summary"):
        assert (run / "metrics" / f"{f}.csv").exists()
    assert not [p for p in os.listdir(run) if p.startswith(".tmp")]


def test_stdout_lists_result_paths(finished_run, capsys):
    tmp, cfg = finished_run
    assert main(["evaluate", "-c", cfg, "-q"]) == 0
    out = capsys.readouterr().out.split()
    assert out and all(os.path.exists(p) for p in out)


def test_rerun_and_thread_count_are_bit_identical(finished_run, tmp_path):
    tmp, _ = finished_run
    cfg = _cfg(tmp_path, "again")
    assert main(["run-all", "-c", cfg, "-q", "--threads", "3"]) == 0
    a = _digests(tmp / "run")
    b = _digests(tmp_path / "again")
    assert a.keys() == b.keys() and a == b


def test_non_convergence_exit_5_still_writes(finished_run, tmp_path):
    tmp, _ = finished_run
    cfg = _cfg(tmp, "run", extra="max_iter = 1\ntol = 1e-12\n")
    assert main(["fit", "-c", cfg, "-q", "--method", "tica"]) == 5
    fit = pipeline.read_kv(tmp / "run" / "fits" / "tica" / "T200" / "sub-000" / "fit.txt")
    assert fit["converged"] == "false"


def test_corrupt_container_exit_3(finished_run, tmp_path):
    tmp, _ = finished_run
    import shutil

    shutil.copytree(tmp / "run", tmp_path / "bad")
    p = tmp_path / "bad" / "priors" / "pchol_samples.ftim"
    p.write_bytes(b"JUNK" + p.read_bytes()[4:])
    cfg = _cfg(tmp_path, "bad")
    assert main(["fit", "-c", cfg, "-q", "--method", "vb2"]) == 3
