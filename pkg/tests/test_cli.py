import json
import os

import numpy as np
import pytest

from conlearn.cli import (config_fingerprint, main, parse_config, read_matrix,
                          write_matrix)
from conlearn.errors import ConfigError


def test_matrix_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((7, 5))
    p1 = tmp_path / "a.mtx"
    p2 = tmp_path / "b.mtx"
    write_matrix(p1, arr)
    back = read_matrix(p1)
    assert np.array_equal(back, arr)
    write_matrix(p2, back)
    assert p1.read_bytes() == p2.read_bytes()


def test_matrix_rejects_garbage(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(ConfigError):
        read_matrix(p)


def _write(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


BASE = """
[run]
mode = learn
seed = 7
out = {out}

[input]
training_file = {train}

[sampler]
chains = 300

[solver]
iterations = 3

[target]
kind = linear
components = 0 1
values = 0.5 -0.3
"""


@pytest.fixture()
def linear_setup(tmp_path):
    rng = np.random.default_rng(5)
    train = tmp_path / "train.mtx"
    write_matrix(train, rng.standard_normal((2, 50)))
    out = tmp_path / "out"
    cfg = _write(tmp_path, BASE.format(out=out, train=train))
    return cfg, str(out)


def test_parse_defaults(linear_setup):
    cfg_path, _ = linear_setup
    cfg = parse_config(cfg_path)
    assert cfg.f0 == 4.0
    assert cfg.relax == 0.3
    assert cfg.nu is None
    assert cfg.dt is None and cfg.steps is None
    assert cfg.workers == 1


def test_parse_rejects_bad_values(tmp_path):
    bad = _write(tmp_path, "[run]\nmode = learn\nout = o\n"
                 "[sampler]\ndt = -0.5\n", "bad.ini")
    with pytest.raises(ConfigError):
        parse_config(bad)
    bad2 = _write(tmp_path, "[run]\nmode = fly\nout = o\n", "bad2.ini")
    with pytest.raises(ConfigError):
        parse_config(bad2)


def test_parse_rejects_unknown_key(tmp_path):
    bad = _write(tmp_path, "[run]\nmode = learn\nout = o\nturbo = 9\n")
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    assert "turbo" in str(exc.value)
    bad2 = _write(tmp_path, "[run]\nmode = learn\nout = o\n[warp]\nx = 1\n",
                  "bad2.ini")
    with pytest.raises(ConfigError) as exc:
        parse_config(bad2)
    assert "warp" in str(exc.value)


def test_fingerprint_ignores_presentation_fields(linear_setup):
    cfg_path, _ = linear_setup
    a = parse_config(cfg_path)
    b = parse_config(cfg_path, overrides={"mode": "report", "out": "xx",
                                          "workers": 4})
    assert config_fingerprint(a) == config_fingerprint(b)
    c = parse_config(cfg_path, overrides={"seed": 8})
    assert config_fingerprint(a) != config_fingerprint(c)


def test_learn_is_byte_deterministic(linear_setup, tmp_path):
    cfg_path, out = linear_setup
    assert main(["--config", cfg_path]) == 0
    out2 = str(tmp_path / "out2")
    assert main(["--config", cfg_path, "--out", out2]) == 0
    t1 = open(os.path.join(out, "trace.csv"), "rb").read()
    t2 = open(os.path.join(out2, "trace.csv"), "rb").read()
    assert t1 == t2
    lam = read_matrix(os.path.join(out, "lambda.mtx"))
    assert lam.shape == (2, 1)
    pts = read_matrix(os.path.join(out, "learned_set.mtx"))
    assert pts.shape[1] == 300


def test_report_consistency_and_refusal(linear_setup, capsys):
    cfg_path, out = linear_setup
    assert main(["--config", cfg_path]) == 0
    assert main(["--config", cfg_path, "--mode", "report"]) == 0
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    captured = capsys.readouterr().out
    assert f"i_sol={manifest['i_sol']}" in captured
    report = open(os.path.join(out, "report.csv")).read().splitlines()
    assert report[0] == "iteration,err,err_moment"
    # mismatched seed must be refused
    assert main(["--config", cfg_path, "--mode", "report", "--seed", "8"]) == 2


def test_generate_training_artifacts(tmp_path):
    out = tmp_path / "gen"
    cfg = _write(tmp_path, f"""
[run]
mode = generate-training
seed = 3
out = {out}

[mesh]
elements = 3 3 2
lengths = 1.0 1.0 0.1

[prior]
nd = 8
n_modes = 64
correlation_lengths = 0.3 0.3 0.05
""")
    assert main(["--config", cfg]) == 0
    train = read_matrix(out / "training.mtx")
    n_y = 3 * (2 * 2 * 1)
    n_p = 8 * (3 * 3 * 2)
    assert train.shape == (6 * n_y + 2 * n_p + 3, 8)
    man = json.load(open(out / "manifest.json"))
    assert man["n_y"] == n_y and man["n_p"] == n_p
    eta = read_matrix(out / "eta.mtx")
    assert eta.shape[1] == 8
    assert np.abs(eta.mean(axis=1)).max() < 1e-10
    ceff = read_matrix(out / "ceff.mtx")
    assert ceff.shape == (36, 8)


def test_generate_training_default_mesh_layout(tmp_path):
    out = tmp_path / "gen50"
    cfg = _write(tmp_path, f"""
[run]
mode = generate-training
seed = 4
out = {out}

[prior]
nd = 50
correlation_lengths = 0.3333333333 0.3333333333 0.05
""")
    assert main(["--config", cfg]) == 0
    train = read_matrix(out / "training.mtx")
    assert train.shape == (2631, 50)


def test_homogenization_learn_cli(tmp_path):
    gen_out = tmp_path / "gen"
    gen_cfg = _write(tmp_path, f"""
[run]
mode = generate-training
seed = 3
out = {gen_out}

[mesh]
elements = 3 3 2
lengths = 1.0 1.0 0.1

[prior]
nd = 12
n_modes = 64
correlation_lengths = 0.3 0.3 0.05
""", "gen.ini")
    assert main(["--config", gen_cfg]) == 0
    learn_out = tmp_path / "learn"
    learn_cfg = _write(tmp_path, f"""
[run]
mode = learn
seed = 11
out = {learn_out}

[mesh]
elements = 3 3 2
lengths = 1.0 1.0 0.1

[input]
training_dir = {gen_out}

[sampler]
chains = 150

[solver]
iterations = 2

[target]
kind = homogenization
table_path = {gen_out}/ceff_mean.mtx
delta_exp = 0.15
""", "learn.ini")
    assert main(["--config", learn_cfg]) == 0
    trace = open(learn_out / "trace.csv").read().splitlines()
    assert trace[0].startswith("iteration,err,err_residue,err_mean_matrix,"
                               "err_dispersion,lambda_norm,moment_0")
    assert len(trace) == 3
    man = json.load(open(learn_out / "manifest.json"))
    assert man["rho0"] > 0
    assert main(["--config", learn_cfg, "--mode", "report"]) == 0
    moments = dict(r.split(",") for r in
                   open(learn_out / "report_moments.csv").read()
                   .strip().splitlines()[1:])
    assert float(moments["mu_frobenius"]) > 0
    assert 0 < float(moments["rho2_mean"]) < 10
