"""Batch front-end: config parsing, run orchestration, persistence.

Three modes: ``generate-training`` builds the Monte Carlo training set and
its normalization artifacts, ``learn`` runs the multiplier iteration
against a configured target, and ``report`` recomputes summary statistics
from stored artifacts. Matrices persist in a small binary format
(column-major float64 with a fixed header) that round-trips bit-exactly;
every output directory carries a manifest with the config fingerprint and
seed, and ``report`` refuses artifacts whose fingerprint does not match
the config it was given.
"""

import argparse
import configparser
import csv
import hashlib
import json
import os
import struct
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import (HomogenizationBlocks, homogenization_spec,
                          linear_moment_spec)
from .elasticity import (ElasticityBvp, FieldHyper, HexMesh, TrainingLayout,
                         generate_training, moment_report)
from .errors import ConfigError, ConlearnError
from .kde_prior import KdePrior, TrainingSetRaw, normalize_training
from .sampler import IsdeConfig, default_step_count, default_time_step
from .solver import solve

_MAGIC = b"CLMX"
_VERSION = 1
_KIND_F64 = b"f"


# -- matrix persistence ------------------------------------------------------


def write_matrix(path, arr):
    """Write a 2-D float64 matrix; the payload is column-major."""
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(_KIND_F64)
        fh.write(np.asfortranarray(arr).tobytes(order="F"))


def read_matrix(path):
    """Read a matrix written by :func:`write_matrix`."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"{path}: not a matrix file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ConfigError(f"{path}: unsupported version {version}")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        kind = fh.read(1)
        if kind != _KIND_F64:
            raise ConfigError(f"{path}: unsupported element kind {kind!r}")
        payload = fh.read(rows * cols * 8)
        if len(payload) != rows * cols * 8:
            raise ConfigError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape((rows, cols),
                                                       order="F").copy()


# -- configuration -----------------------------------------------------------

_SCHEMA = {
    "run": {"mode", "seed", "workers", "out"},
    "mesh": {"elements", "lengths"},
    "prior": {"nd", "nu", "correlation_lengths", "mean_bulk", "mean_shear",
              "cov_bulk", "cov_shear", "delta_min", "delta_max", "n_modes"},
    "sampler": {"f0", "dt", "steps", "chains"},
    "solver": {"iterations", "relax", "rho_weight"},
    "target": {"kind", "components", "values", "table", "table_path",
               "delta_exp", "b_rho"},
    "input": {"training_dir", "training_file"},
}

_MODES = ("generate-training", "learn", "report")


@dataclass
class RunConfig:
    mode: str
    seed: int
    workers: int
    out: str
    mesh_elements: tuple = (6, 6, 3)
    mesh_lengths: tuple = (1.0, 1.0, 0.1)
    nd: int = 50
    nu: Optional[int] = None
    correlation_lengths: tuple = (0.1, 0.1, 0.1)
    mean_bulk: float = 1.08974e11
    mean_shear: float = 6.85484e10
    cov_bulk: float = 0.5
    cov_shear: float = 0.25
    delta_min: float = 0.1
    delta_max: float = 0.5
    n_modes: int = 512
    f0: float = 4.0
    dt: Optional[float] = None
    steps: Optional[int] = None
    chains: int = 1000
    iterations: int = 10
    relax: float = 0.3
    rho_weight: float = 1.0
    target_kind: Optional[str] = None
    target_components: Optional[tuple] = None
    target_values: Optional[tuple] = None
    target_table: Optional[np.ndarray] = None
    target_delta_exp: Optional[float] = None
    target_b_rho: float = 1.0
    training_dir: Optional[str] = None
    training_file: Optional[str] = None


def _get(parser, section, key, default=None):
    if parser.has_option(section, key):
        return parser.get(section, key)
    return default


def _parse_floats(text, n, where):
    parts = text.split()
    if len(parts) != n:
        raise ConfigError(f"{where}: expected {n} numbers, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}")


def _parse_ints(text, n, where):
    vals = _parse_floats(text, n, where)
    out = tuple(int(v) for v in vals)
    if any(o != v for o, v in zip(out, vals)):
        raise ConfigError(f"{where}: expected integers")
    return out


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def parse_config(path, overrides=None):
    """Parse and validate a config file; unknown keys are errors.

    ``overrides`` may carry mode / seed / workers / out values from the
    command line, which take precedence over the file.
    """
    _require(os.path.isfile(path), f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read(path)

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")

    overrides = overrides or {}
    mode = overrides.get("mode") or _get(parser, "run", "mode")
    _require(mode in _MODES, f"run.mode must be one of {_MODES}, got {mode!r}")
    seed = overrides.get("seed")
    if seed is None:
        seed = int(_get(parser, "run", "seed", "0"))
    workers = overrides.get("workers")
    if workers is None:
        workers = int(os.environ.get("CONLEARN_WORKERS",
                                     _get(parser, "run", "workers", "1")))
    out = overrides.get("out") or _get(parser, "run", "out")
    _require(out is not None, "run.out (or --out) is required")
    _require(seed >= 0, "run.seed must be nonnegative")
    _require(workers >= 1, "run.workers must be at least 1")

    cfg = RunConfig(mode=mode, seed=int(seed), workers=int(workers), out=out)

    if parser.has_section("mesh"):
        if parser.has_option("mesh", "elements"):
            cfg.mesh_elements = _parse_ints(parser.get("mesh", "elements"), 3,
                                            "mesh.elements")
            _require(min(cfg.mesh_elements) >= 2,
                     "mesh.elements must be at least 2 per direction")
        if parser.has_option("mesh", "lengths"):
            cfg.mesh_lengths = _parse_floats(parser.get("mesh", "lengths"), 3,
                                             "mesh.lengths")
            _require(min(cfg.mesh_lengths) > 0, "mesh.lengths must be positive")

    if parser.has_section("prior"):
        cfg.nd = int(_get(parser, "prior", "nd", cfg.nd))
        _require(cfg.nd >= 2, "prior.nd must be at least 2")
        nu = _get(parser, "prior", "nu", "auto")
        cfg.nu = None if nu == "auto" else int(nu)
        _require(cfg.nu is None or cfg.nu >= 1, "prior.nu must be >= 1")
        if parser.has_option("prior", "correlation_lengths"):
            cfg.correlation_lengths = _parse_floats(
                parser.get("prior", "correlation_lengths"), 3,
                "prior.correlation_lengths")
            _require(min(cfg.correlation_lengths) > 0,
                     "prior.correlation_lengths must be positive")
        cfg.mean_bulk = float(_get(parser, "prior", "mean_bulk", cfg.mean_bulk))
        cfg.mean_shear = float(_get(parser, "prior", "mean_shear",
                                    cfg.mean_shear))
        cfg.cov_bulk = float(_get(parser, "prior", "cov_bulk", cfg.cov_bulk))
        cfg.cov_shear = float(_get(parser, "prior", "cov_shear", cfg.cov_shear))
        cfg.delta_min = float(_get(parser, "prior", "delta_min", cfg.delta_min))
        cfg.delta_max = float(_get(parser, "prior", "delta_max", cfg.delta_max))
        _require(0 < cfg.delta_min <= cfg.delta_max,
                 "prior.delta bounds must satisfy 0 < min <= max")
        cfg.n_modes = int(_get(parser, "prior", "n_modes", cfg.n_modes))
        _require(cfg.n_modes >= 1, "prior.n_modes must be >= 1")

    if parser.has_section("sampler"):
        cfg.f0 = float(_get(parser, "sampler", "f0", cfg.f0))
        _require(cfg.f0 > 0, "sampler.f0 must be positive")
        dt = _get(parser, "sampler", "dt", "auto")
        cfg.dt = None if dt == "auto" else float(dt)
        _require(cfg.dt is None or cfg.dt > 0, "sampler.dt must be positive")
        steps = _get(parser, "sampler", "steps", "auto")
        cfg.steps = None if steps == "auto" else int(steps)
        _require(cfg.steps is None or cfg.steps >= 1,
                 "sampler.steps must be >= 1")
        cfg.chains = int(_get(parser, "sampler", "chains", cfg.chains))
        _require(cfg.chains >= 2, "sampler.chains must be at least 2")

    if parser.has_section("solver"):
        cfg.iterations = int(_get(parser, "solver", "iterations",
                                  cfg.iterations))
        _require(cfg.iterations >= 1, "solver.iterations must be >= 1")
        cfg.relax = float(_get(parser, "solver", "relax", cfg.relax))
        _require(0 < cfg.relax <= 1, "solver.relax must lie in (0, 1]")
        cfg.rho_weight = float(_get(parser, "solver", "rho_weight",
                                    cfg.rho_weight))
        _require(cfg.rho_weight >= 0, "solver.rho_weight must be >= 0")

    if parser.has_section("target"):
        kind = _get(parser, "target", "kind")
        _require(kind in ("linear", "homogenization"),
                 f"target.kind must be linear or homogenization, got {kind!r}")
        cfg.target_kind = kind
        if kind == "linear":
            comps = _get(parser, "target", "components")
            vals = _get(parser, "target", "values")
            _require(comps is not None and vals is not None,
                     "target.components and target.values are required")
            cfg.target_components = _parse_ints(comps, len(comps.split()),
                                                "target.components")
            cfg.target_values = _parse_floats(vals, len(vals.split()),
                                              "target.values")
            _require(len(cfg.target_components) == len(cfg.target_values),
                     "target.components and target.values lengths differ")
        else:
            table = _get(parser, "target", "table")
            table_path = _get(parser, "target", "table_path")
            _require((table is None) != (table_path is None),
                     "exactly one of target.table / target.table_path needed")
            if table is not None:
                rows = [r for r in table.splitlines() if r.strip()]
                _require(len(rows) == 6, "target.table must have 6 rows")
                cfg.target_table = np.array(
                    [_parse_floats(r, 6, "target.table") for r in rows])
            else:
                cfg.target_table = read_matrix(table_path)
                _require(cfg.target_table.shape == (6, 6),
                         "target.table_path must hold a 6x6 matrix")
            delta_exp = _get(parser, "target", "delta_exp")
            _require(delta_exp is not None, "target.delta_exp is required")
            cfg.target_delta_exp = float(delta_exp)
            _require(cfg.target_delta_exp > 0,
                     "target.delta_exp must be positive")
            cfg.target_b_rho = float(_get(parser, "target", "b_rho", "1.0"))

    if parser.has_section("input"):
        cfg.training_dir = _get(parser, "input", "training_dir")
        cfg.training_file = _get(parser, "input", "training_file")

    return cfg


def config_fingerprint(cfg):
    """Hash of the scientific parameters (mode, out, workers excluded)."""
    skip = {"mode", "out", "workers"}
    items = []
    for key in sorted(vars(cfg)):
        if key in skip:
            continue
        value = getattr(cfg, key)
        if isinstance(value, np.ndarray):
            value = value.tolist()
        items.append(f"{key}={value!r}")
    return hashlib.sha256("\n".join(items).encode()).hexdigest()


def _write_manifest(out_dir, cfg, extra=None):
    payload = {"mode": cfg.mode, "seed": cfg.seed,
               "config_sha256": config_fingerprint(cfg)}
    payload.update(extra or {})
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _read_manifest(path_dir):
    path = os.path.join(path_dir, "manifest.json")
    _require(os.path.isfile(path), f"missing manifest in {path_dir}")
    with open(path) as fh:
        return json.load(fh)


def _write_moment_report(path, rep, extra_rows=()):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "value"])
        writer.writerow(["mu_frobenius", f"{rep.mu:.17g}"])
        writer.writerow(["delta_eff", f"{rep.delta_eff:.17g}"])
        writer.writerow(["delta_eff_ml", f"{rep.delta_eff_ml:.17g}"])
        for name, value in extra_rows:
            writer.writerow([name, f"{value:.17g}"])


# -- mode implementations ----------------------------------------------------


def _build_bvp(cfg):
    mesh = HexMesh(counts=cfg.mesh_elements, lengths=cfg.mesh_lengths)
    return ElasticityBvp(mesh)


def _field_hyper(cfg):
    return FieldHyper(lengths=cfg.correlation_lengths,
                      mean_bulk=cfg.mean_bulk, mean_shear=cfg.mean_shear,
                      cov_bulk=cfg.cov_bulk, cov_shear=cfg.cov_shear,
                      delta_bounds=(cfg.delta_min, cfg.delta_max),
                      n_modes=cfg.n_modes)


def _mode_generate_training(cfg):
    bvp = _build_bvp(cfg)
    train = generate_training(bvp, _field_hyper(cfg), cfg.nd, cfg.seed,
                              workers=cfg.workers)
    norm, red = normalize_training(train.raw, nu=cfg.nu)
    prior = KdePrior.from_training(red)
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    write_matrix(os.path.join(out, "training.mtx"), train.raw.points)
    write_matrix(os.path.join(out, "eta.mtx"), red.eta_d)
    write_matrix(os.path.join(out, "norm_mean.mtx"), norm.mean[:, None])
    write_matrix(os.path.join(out, "norm_basis.mtx"), norm.basis)
    write_matrix(os.path.join(out, "norm_eigvals.mtx"), norm.eigvals[:, None])
    write_matrix(os.path.join(out, "ceff.mtx"),
                 train.c_eff.reshape(train.c_eff.shape[0], 36).T)
    rep = moment_report(train.c_eff)
    write_matrix(os.path.join(out, "ceff_mean.mtx"), rep.mean_matrix)
    _write_moment_report(os.path.join(out, "moment_report.csv"), rep,
                         [("residual_norm_mean",
                           float(train.residual_norms.mean()))])
    with open(os.path.join(out, "prior_summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantity", "value"])
        for name, value in [("n_d", train.raw.n_d), ("n_x", train.raw.n_x),
                            ("nu", prior.nu), ("s", prior.s),
                            ("s_hat", prior.s_hat), ("c_nu", prior.c_nu)]:
            writer.writerow([name, f"{value:.17g}"
                             if isinstance(value, float) else str(value)])
    _write_manifest(out, cfg, {"n_y": bvp.mesh.n_y, "n_p": bvp.mesh.n_p})
    return 0


def _load_training(cfg):
    """Prior + (optionally) homogenization inputs per the config."""
    if cfg.target_kind == "linear":
        _require(cfg.training_file is not None,
                 "input.training_file is required for a linear target")
        raw = TrainingSetRaw(read_matrix(cfg.training_file))
        norm, red = normalize_training(raw, nu=cfg.nu)
        return norm, red, None, None
    _require(cfg.training_dir is not None,
             "input.training_dir is required for a homogenization target")
    man = _read_manifest(cfg.training_dir)
    raw = TrainingSetRaw(read_matrix(os.path.join(cfg.training_dir,
                                                  "training.mtx")))
    norm, red = normalize_training(raw, nu=cfg.nu)
    ceff = read_matrix(os.path.join(cfg.training_dir, "ceff.mtx"))
    c_samples = ceff.T.reshape(-1, 6, 6)
    layout = TrainingLayout(n_y=int(man["n_y"]), n_p=int(man["n_p"]))
    _require(layout.n_x == raw.n_x,
             "training matrix does not match the mesh layout")
    return norm, red, c_samples, layout


def _sampler_config(cfg, prior):
    dt = cfg.dt if cfg.dt is not None else default_time_step(prior)
    steps = cfg.steps if cfg.steps is not None \
        else default_step_count(cfg.f0, dt)
    return IsdeConfig(dt=dt, m_s=steps, n_chains=cfg.chains, seed=cfg.seed,
                      f0=cfg.f0)


def _mode_learn(cfg):
    _require(cfg.target_kind is not None, "learn mode needs a [target] block")
    norm, red, c_samples, layout = _load_training(cfg)
    prior = KdePrior.from_training(red)
    evaluator = None
    if cfg.target_kind == "linear":
        comps = np.asarray(cfg.target_components, dtype=int)
        _require(comps.max() < prior.nu,
                 "target.components exceed the reduced dimension")
        spec = linear_moment_spec(prior, np.asarray(cfg.target_values), comps)
    else:
        bvp = _build_bvp(cfg)
        _require(bvp.mesh.n_y == layout.n_y and bvp.mesh.n_p == layout.n_p,
                 "mesh config does not match the training artifacts")
        rep_d = moment_report(c_samples)
        targets = HomogenizationBlocks.from_matrices(
            cfg.target_table, cfg.target_delta_exp, rep_d.mean_matrix,
            b_rho=cfg.target_b_rho)
        spec, evaluator = homogenization_spec(bvp, norm, layout, targets,
                                              rep_d.mean_matrix,
                                              rho_weight=cfg.rho_weight)
    sampler_cfg = _sampler_config(cfg, prior)
    result = solve(spec, prior, sampler_cfg, i_max=cfg.iterations,
                   alpha_relax=cfg.relax)

    out = cfg.out
    os.makedirs(out, exist_ok=True)
    result.trace.write_csv(os.path.join(out, "trace.csv"))
    write_matrix(os.path.join(out, "learned_set.mtx"),
                 result.learned_set.points)
    write_matrix(os.path.join(out, "lambda.mtx"), result.lambda_sol[:, None])
    extra = {"i_sol": result.trace.i_sol}
    if evaluator is not None:
        extra["rho0"] = evaluator.rho0
        rep_post = moment_report(_posterior_ceff(cfg, norm, layout,
                                                 result.learned_set.points))
        rho = evaluator.residues(result.learned_set.points)
        _write_moment_report(os.path.join(out, "moment_report.csv"), rep_post,
                             [("rho2_mean", float((rho**2).mean()))])
    _write_manifest(out, cfg, extra)
    return 0


def _posterior_ceff(cfg, norm, layout, etas):
    bvp = _build_bvp(cfg)
    x = norm.reconstruct(etas)
    y, kappa, mu, _ = layout.unpack(x)
    ceff = bvp.effective_matrices(y, kappa, mu)
    return 0.5 * (ceff + np.transpose(ceff, (0, 2, 1)))


def _mode_report(cfg):
    out = cfg.out
    man = _read_manifest(out)
    _require(man.get("config_sha256") == config_fingerprint(cfg),
             "artifact manifest does not match this config (fingerprint)")
    _require(int(man.get("seed", -1)) == cfg.seed,
             "artifact manifest does not match this config (seed)")

    rows = list(csv.DictReader(open(os.path.join(out, "trace.csv"))))
    _require(rows, "trace.csv is empty")

    if cfg.target_kind == "linear":
        target = np.asarray(cfg.target_values, dtype=float)
        names = ["moment"]
        slices = [slice(0, target.size)]
        weights = [1.0]
        include = [True]
    else:
        norm, red, c_samples, layout = _load_training(cfg)
        rep_d = moment_report(c_samples)
        targets = HomogenizationBlocks.from_matrices(
            cfg.target_table, cfg.target_delta_exp, rep_d.mean_matrix,
            b_rho=cfg.target_b_rho)
        target = targets.target_vector()
        names = ["residue", "mean_matrix", "dispersion"]
        slices = [slice(0, 1), slice(1, 22), slice(22, 23)]
        weights = [cfg.rho_weight, 1.0, 1.0]
        include = [False, True, True]

    moment_cols = [k for k in rows[0] if k.startswith("moment_")]
    moment_cols.sort(key=lambda k: int(k.split("_")[1]))
    errs = []
    per_block = []
    for row in rows:
        mom = np.array([float(row[c]) for c in moment_cols])
        bl = np.array([np.linalg.norm(target[sl] - mom[sl])
                       / np.linalg.norm(target[sl]) for sl in slices])
        per_block.append(bl)
    for bl in per_block:
        total = sum(w * (bl[k] / per_block[0][k]) ** 2
                    for k, w in enumerate(weights) if include[k])
        errs.append(float(np.sqrt(total)))
    i_sol = int(np.argmin(errs)) + 1
    _require(i_sol == int(man.get("i_sol", -1)),
             f"recomputed i_sol {i_sol} != stored {man.get('i_sol')}")

    with open(os.path.join(out, "report.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "err"] + [f"err_{n}" for n in names])
        for i, (err, bl) in enumerate(zip(errs, per_block), start=1):
            writer.writerow([i, f"{err:.17g}"] + [f"{v:.17g}" for v in bl])
    print(f"report: {len(errs)} iterations, i_sol={i_sol}, "
          f"err(i_sol)={errs[i_sol - 1]:.6g}")

    if cfg.target_kind == "homogenization":
        etas = read_matrix(os.path.join(out, "learned_set.mtx"))
        rep_post = moment_report(_posterior_ceff(cfg, norm, layout, etas))
        x = norm.reconstruct(etas)
        y, kappa, mu, _ = layout.unpack(x)
        bvp = _build_bvp(cfg)
        rho = bvp.residual_norms(y, kappa, mu) / float(man["rho0"])
        _write_moment_report(os.path.join(out, "report_moments.csv"),
                             rep_post,
                             [("rho2_mean", float((rho**2).mean()))])
        print(f"posterior: mean-matrix norm {rep_post.mu:.6g}, "
              f"dispersion(ML) {rep_post.delta_eff_ml:.4f}, "
              f"E(rho^2) {float((rho**2).mean()):.4f}")
    return 0


def run(cfg):
    """Dispatch one validated config; returns a process exit status."""
    handler = {"generate-training": _mode_generate_training,
               "learn": _mode_learn,
               "report": _mode_report}[cfg.mode]
    return handler(cfg)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="conlearn",
        description="Constrained learned-set inference runs")
    parser.add_argument("--config", required=True, help="config file path")
    parser.add_argument("--mode", choices=_MODES, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config,
                           overrides={"mode": args.mode, "seed": args.seed,
                                      "workers": args.workers,
                                      "out": args.out})
        return run(cfg)
    except ConlearnError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
