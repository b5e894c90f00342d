"""Command-line front-end.

    depca generate     --config cfg.toml --output-dir out
    depca estimate     --input out/X.csv --dims 10 --restarts 10
    depca evaluate     --input-dir out
    depca approx-check --m12 0.95 --T 100000 --bins 100
    depca mds          --input out/M_hat.csv
    depca pipeline     --config block.toml --seed 7

Settings come from built-in defaults, then the TOML config, then flags.
Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 I/O error.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import fields

import numpy as np
import scipy

try:
    import tomllib as tomli
except ImportError:  # Python < 3.11
    import tomli

import depca
from depca import evaluation as ev
from depca.errors import (ConfigError, DepcaError, DimensionError, GridError, MatrixFileError,
                          ParameterError)
from depca.estimator import EstimatorOptions, estimate
from depca.genmodel import GenerationSpec, generate_dataset, sample_hierarchical
from depca.matrixio import FORMATS, read_matrix, write_matrix
from depca.preprocess import WhiteningTransform, apply_whitening, fit_whitening
from depca.qpsolve import solve_dependency_qp
from depca.scorematch import assemble_quadratic

log = logging.getLogger("depca")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
MODES = ("generate", "estimate", "evaluate", "approx-check", "mds", "pipeline")
STAGES = ("generate", "estimate", "approx")

DEFAULTS = {
    "seed": 0,
    "generate": {"scenario": "block", "d": 10, "T": 20000, "block": [0, 1, 2],
                 "diag_shape": 2.0, "diag_scale": 1.0, "off_shape": 2.0, "off_scale": 1.0 / 3.0,
                 "pattern": []},
    "preprocess": {"dims": None},
    "estimate": {},
    "evaluate": {"bins": 100, "quantiles": [0.001, 0.999], "lambda_grid": []},
    "approx": {"m12": [0.0, 0.25, 0.5, 0.75, 0.95], "T": 100000},
    "io": {"format": "csv", "output_dir": "out", "input": None, "input_dir": None,
           "allow_nan": False},
}
_EST_FIELDS = {f.name for f in fields(EstimatorOptions)} - {"seed"}


# ---------------------------------------------------------------- config

def _merge(base, extra, where=""):
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in extra.items():
        key = f"{where}{k}"
        if k not in base and not (where == "estimate." and k in _EST_FIELDS):
            raise ConfigError(f"unknown config field '{key}'")
        if isinstance(base.get(k), dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config field '{key}' must be a table")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        # the decoder message carries the line and column
        raise ConfigError(f"{path}: {exc}") from None
    return _merge(DEFAULTS, raw)


def resolve_config(args):
    cfg = load_config(args.config) if args.config else _merge(DEFAULTS, {})
    flag_map = {
        "seed": ("seed",), "threads": ("estimate", "threads"), "dims": ("preprocess", "dims"),
        "restarts": ("estimate", "restarts"), "lam": ("estimate", "lambda_sparsity"),
        "bins": ("evaluate", "bins"), "output_dir": ("io", "output_dir"), "format": ("io", "format"),
        "input": ("io", "input"), "input_dir": ("io", "input_dir"), "m12": ("approx", "m12"),
        "T": ("approx", "T"),
    }
    for attr, keys in flag_map.items():
        val = getattr(args, attr, None)
        if val is None:
            continue
        node = cfg
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = val
    if getattr(args, "allow_nan", False):
        cfg["io"]["allow_nan"] = True
    _validate(cfg)
    return cfg


def _validate(cfg):
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("field 'seed' must be a non-negative integer")
    if cfg["io"]["format"] not in FORMATS:
        raise ConfigError(f"field 'io.format' must be one of {FORMATS}")
    g = cfg["generate"]
    if g["scenario"] not in ("block", "independent", "custom"):
        raise ConfigError("field 'generate.scenario' must be block, independent or custom")
    b = cfg["evaluate"]["bins"]
    if not isinstance(b, int) or b < 2:
        raise ConfigError("field 'evaluate.bins' must be an integer >= 2")
    try:
        generation_spec(cfg)
        estimator_options(cfg).validate()
    except (ParameterError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def config_hash(cfg):
    """Hash of the resolved settings; where the outputs go is not part of it."""
    cfg = dict(cfg, io={k: v for k, v in cfg["io"].items() if k != "output_dir"})
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def stage_seed(seed, stage):
    """Independent per-stage sub-seed derived from the top-level seed."""
    child = np.random.SeedSequence(seed).spawn(len(STAGES))[STAGES.index(stage)]
    return int(child.generate_state(1, dtype=np.uint64)[0])


def generation_spec(cfg):
    g = cfg["generate"]
    d, T = int(g["d"]), int(g["T"])
    if g["scenario"] == "independent":
        return GenerationSpec(d=d, T=T, diag_shape=g["diag_shape"], diag_scale=g["diag_scale"])
    if g["scenario"] == "block":
        blk = list(g["block"])
        pattern = [(i, j) for a, i in enumerate(blk) for j in blk[a + 1:]]
    else:
        pattern = [tuple(p) for p in g["pattern"]]
    return GenerationSpec(d=d, T=T, diag_shape=g["diag_shape"], diag_scale=g["diag_scale"],
                          off_shape=g["off_shape"], off_scale=g["off_scale"], pattern=pattern)


def estimator_options(cfg):
    kw = dict(cfg["estimate"])
    return EstimatorOptions(seed=stage_seed(cfg["seed"], "estimate"), **kw)


# ---------------------------------------------------------------- output

class Run:
    """Output directory bookkeeping plus the manifest."""

    def __init__(self, cfg, mode):
        self.cfg = cfg
        self.mode = mode
        self.dir = cfg["io"]["output_dir"]
        self.fmt = cfg["io"]["format"]
        self.files = []
        self.timings = {}
        os.makedirs(self.dir, exist_ok=True)

    def path(self, name, ext=None):
        return os.path.join(self.dir, f"{name}.{ext or self.fmt}")

    def matrix(self, name, a):
        p = self.path(name)
        write_matrix(p, a, self.fmt, name)
        self.files.append(os.path.basename(p))

    def table(self, name, header, rows):
        p = self.path(name, "csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
        self.files.append(os.path.basename(p))

    def timed(self, stage, fn, *a):
        t0 = time.perf_counter()
        out = fn(*a)
        self.timings[stage] = round(time.perf_counter() - t0, 6)
        return out

    def manifest(self):
        doc = {
            "mode": self.mode,
            "config_sha256": config_hash(self.cfg),
            "seed": self.cfg["seed"],
            "versions": {"depca": depca.__version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "files": sorted(self.files),
            "wall_clock_seconds": self.timings,
        }
        with open(os.path.join(self.dir, "manifest.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _find(directory, name):
    for ext in FORMATS:
        p = os.path.join(directory, f"{name}.{ext}")
        if os.path.exists(p):
            return p
    raise MatrixFileError(f"no {name}.csv or {name}.bin in {directory}")


# ---------------------------------------------------------------- stages

def stage_generate(run):
    spec = generation_spec(run.cfg)
    ds = generate_dataset(spec, np.random.default_rng(stage_seed(run.cfg["seed"], "generate")))
    run.matrix("X", ds.X)
    run.matrix("A", ds.A)
    run.matrix("S", ds.S)
    return ds


def stage_estimate(run, X):
    dims = run.cfg["preprocess"]["dims"]
    t = fit_whitening(X, dims)
    Z = apply_whitening(t, X)
    res = estimate(Z, estimator_options(run.cfg))
    run.matrix("whitening_mean", t.mean[None, :])
    run.matrix("whitening_projection", t.projection)
    run.matrix("W_hat", res.W_hat)
    run.matrix("M_hat", res.M_hat)
    run.matrix("M_norm", ev.normalize_dependency(res.M_hat))
    run.matrix("W_ica", res.W_ica)
    run.matrix("M_ica", res.M_ica)
    run.table("trace", ["iteration", "objective"],
              [(k, float(v)) for k, v in enumerate(res.objective_trace)])
    run.table("restarts", ["restart", "final_objective"],
              [(k, float(v)) for k, v in enumerate(res.restart_objectives)])
    lam_grid = run.cfg["evaluate"]["lambda_grid"]
    if lam_grid:
        q = assemble_quadratic(Z, res.W_hat)
        rows = []
        for lam in lam_grid:
            sol = solve_dependency_qp(q, res.W_hat.shape[0], float(lam))
            rows.append((float(lam), float(sol.m.sum()), float(sol.kkt_residual), sol.status))
        run.table("lambda_path", ["lambda", "sum_m", "kkt_residual", "status"], rows)
    return t, Z, res


def stage_evaluate(run, A, t, W_hat, M_hat, W_ica=None, M_ica=None, Z=None, S=None):
    spec = generation_spec(run.cfg)
    ref = ev.reference_matrix(spec) if spec.d == W_hat.shape[0] else None
    rows = []
    for label, W, M in (("full", W_hat, M_hat), ("ica", W_ica, M_ica)):
        if W is None:
            continue
        P = ev.performance_matrix(W, A, t.projection)
        mt = ev.match_permutation(P)
        Mn = ev.normalize_dependency(M)
        rows += [(label, "amari_index", ev.amari_index(P)),
                 (label, "off_diagonal_mass", ev.off_diagonal_mass(Mn))]
        if ref is not None:
            rows.append((label, "error_M", ev.error_M(M, ref, mt)))
        if label == "full":
            run.matrix("P", P)
            run.matrix("M_norm_aligned", mt.align_dependency(Mn))
            if Z is not None:
                lin, en = ev.correlation_matrices(mt.align_sources(Z @ W.T))
                run.matrix("corr_linear_estimated", lin)
                run.matrix("corr_energy_estimated", en)
    if S is not None:
        lin, en = ev.correlation_matrices(S)
        run.matrix("corr_linear", lin)
        run.matrix("corr_energy", en)
    if ref is not None:
        run.matrix("M_reference", ref)
    run.table("metrics", ["method", "metric", "value"], [(a, b, float(c)) for a, b, c in rows])
    return rows


def stage_mds(run, M_hat):
    emb = ev.mds_embedding(M_hat)
    run.matrix("mds_distance", emb.distance)
    run.matrix("mds_coords", emb.coords)
    return emb


def stage_approx(run):
    a = run.cfg["approx"]
    bins = run.cfg["evaluate"]["bins"]
    q = tuple(run.cfg["evaluate"]["quantiles"])
    m12s = a["m12"] if isinstance(a["m12"], (list, tuple)) else [a["m12"]]
    base = stage_seed(run.cfg["seed"], "approx")
    rows = []
    for k, m12 in enumerate(m12s):
        M = np.array([[1.0, m12], [m12, 1.0]])
        spec = GenerationSpec.from_dependency(M, int(a["T"]))
        # raw draws: standardizing would move the data off the model's scale
        S = sample_hierarchical(spec, np.random.default_rng([base, k]))
        r = ev.density_comparison(S, M, bins, q)
        for name, meas in [("model", r.approx), *sorted(r.baselines.items())]:
            rows.append((float(m12), name, meas.ang, meas.kl, meas.sq))
    run.table("approx", ["m12", "density", "ang", "kl", "sq"], rows)
    return rows


# ---------------------------------------------------------------- modes

def _need(cfg, key):
    v = cfg["io"][key]
    if not v:
        raise ConfigError(f"this mode needs --{key.replace('_', '-')} (or io.{key} in the config)")
    return v


def run_mode(mode, cfg):
    run = Run(cfg, mode)
    allow_nan = cfg["io"]["allow_nan"]
    if mode == "generate":
        run.timed("generate", stage_generate, run)
    elif mode == "estimate":
        X = read_matrix(_need(cfg, "input"), allow_nan)
        run.timed("estimate", stage_estimate, run, X)
    elif mode == "evaluate":
        d = _need(cfg, "input_dir")
        rd = lambda n: read_matrix(_find(d, n), allow_nan)  # noqa: E731
        proj = rd("whitening_projection")
        t = WhiteningTransform(mean=rd("whitening_mean").ravel(), projection=proj,
                               eigenvalues=np.ones(proj.shape[1]), eigenvectors=np.eye(proj.shape[1]))
        opt = {}
        for n in ("W_ica", "M_ica"):
            try:
                opt[n] = rd(n)
            except MatrixFileError:
                opt[n] = None
        run.timed("evaluate", stage_evaluate, run, rd("A"), t, rd("W_hat"), rd("M_hat"),
                  opt["W_ica"], opt["M_ica"])
    elif mode == "approx-check":
        run.timed("approx", stage_approx, run)
    elif mode == "mds":
        run.timed("mds", stage_mds, run, read_matrix(_need(cfg, "input"), allow_nan))
    elif mode == "pipeline":
        ds = run.timed("generate", stage_generate, run)
        t, Z, res = run.timed("estimate", stage_estimate, run, ds.X)
        run.timed("evaluate", stage_evaluate, run, ds.A, t, res.W_hat, res.M_hat,
                  res.W_ica, res.M_ica, Z, ds.S)
        run.timed("mds", stage_mds, run, res.M_hat)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    run.manifest()
    return run


def build_parser():
    p = argparse.ArgumentParser(prog="depca", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        s = sub.add_parser(mode)
        s.add_argument("--config")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--dims", type=int)
        s.add_argument("--restarts", type=int)
        s.add_argument("--lambda", dest="lam", type=float)
        s.add_argument("--bins", type=int)
        s.add_argument("--output-dir")
        s.add_argument("--format", choices=FORMATS)
        s.add_argument("--allow-nan", action="store_true")
        s.add_argument("--input")
        s.add_argument("--input-dir")
        s.add_argument("--m12", type=float, nargs="+")
        s.add_argument("--T", type=int)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run_mode(args.mode, cfg)
    except (ConfigError, ParameterError, DimensionError, GridError) as exc:
        print(f"depca: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"depca: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DepcaError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"depca: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
