"""Command-line harness: ``simulate``, ``decompose`` and ``diagnose``.

Exit codes: 0 success, 2 configuration error, 3 a simulation cell failed,
4 rank-deficient moments, 5 model violates the separation assumption.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .env import GeneratorSpec, LatentModel, generate_instance
from .features import (FeatureEstimate, RankDeficientError, align_columns,
                       align_columns_assignment, assumption_constants,
                       estimate_features_from, hexagon_branches, recovery_bound)
from .linalg import EigenSolverError
from .moments import MomentEstimates, population_moments, read_records_csv
from .als import AlsConfig
from .oful import OfulParams, alpha_lower_bound, alpha_of, critical_radius
from .policies import PolicyKind, PolicySpec, Schedule, run_policy
from .rtp import RtpConfig, RtpDegenerateError

log = logging.getLogger("lowrank_bandit")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CELL = 3
EXIT_RANK = 4
EXIT_ASSUMPTION = 5


class ConfigError(ValueError):
    pass


# -- configuration --------------------------------------------------------------

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

POLICY_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": [k.value for k in PolicyKind]},
        "name": {"type": "string"},
        "schedule": {"enum": ["Sqrt", "CubeRoot", "HexagonAware", "Constant"]},
        "gamma": _NUM,
        "hexagon": _NUM,
        "warmup": _POS_INT,
        "literal_gate": {"type": "boolean"},
        "rebuild_on_refresh": {"type": "boolean"},
        "ucb_scale": _NUM,
        "oful": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lam": _NUM, "R_theta": _NUM, "R_noise": _NUM, "delta": _NUM,
                "mode": {"enum": ["Regularized", "Unregularized"]},
                "general_radius": {"type": "boolean"},
                "R_X": {"type": ["number", "null"]},
                "lambda0": {"type": ["number", "null"]},
            },
        },
        "rtp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "factors": _POS_INT, "restarts": _POS_INT, "power_iters": _POS_INT,
                "seed": {"type": "integer", "minimum": 0}, "convergence_tol": _NUM,
            },
        },
        "als": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rank": _POS_INT, "iterations": {"type": "integer", "minimum": 0},
                "ridge": _NUM, "init_scale": _NUM,
            },
        },
    },
}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "path": {"type": "string"},
        "A": _POS_INT, "B": _POS_INT, "C": _POS_INT,
        "ell": {"type": "integer", "minimum": 3},
        "R_noise": _NUM,
        "seed": {"type": "integer", "minimum": 0},
        "u_low": _NUM, "u_high": _NUM, "dirichlet_alpha": _NUM, "v_min": _NUM,
        "beta": {"type": "array", "items": _NUM},
    },
    "oneOf": [{"required": ["path"]}, {"required": ["A", "B", "C"]}],
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model", "policies", "N"],
    "additionalProperties": False,
    "properties": {
        "N": _POS_INT,
        "seeds": {"type": "array", "minItems": 1,
                  "items": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1}},
        "output_dir": {"type": "string"},
        "parallelism": {"type": "integer", "minimum": 0},
        "summary_stride": _POS_INT,
        "model": MODEL_SCHEMA,
        "policies": {"type": "array", "minItems": 1, "items": POLICY_SCHEMA},
    },
}


def policy_from_dict(d: dict, C: int) -> PolicySpec:
    rtp = dict(d.get("rtp", {}))
    rtp.setdefault("factors", C)
    als = dict(d.get("als", {}))
    als.setdefault("rank", C)
    if d.get("schedule") == "HexagonAware" and d.get("hexagon") is None:
        raise ConfigError("HexagonAware schedule needs a hexagon value")
    return PolicySpec(
        kind=PolicyKind(d["kind"]),
        name=d.get("name", ""),
        schedule=Schedule(d.get("schedule", "Sqrt"), d.get("gamma"), d.get("hexagon")),
        oful=OfulParams(**d.get("oful", {})),
        rtp=RtpConfig(**rtp),
        als=AlsConfig(**als),
        warmup=d.get("warmup", 25),
        literal_gate=d.get("literal_gate", False),
        rebuild_on_refresh=d.get("rebuild_on_refresh", False),
        ucb_scale=d.get("ucb_scale", 1.0),
    )


def policy_to_dict(spec: PolicySpec) -> dict:
    d = {
        "kind": spec.kind.value,
        "name": spec.name,
        "schedule": spec.schedule.kind.value,
        "warmup": spec.warmup,
        "literal_gate": spec.literal_gate,
        "rebuild_on_refresh": spec.rebuild_on_refresh,
        "ucb_scale": spec.ucb_scale,
        "oful": {**asdict(spec.oful), "mode": spec.oful.mode.value},
        "rtp": asdict(spec.rtp),
        "als": asdict(spec.als),
    }
    if spec.schedule.gamma is not None:
        d["gamma"] = spec.schedule.gamma
    if spec.schedule.hexagon is not None:
        d["hexagon"] = spec.schedule.hexagon
    return d


@dataclass
class ExperimentConfig:
    model: dict
    policies: list[PolicySpec]
    N: int
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "out"
    parallelism: int = 0  # 0 = all available cores
    summary_stride: int = 1

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
        if errors:
            e = errors[0]
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"field {where}: {e.message}")
        model = dict(raw["model"])
        if "path" in model and base_dir is not None and not os.path.isabs(model["path"]):
            model["path"] = str(base_dir / model["path"])
        try:
            C = _model_C(model)
            policies = [policy_from_dict(p, C) for p in raw["policies"]]
        except (ValueError, TypeError, OSError, KeyError) as exc:
            raise ConfigError(f"field policies/model: {exc}") from exc
        names = [p.name for p in policies]
        if len(set(_slug(n) for n in names)) != len(names):
            raise ConfigError(f"field policies: names must be unique, got {names}")
        return cls(model, policies, raw["N"], list(raw.get("seeds", [0])),
                   raw.get("output_dir", "out"), raw.get("parallelism", 0),
                   raw.get("summary_stride", 1))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "policies": [policy_to_dict(p) for p in self.policies],
            "N": self.N,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "parallelism": self.parallelism,
            "summary_stride": self.summary_stride,
        }


def _model_C(model: dict) -> int:
    if "path" in model:
        return load_model(model["path"]).C
    return int(model["C"])


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: {exc.msg}") from exc
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(exc)) from exc
    return ExperimentConfig.from_dict(raw, path.parent)


def preset_path(name: str) -> Path:
    p = resources.files("lowrank_bandit") / "presets" / f"{name}.toml"
    if not p.is_file():
        raise ConfigError(f"unknown preset {name!r}")
    return Path(str(p))


def load_model(path: str | Path) -> LatentModel:
    return LatentModel.from_json(Path(path).read_text())


def build_model(model: dict, seed: int) -> LatentModel:
    """The model of one cell: a file, a fixed-seed draw, or one draw per run seed."""
    if "path" in model:
        return load_model(model["path"])
    gen = GeneratorSpec(
        u_low=model.get("u_low", 0.0), u_high=model.get("u_high", 1.0),
        dirichlet_alpha=model.get("dirichlet_alpha", 1.0), v_min=model.get("v_min", 0.0),
        beta=model.get("beta"), R_noise=model.get("R_noise", 0.1), ell=model.get("ell", 3),
    )
    return generate_instance(model["A"], model["B"], model["C"], gen,
                             seed=model.get("seed", seed))


# -- simulate ---------------------------------------------------------------------

def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "policy"


def cell_stem(spec: PolicySpec, seed: int) -> str:
    return f"{_slug(spec.name)}__seed{seed}"


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return f"v{__version__}"


def format_curve(curve: np.ndarray) -> str:
    lines = ["t,cumulative_regret"]
    lines += [f"{t},{v:.17g}" for t, v in enumerate(curve.tolist(), start=1)]
    return "\n".join(lines) + "\n"


def read_curve(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["t", "cumulative_regret"]:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return np.array([float(r[1]) for r in rows[1:]])


def run_cell(model_cfg: dict, spec: PolicySpec, N: int, seed: int, out_dir: str,
             describe: str) -> tuple[str, int, str | None]:
    """Run one (policy, seed) cell and write its CSV and sidecar."""
    stem = cell_stem(spec, seed)
    try:
        model = build_model(model_cfg, seed)
        result = run_policy(model, N, spec, seed)
        out = Path(out_dir)
        (out / f"{stem}.csv").write_text(format_curve(result.cumulative_regret), newline="\n")
        meta = {
            "policy": policy_to_dict(spec),
            "seed": seed,
            "N": N,
            "model": model_cfg,
            "model_hash": model.digest(),
            "gate_polarity": "explore w.p. 1-gamma (literal)" if spec.literal_gate
            else "explore w.p. gamma",
            "git_describe": describe,
            "feature_refreshes": len(result.feature_snapshots),
        }
        (out / f"{stem}.json").write_text(json.dumps(meta, indent=2) + "\n", newline="\n")
        return spec.name, seed, None
    except Exception as exc:  # a failed cell must not take the sweep down
        return spec.name, seed, f"{type(exc).__name__}: {exc}"


def write_summary(cfg: ExperimentConfig, out: Path) -> Path:
    path = out / "summary.csv"
    lines = ["policy,t,mean_regret,std_regret"]
    for spec in cfg.policies:
        curves = []
        for seed in cfg.seeds:
            f = out / f"{cell_stem(spec, seed)}.csv"
            if f.exists():
                curves.append(read_curve(f))
        if not curves:
            continue
        Y = np.vstack(curves)
        mean = Y.mean(axis=0)
        std = Y.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros_like(mean)
        idx = np.arange(cfg.summary_stride - 1, Y.shape[1], cfg.summary_stride)
        if idx.size == 0 or idx[-1] != Y.shape[1] - 1:
            idx = np.append(idx, Y.shape[1] - 1)
        for i in idx:
            lines.append(f"{spec.name},{i + 1},{mean[i]:.17g},{std[i]:.17g}")
    path.write_text("\n".join(lines) + "\n", newline="\n")
    return path


def final_table(summary_path: Path) -> list[tuple[str, float, float]]:
    last: dict[str, tuple[float, float]] = {}
    with open(summary_path, newline="") as fh:
        for row in csv.DictReader(fh):
            last[row["policy"]] = (float(row["mean_regret"]), float(row["std_regret"]))
    return [(k, v[0], v[1]) for k, v in last.items()]


def cmd_simulate(args) -> int:
    try:
        cfg = load_config(preset_path(args.preset) if args.preset else args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seeds:
        try:
            cfg.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            print(f"config error: --seeds: cannot parse {args.seeds!r}", file=sys.stderr)
            return EXIT_CONFIG
        if not cfg.seeds or min(cfg.seeds) < 0:
            print("config error: --seeds must list nonnegative integers", file=sys.stderr)
            return EXIT_CONFIG
    if args.N is not None:
        if args.N < 1:
            print("config error: --N must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        cfg.N = args.N
    if args.out:
        cfg.output_dir = args.out
    if args.parallelism is not None:
        cfg.parallelism = args.parallelism
    if args.literal_gate:
        cfg.policies = [replace(p, literal_gate=True) for p in cfg.policies]
    if args.rebuild_on_refresh:
        cfg.policies = [replace(p, rebuild_on_refresh=True) for p in cfg.policies]

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", newline="\n")
    if any(p.literal_gate for p in cfg.policies):
        log.warning("literal gate polarity: exploring with probability 1 - gamma_n")

    describe = _git_describe()
    cells = [(spec, seed) for spec in cfg.policies for seed in cfg.seeds]
    workers = cfg.parallelism or os.cpu_count() or 1
    workers = max(1, min(workers, len(cells)))
    failures = []

    def report(name, seed, err, k):
        if err is None:
            log.info("[%d/%d] %s seed %d done", k, len(cells), name, seed)
        else:
            failures.append((name, seed, err))
            log.error("[%d/%d] %s seed %d failed: %s", k, len(cells), name, seed, err)

    args_of = [(cfg.model, spec, cfg.N, seed, str(out), describe) for spec, seed in cells]
    if workers == 1:
        for k, a in enumerate(args_of, start=1):
            report(*run_cell(*a), k)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(run_cell, *a) for a in args_of]
            for k, fut in enumerate(futures, start=1):
                report(*fut.result(), k)

    summary = write_summary(cfg, out)
    for name, mean, std in final_table(summary):
        se = std / math.sqrt(len(cfg.seeds))
        print(f"{name}: final mean regret {mean:.4f} (std {std:.4f}, se {se:.4f})")
    for name, seed, err in failures:
        print(f"cell {name} seed {seed} failed: {err}", file=sys.stderr)
    return EXIT_CELL if failures else EXIT_OK


# -- decompose --------------------------------------------------------------------

def moments_to_json(m: MomentEstimates) -> str:
    return json.dumps({"A": m.A, "n": m.n, "gamma_history": m.gamma_history,
                       "m2": m.m2.tolist(), "m3": m.m3.tolist()})


def _load_decompose_input(path: Path, A: int | None):
    """Returns ``(m2, m3, n, gammas, model)``; ``model`` only for model files."""
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            records = read_records_csv(fh)
        if A is None:
            raise ConfigError("--A is required for an interaction-record CSV")
        moments = MomentEstimates.empty(A)
        sessions: dict[int, list] = {}
        for r in records:
            sessions.setdefault(r.n, []).append(r)
        for n in sorted(sessions):
            moments.ingest_session(sessions[n])
        return moments.m2, moments.m3, moments.n, moments.gamma_history, None
    d = json.loads(path.read_text())
    if "U" in d:
        model = LatentModel.from_dict(d)
        m2, m3 = population_moments(model.U, model.v_beta)
        return m2, m3, 0, None, model
    if "m2" in d and "m3" in d:
        return (np.array(d["m2"], dtype=float), np.array(d["m3"], dtype=float),
                int(d.get("n", 0)), d.get("gamma_history"), None)
    raise ConfigError(f"{path}: neither a model file (U, V, beta) nor a moments file (m2, m3)")


def _align_report(model: LatentModel, fe: FeatureEstimate) -> dict:
    if model.C <= 8:
        perm, signs, err = align_columns(model.U, fe.u_bar)
    else:
        perm, signs, err = align_columns_assignment(model.U, fe.u_bar)
    cols = [float(np.linalg.norm(model.U[:, c] - signs[c] * fe.u_bar[:, perm[c]]))
            for c in range(model.C)]
    return {"perm": list(perm), "signs": signs.tolist(), "column_errors": cols,
            "max_column_error": err}


def cmd_decompose(args) -> int:
    try:
        m2, m3, n, gammas, model = _load_decompose_input(Path(args.input), args.A)
        if args.model:
            model = load_model(args.model)
    except (ConfigError, OSError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    C = args.C if args.C is not None else (model.C if model is not None else None)
    if C is None:
        print("input error: --C is required without a model", file=sys.stderr)
        return EXIT_CONFIG
    cfg = RtpConfig(C, args.restarts, args.power_iters, args.rtp_seed)
    try:
        fe = estimate_features_from(m2, m3, C, cfg, n)
    except (RankDeficientError, RtpDegenerateError, EigenSolverError) as exc:
        print(f"rank-deficient moments: {exc}", file=sys.stderr)
        return EXIT_RANK
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = fe.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", newline="\n")
    else:
        print(text)
    if model is not None and model.C == C:
        rep = _align_report(model, fe)
        print(f"max_column_error: {rep['max_column_error']:.6e}")
        for c, e in enumerate(rep["column_errors"]):
            print(f"  column {c} -> estimate {rep['perm'][c]} "
                  f"(sign {rep['signs'][c]:+.0f}): {e:.6e}")
    if args.report_bounds:
        return _report_bounds(args, model, C, n, gammas)
    return EXIT_OK


def _report_bounds(args, model: LatentModel | None, C: int, n: int, gammas) -> int:
    if args.constants:
        from .features import ModelConstants
        try:
            vals = [float(x) for x in args.constants.split(",")]
            mc = ModelConstants(*vals)
        except (ValueError, TypeError) as exc:
            print(f"input error: --constants: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    elif model is not None:
        chk = assumption_constants(model.U, model.V, model.beta)
        if chk.degenerate:
            print(f"assumption violated: degenerate {', '.join(chk.degenerate)}",
                  file=sys.stderr)
            return EXIT_ASSUMPTION
        mc = chk.constants(args.C1)
    else:
        print("input error: --report-bounds needs a model or --constants", file=sys.stderr)
        return EXIT_CONFIG
    A = model.A if model is not None else args.A
    if A is None:
        print("input error: --A is required", file=sys.stderr)
        return EXIT_CONFIG
    n_b = args.n or n or 10_000
    g = np.full(n_b, args.gamma)
    print(f"recovery_bound: {recovery_bound(mc, A, C, n_b, g, args.delta):.6e}"
          f"  (n={n_b}, gamma={args.gamma}, delta={args.delta})")
    if model is None:
        print("hexagon: needs a model (user mixtures and gaps)")
        return EXIT_OK
    b = args.user
    col = model.means[:, b]
    srt = np.sort(col)
    g_b = float(srt[-1] - srt[-2]) if model.A > 1 else math.inf
    alpha = _alpha(model.U)[0]
    b1, b2 = hexagon_branches(mc, A, model.B, C, args.delta, model.V[b], g_b, alpha)
    print(f"hexagon_branch1: {b1:.6e}")
    print(f"hexagon_branch2: {b2:.6e}")
    print(f"hexagon: {max(b1, b2):.6e}  (user {b})")
    return EXIT_OK


# -- diagnose ---------------------------------------------------------------------

def _alpha(U: np.ndarray) -> tuple[float, bool]:
    """``(alpha, exact)``: exact enumeration up to C = 4, sampled lower bound above."""
    if U.shape[1] <= 4:
        return alpha_of(U), True
    rng = np.random.Generator(np.random.Philox(0))
    return alpha_lower_bound(U, 200_000, rng), False


def diagnose_model(model: LatentModel, delta: float, users=None, C1: float = 1.0) -> dict:
    chk = assumption_constants(model.U, model.V, model.beta)
    rep = {
        "A": model.A, "B": model.B, "C": model.C,
        "sigmas": chk.sigmas.tolist(),
        "sigma_min": chk.sigma_min, "sigma_max": chk.sigma_max,
        "Gamma": chk.Gamma, "v_min": chk.v_min, "u_max": chk.u_max,
        "degenerate": list(chk.degenerate),
    }
    if chk.degenerate:
        return rep
    from .features import aleph, diamond
    mc = chk.constants(C1)
    alpha, exact = _alpha(model.U)
    rep.update(aleph=aleph(mc), diamond=diamond(mc, model.A, model.C),
               alpha_star=alpha, alpha_exact=exact, users=[])
    for b in (range(model.B) if users is None else users):
        col = model.means[:, b]
        srt = np.sort(col)
        g_b = float(srt[-1] - srt[-2]) if model.A > 1 else math.inf
        entry = {"user": b, "g_b": g_b}
        try:
            entry["critical_radius"] = critical_radius(model.U, model.V[b], alpha)
        except ValueError:
            entry["critical_radius"] = None
        if g_b > 0:
            b1, b2 = hexagon_branches(mc, model.A, model.B, model.C, delta, model.V[b],
                                      g_b, alpha)
            entry.update(hexagon_branch1=b1, hexagon_branch2=b2, hexagon=max(b1, b2))
        rep["users"].append(entry)
    return rep


def _fmt(x) -> str:
    if x is None:
        return "none (tied optimum)"
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.6e}"
    return str(x)


def cmd_diagnose(args) -> int:
    try:
        model = load_model(args.model)
    except (OSError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.user is not None and not 0 <= args.user < model.B:
        print(f"input error: user {args.user} out of range", file=sys.stderr)
        return EXIT_CONFIG
    users = None if args.user is None else [args.user]
    rep = diagnose_model(model, args.delta, users, args.C1)
    if args.json:
        print(json.dumps(rep, indent=2, default=lambda v: None))
    else:
        for key in ("A", "B", "C", "sigma_min", "sigma_max", "Gamma", "v_min", "u_max"):
            print(f"{key}: {_fmt(rep[key])}")
        print("sigmas: " + " ".join(_fmt(s) for s in rep["sigmas"]))
        if not rep["degenerate"]:
            print(f"aleph: {_fmt(rep['aleph'])}")
            print(f"diamond: {_fmt(rep['diamond'])}")
            tag = "" if rep["alpha_exact"] else "  (sampled lower bound)"
            print(f"alpha_star: {_fmt(rep['alpha_star'])}{tag}")
            for u in rep["users"]:
                line = (f"user {u['user']}: g_b {_fmt(u['g_b'])}"
                        f"  critical_radius {_fmt(u['critical_radius'])}")
                if "hexagon" in u:
                    line += (f"  hexagon_branch1 {_fmt(u['hexagon_branch1'])}"
                             f"  hexagon_branch2 {_fmt(u['hexagon_branch2'])}"
                             f"  hexagon {_fmt(u['hexagon'])}")
                print(line)
    if rep["degenerate"]:
        for name in rep["degenerate"]:
            print(f"assumption violated: {name} = {_fmt(rep[name])} is degenerate",
                  file=sys.stderr)
        return EXIT_ASSUMPTION
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lowrank-bandit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a (policy x seed) sweep")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="TOML or JSON experiment configuration")
    src.add_argument("--preset", help="bundled configuration (figure1, desk)")
    s.add_argument("--out", help="output directory (overrides the config)")
    s.add_argument("--seeds", help="comma-separated seeds (overrides the config)")
    s.add_argument("--N", type=int, help="number of mini-sessions (overrides the config)")
    s.add_argument("--parallelism", type=int, help="worker processes (0 = all cores)")
    s.add_argument("--literal-gate", action="store_true",
                   help="explore with probability 1 - gamma_n, as the algorithm listing reads")
    s.add_argument("--rebuild-on-refresh", action="store_true",
                   help="recompute OFUL designs from logged actions after each refresh")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("decompose", help="recover features from moments or a model")
    d.add_argument("input", help="moments JSON, model JSON, or interaction-record CSV")
    d.add_argument("--C", type=int, help="number of factors (default: the model's C)")
    d.add_argument("--A", type=int, help="number of actions (record CSV input)")
    d.add_argument("--model", help="model JSON to align against")
    d.add_argument("--out", help="write the FeatureEstimate JSON here instead of stdout")
    d.add_argument("--restarts", type=int, default=100, help="power-method restarts per factor")
    d.add_argument("--power-iters", type=int, default=100, help="iterations per restart")
    d.add_argument("--rtp-seed", type=int, default=0, help="seed for the start vectors")
    d.add_argument("--report-bounds", action="store_true",
                   help="print the recovery bound and both exploration-threshold branches")
    d.add_argument("--constants", help="v_min,sigma_min,sigma_max,Gamma,u_max[,C1]")
    d.add_argument("--delta", type=float, default=0.1, help="failure probability")
    d.add_argument("--gamma", type=float, default=1.0,
                   help="constant exploration rate assumed by the bound")
    d.add_argument("--n", type=int, help="sessions for the bound (default: the moments' n)")
    d.add_argument("--user", type=int, default=0, help="user whose threshold is reported")
    d.add_argument("--C1", type=float, default=1.0, help="power-method constant")
    d.set_defaults(func=cmd_decompose)

    g = sub.add_parser("diagnose", help="model constants, alpha, gaps and thresholds")
    g.add_argument("model", help="model JSON")
    g.add_argument("--user", type=int, help="only this user (default: all)")
    g.add_argument("--delta", type=float, default=0.1, help="failure probability")
    g.add_argument("--C1", type=float, default=1.0, help="power-method constant")
    g.add_argument("--json", action="store_true", help="machine-readable output")
    g.set_defaults(func=cmd_diagnose)
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("LBL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
