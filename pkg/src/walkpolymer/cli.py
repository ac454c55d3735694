"""Command-line entry point: strict configs, dispatch, reports and manifests.

``walkpolymer <command> --config cfg.json --seed N --out DIR [--threads N]``

The config file holds a JSON object with optional keys ``command``,
``params``, ``seed``, ``output_dir`` and ``threads``; flags take precedence.
Exit status: 0 pass, 2 experiment fail, 1 error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import platform
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, continuum, correlations, environment, harness, lattice_kernels, polymer
from . import rng as rngmod
from .errors import CapabilityError, ConfigError, DomainError, NumericalError, SnapshotError
from .harness import FAIL, INCONCLUSIVE, PASS, ExperimentReport
from .paths import sample_paths
from .testfunctions import standard_bump, unit_bump, zero_function

COMMANDS = ("env", "correlations", "partition", "spde", "heat-kernel-check", "noise", "norms", "tail",
            "converge")
OUT_ENV = "WALKPOLYMER_OUT"
DEFAULT_OUT = "walkpolymer_out"

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

# ---------------------------------------------------------------- schemas

_POS = {"type": "number", "exclusiveMinimum": 0}
_NUM = {"type": "number"}
_INT1 = {"type": "integer", "minimum": 1}
_INT0 = {"type": "integer", "minimum": 0}
_EPS = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
_EPS_LIST = {"type": "array", "items": _EPS, "minItems": 1}
_POINT = {"type": "array", "prefixItems": [_NUM, _NUM], "items": False, "minItems": 2, "maxItems": 2}
_LATTICE_POINT = {"type": "array", "items": False, "prefixItems": [{"type": "number", "minimum": 0}, {"type": "integer"}],
                  "minItems": 2, "maxItems": 2}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


def _p(schema: dict, default=None) -> dict:
    out = dict(schema)
    if default is not None:
        out["default"] = default
    return out


GRID_SCHEMA = _obj({
    "t_max": _p(_POS, 1.0), "nt": _p({"type": "integer", "minimum": 2}, 64),
    "x_min": _p(_NUM, -4.0), "x_max": _p(_NUM, 4.0), "nx": _p({"type": "integer", "minimum": 2}, 128),
})

TOP_SCHEMA = _obj({
    "command": {"enum": list(COMMANDS)},
    "params": {"type": "object"},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "output_dir": {"type": "string", "minLength": 1},
    "threads": {"anyOf": [_INT1, {"const": "auto"}]},
})

PARAM_SCHEMAS: dict[str, dict] = {
    "env": _obj({
        "lambda": _p(_POS, 1.0),
        "window_halfwidth": _p(_INT1, 20),
        "horizon": _p(_POS, 10.0),
        "leak_tolerance": _p({"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, 1e-8),
        "replica": _p(_INT0, 0),
        "probe_times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "probe_sites": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
    }),
    "correlations": _obj({
        "points": _p({"type": "array", "items": _LATTICE_POINT, "minItems": 1,
                      "maxItems": correlations.MAX_EXACT_POINTS}, [[0.5, 0], [1.0, 1]]),
        "lambda": _p(_POS, 1.0),
        "mode": _p({"enum": ["exact", "mc", "both"]}, "exact"),
        "replicas": _p({"type": "integer", "minimum": 100}, 10000),
    }),
    "heat-kernel-check": _obj({
        "llt_times": _p({"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 2},
                        [4.0, 16.0, 64.0, 256.0]),
        "llt_sites": _p({"type": "array", "items": {"type": "integer"}, "minItems": 1}, [0]),
        "gradients": _p({"type": "array", "minItems": 1,
                         "items": {"type": "array", "items": _INT0, "minItems": 2, "maxItems": 2}},
                        [[0, 0], [0, 1], [1, 0]]),
        "mass_times": _p({"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                         [0.5, 1.0, 5.0, 20.0]),
        "ck_pairs": _p({"type": "array", "minItems": 1, "items": {"type": "array", "items": _POS,
                                                                  "minItems": 2, "maxItems": 2}},
                       [[0.5, 0.5], [1.0, 2.0]]),
        "ck_max_site": _p(_INT0, 10),
        "oracle_times": _p({"type": "array", "items": _POS, "minItems": 1}, [0.1, 0.5, 1.0, 5.0, 20.0]),
        "oracle_max_site": _p(_INT0, 9),
    }),
    "spde": _obj({
        "grid": GRID_SCHEMA,
        "beta": _p(_NUM, 0.3),
        "lambda": _p(_POS, 1.0),
        "m_max": _p({"type": "integer", "minimum": 0, "maximum": continuum.MAX_SERIES_ORDER}, 4),
        "seeds": _p({"type": "integer", "minimum": 2}, 500),
        "mode": _p({"enum": ["series", "fk", "both"]}, "both"),
        "points": _p({"type": "array", "items": _POINT, "minItems": 1}, [[1.0, 0.0]]),
        "fk_replicas": _p({"type": "integer", "minimum": 100}, 4000),
        "fk_resolution": _p({"type": "integer", "minimum": continuum.MIN_RESOLUTION}, 64),
    }),
    "norms": _obj({
        "eps": _p(_EPS_LIST, [0.2, 0.1, 0.05]),
        "lambda": _p(_POS, 1.0),
        "alphas": _p({"type": "array", "items": {"type": "number", "exclusiveMaximum": 0}, "minItems": 1},
                     [-0.55, -0.3]),
        "kappa": _p({"type": "number", "minimum": 0}, 0.5),
        "density": _p(_INT1, 2),
    }),
    "tail": _obj({
        "m": _p({"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 4}, "minItems": 1},
                [1, 2, 3]),
        "eps": _p(_EPS_LIST, [0.2, 0.1]),
        "beta": _p(_NUM, 0.3),
        "lambda": _p(_POS, 1.0),
        "replicas": _p({"type": "integer", "minimum": 2}, 100),
        "polymers": _p(_INT1, 256),
    }),
    "converge": _obj({
        "points": _p({"type": "array", "items": _POINT, "minItems": 1}, [[0.0, 0.0]]),
        "beta": _p(_NUM, 0.3),
        "lambda": _p(_POS, 1.0),
        "eps": _p(_EPS_LIST, [0.2, 0.1, 0.05]),
        "replicas": _p({"type": "integer", "minimum": 3}, 200),
        "fk_replicas": _p({"type": "integer", "minimum": 100}, 8000),
        "fk_resolution": _p({"type": "integer", "minimum": continuum.MIN_RESOLUTION}, 64),
        "quenched_envs": _p(_INT0, 0),
        "quenched_polymers": _p(_INT1, 64),
        "order1_envs": _p(_INT0, 0),
        "grid": GRID_SCHEMA,
    }),
}

# commands with a "mode" switch get one schema per mode
_PARTITION_COMMON = {
    "mode": {"enum": ["quenched", "annealed", "double_mc", "chaos", "pascal", "localtime"]},
    "beta": _p(_NUM, 0.0),
    "lambda": _p(_POS, 1.0),
    "horizon": _p(_POS, 4.0),
    "eps": _EPS,
    "replicas": _p(_INT1, 1000),
}
PARTITION_SCHEMAS = {
    "quenched": _obj({**_PARTITION_COMMON, "envs": _p(_INT1, 1)}, ["mode"]),
    "annealed": _obj({**_PARTITION_COMMON, "control_variate": _p({"type": "boolean"}, True)}, ["mode"]),
    "double_mc": _obj({**_PARTITION_COMMON, "pairs": _p({"type": "integer", "minimum": 2}, 100000)}, ["mode"]),
    "chaos": _obj({**_PARTITION_COMMON, "order": _p({"type": "integer", "minimum": 1,
                                                     "maximum": polymer.MAX_CHAOS_ORDER}, 2),
                   "envs": _p({"type": "integer", "minimum": 2}, 200)}, ["mode"]),
    "pascal": _obj({**_PARTITION_COMMON, "tolerance": _p({"type": "number", "minimum": 0}, 1e-9)}, ["mode"]),
    "localtime": _obj({**_PARTITION_COMMON, "a": _p(_NUM, 1.0)}, ["mode"]),
}
NOISE_SCHEMAS = {
    "convergence": _obj({
        "mode": {"const": "convergence"},
        "test_function": _p({"enum": ["standard", "unit", "zero"]}, "standard"),
        "eps": _p(_EPS_LIST, [0.2, 0.1, 0.05]),
        "lambda": _p(_POS, 1.0),
        "replicas": _p({"anyOf": [_INT1, {"type": "array", "items": _INT1, "minItems": 1}]}, 20000),
    }),
    "moments": _obj({
        "mode": {"const": "moments"},
        "n": _p({"enum": [1, 2]}, 1),
        "ell": _p({"type": "array", "items": _EPS, "minItems": 3}, [1.0, 0.5, 0.25, 0.125, 0.0625]),
        "eps": _p(_EPS, 0.05),
        "lambda": _p(_POS, 1.0),
        "replicas": _p({"type": "integer", "minimum": 2}, 20000),
        "constant_field": _p({"type": "boolean"}, False),
    }),
}


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def _validate(instance, schema, prefix=()) -> None:
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(schema).iter_errors(instance))
    if err is not None:
        where = _pointer(list(prefix) + list(err.absolute_path))
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                where = _pointer(list(prefix) + list(err.absolute_path) + [extra[0]])
                raise ConfigError(f"{where}: unknown field")
        raise ConfigError(f"{where}: {err.message}")


def _fill_defaults(params: dict, schema: dict) -> dict:
    out = dict(params)
    for key, sub in schema.get("properties", {}).items():
        if key not in out and "default" in sub:
            out[key] = copy.deepcopy(sub["default"])
        if sub.get("type") == "object" and isinstance(out.get(key), dict):
            out[key] = _fill_defaults(out[key], sub)
    return out


def param_schema(command: str, params: dict) -> dict:
    if command == "partition":
        mode = params.get("mode")
        if mode not in PARTITION_SCHEMAS:
            raise ConfigError(f"/params/mode: must be one of {sorted(PARTITION_SCHEMAS)}, got {mode!r}")
        return PARTITION_SCHEMAS[mode]
    if command == "noise":
        mode = params.get("mode", "convergence")
        if mode not in NOISE_SCHEMAS:
            raise ConfigError(f"/params/mode: must be one of {sorted(NOISE_SCHEMAS)}, got {mode!r}")
        return NOISE_SCHEMAS[mode]
    return PARAM_SCHEMAS[command]


# ---------------------------------------------------------------- run config

@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int | None = None
    output_dir: str = DEFAULT_OUT
    threads: int | str = "auto"

    def __post_init__(self):
        _validate(self.to_raw(), TOP_SCHEMA)
        if self.seed is None:
            raise ConfigError("/seed: seed is mandatory")
        schema = param_schema(self.command, self.params)
        _validate(self.params, schema, ("params",))
        self.params = _fill_defaults(self.params, schema)
        if self.command == "noise":
            self.params.setdefault("mode", "convergence")

    def to_raw(self) -> dict:
        raw = {"command": self.command, "params": self.params, "output_dir": self.output_dir,
               "threads": self.threads}
        if self.seed is not None:
            raw["seed"] = self.seed
        return raw

    def to_dict(self) -> dict:
        return dict(command=self.command, params=self.params, seed=self.seed, output_dir=self.output_dir,
                    threads=self.threads)

    @classmethod
    def from_dict(cls, data: dict, command: str | None = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("/: config root must be an object")
        _validate(data, TOP_SCHEMA)
        cmd = data.get("command", command)
        if command is not None and cmd != command:
            raise ConfigError(f"/command: config says {cmd!r} but {command!r} was requested")
        if cmd is None:
            raise ConfigError("/command: command is mandatory")
        return cls(cmd, dict(data.get("params", {})), data.get("seed"), data.get("output_dir", DEFAULT_OUT),
                   data.get("threads", "auto"))


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


# ---------------------------------------------------------------- commands

def _cmd_heat_kernel_check(p: dict, seed: int) -> ExperimentReport:
    rep = ExperimentReport("heat_kernel_check", dict(p))
    llt = lattice_kernels.llt_table(p["llt_times"], p["llt_sites"], [tuple(k) for k in p["gradients"]])
    rep.tables["llt"] = llt
    decreasing = {}
    for k in p["gradients"]:
        for x in p["llt_sites"]:
            vals = [r["scaled_error"] for r in llt if (r["k0"], r["k1"]) == tuple(k) and r["x"] == x]
            decreasing[f"k={tuple(k)}, x={x}"] = bool(all(b < a for a, b in zip(vals, vals[1:])))
    mass = []
    for t in p["mass_times"]:
        total, tail = lattice_kernels.kernel_mass(t)
        mass.append(dict(t=t, mass=total, mass_error=abs(1.0 - total), tail_bound=tail))
    ck = []
    for t, s in p["ck_pairs"]:
        for x in range(-p["ck_max_site"], p["ck_max_site"] + 1):
            direct = float(lattice_kernels.rw_kernel(t + s, x))
            conv = lattice_kernels.chapman_kolmogorov_sum(t, s, x)
            ck.append(dict(t=t, s=s, x=x, convolution=conv, direct=direct, error=abs(conv - direct)))
    oracle = []
    for t in p["oracle_times"]:
        for x in range(p["oracle_max_site"] + 1):
            b = lattice_kernels.bessel_series_kernel(t, x)
            f = lattice_kernels.fourier_kernel(t, x)
            oracle.append(dict(t=t, x=x, bessel=b, fourier=f, error=abs(b - f)))
    rep.tables["mass"] = mass
    rep.tables["chapman_kolmogorov"] = ck
    rep.tables["oracles"] = oracle
    checks = dict(
        llt_decreasing=decreasing,
        mass_ok=bool(all(r["mass_error"] <= 1e-12 for r in mass)),
        chapman_kolmogorov_ok=bool(all(r["error"] <= 1e-10 for r in ck)),
        oracles_ok=bool(all(r["error"] <= 1e-10 for r in oracle)),
    )
    rep.trends = checks
    ok = all(decreasing.values()) and checks["mass_ok"] and checks["chapman_kolmogorov_ok"] and checks["oracles_ok"]
    rep.verdict = PASS if ok else FAIL
    return rep


def _cmd_env(p: dict, seed: int, out_dir: Path) -> ExperimentReport:
    cfg = environment.EnvironmentConfig(p["lambda"], p["window_halfwidth"], p["horizon"], p["leak_tolerance"])
    env = environment.sample_environment(cfg, seed, replica=p["replica"])
    times = p.get("probe_times") or [0.0, 0.5 * cfg.horizon, cfg.horizon]
    W = cfg.window_halfwidth
    sites = p.get("probe_sites") or list(range(-W, W + 1))
    table = occupation_table(env, times, sites)
    snap = out_dir / "env_snapshot.json"
    out_dir.mkdir(parents=True, exist_ok=True)
    environment.save_snapshot(env, snap)
    back = snapshot_roundtrip(snap)
    same = occupation_table(back, times, sites) == table
    rep = ExperimentReport("env", dict(p, probe_times=list(times), probe_sites=list(sites)))
    rep.tables["occupation"] = table
    counts = [r["occupation"] for r in table]
    rep.trends = dict(walkers=len(env), buffer_halfwidth=env.buffer_halfwidth, leak_bound=env.leak,
                      mean_occupation=float(np.mean(counts)), snapshot_roundtrip_identical=bool(same))
    rep.notes.append("snapshot written to env_snapshot.json")
    rep.verdict = PASS if same else FAIL
    return rep


def occupation_table(env, times, sites) -> list[dict]:
    return [dict(t=float(t), x=int(x), occupation=int(env.occupation(t, x))) for t in times for x in sites]


def _cmd_correlations(p: dict, seed: int, threads) -> ExperimentReport:
    pts = [(float(t), int(x)) for t, x in p["points"]]
    lam, mode = p["lambda"], p["mode"]
    rep = ExperimentReport("correlations", dict(p))
    row = dict(points=[list(q) for q in pts], lam=lam, mode=mode)
    ok = True
    exact = None
    if mode in ("exact", "both"):
        exact, terms = correlations.exact_correlation(pts, lam, return_terms=True)
        row.update(value=exact)
        rep.tables["partition_terms"] = terms
    if mode in ("mc", "both"):
        m, se = correlations.mc_correlation(pts, lam, p["replicas"], seed, threads=threads)
        row.update(mc_value=m, se=se)
        if exact is None:
            row["value"] = m
        else:
            row["z"] = (m - exact) / se if se > 0 else float("nan")
            ok = abs(m - exact) <= 3 * se
    rep.tables["correlation"] = [row]
    rep.verdict = PASS if ok else FAIL
    return rep


def _scaled_polymer(p: dict):
    eps = p.get("eps")
    if eps is None:
        return p["beta"], p["horizon"]
    return p["beta"] * eps**1.5, p["horizon"] / eps**2


def _cmd_partition(p: dict, seed: int, threads) -> ExperimentReport:
    mode = p["mode"]
    beta, T = _scaled_polymer(p)
    lam = p["lambda"]
    rep = ExperimentReport(f"partition_{mode}", dict(p, microscopic_beta=beta, microscopic_horizon=T))
    row = dict(mode=mode, beta=beta, horizon=T, lam=lam)
    verdict = PASS
    if mode == "quenched":
        cfg = polymer.PolymerConfig(beta, T)
        ecfg = polymer.environment_config_for(cfg, lam)
        vals = []
        for r in range(p["envs"]):
            env = environment.sample_environment(ecfg, seed, replica=r)
            vals.append(polymer.quenched_partition(env, cfg, p["replicas"], seed, stream_index=r))
        est = [v[0] for v in vals]
        if len(est) == 1:
            row.update(estimate=est[0], se=vals[0][1])
        else:
            m, se = rngmod.mean_se(est)
            row.update(estimate=m, se=se)
        if beta == 0:
            row["analytic_reference"] = 1.0
            verdict = PASS if row["estimate"] == 1.0 else FAIL
    elif mode == "annealed":
        est, se = polymer.annealed_partition(beta, lam, T, p["replicas"], seed,
                                             control_variate=p["control_variate"])
        row.update(estimate=est, se=se)
        if beta == 0:
            row["analytic_reference"] = 1.0
    elif mode == "double_mc":
        m1, s1 = polymer.double_mc_partition(beta, lam, T, p["pairs"], seed)
        m2, s2 = polymer.annealed_partition(beta, lam, T, p["replicas"], seed)
        comb = math.hypot(s1, s2)
        row.update(estimate=m1, se=s1, annealed_identity=m2, annealed_identity_se=s2, combined_se=comb)
        verdict = PASS if abs(m1 - m2) <= 3 * comb or (comb == 0 and m1 == m2) else FAIL
    elif mode == "chaos":
        cfg = polymer.PolymerConfig(beta, T)
        ecfg = polymer.environment_config_for(cfg, lam)
        K = p["order"]
        per_env = np.empty((p["envs"], K))
        for r in range(p["envs"]):
            env = environment.sample_environment(ecfg, seed, replica=r)
            terms = polymer.chaos_terms(env, cfg, K, p["replicas"], seed, stream_index=r)
            per_env[r] = [t.value for t in terms]
        refs = {1: 0.0, 2: polymer.annealed_linear_mean(beta, lam, T)}
        rows = []
        for k in range(1, K + 1):
            m, se = rngmod.mean_se(per_env[:, k - 1])
            r = dict(k=k, ensemble_mean=m, se=se, analytic_reference=refs.get(k))
            if k in refs:
                r["within_3se"] = bool(abs(m - refs[k]) <= 3 * se + 1e-15)
                if not r["within_3se"]:
                    verdict = FAIL
            rows.append(r)
        rep.tables["chaos"] = rows
    elif mode == "pascal":
        gen = rngmod.stream(seed, rngmod.TAGS["polymer"], 0)
        batch = sample_paths(p["replicas"], 0.0, T, 0, gen)
        gaps = np.array([polymer.pascal_gap(path, beta, lam, T) for path in batch])
        row.update(min_gap=float(gaps.min()), mean_gap=float(gaps.mean()), paths=len(gaps))
        verdict = PASS if gaps.min() >= -p["tolerance"] else FAIL
    elif mode == "localtime":
        st = polymer.local_time_stats(T, p["replicas"], seed, p["a"])
        row.update(st)
        verdict = PASS if abs(st["mean"] - st["exact_mean"]) <= 3 * st["se"] else FAIL
    rep.tables["partition"] = [row]
    rep.verdict = verdict
    return rep


def _grid(p: dict) -> continuum.GridSpec:
    g = p.get("grid")
    return continuum.GridSpec(**g) if g is not None else continuum.GridSpec()


def _cmd_spde(p: dict, seed: int, threads) -> ExperimentReport:
    spec = _grid(p)
    if spec.size > continuum.MAX_CELLS:
        raise CapabilityError(f"{spec.size} cells exceed {continuum.MAX_CELLS}")
    beta, lam, mode = p["beta"], p["lambda"], p["mode"]
    rep = ExperimentReport("spde", dict(p, grid=asdict(spec)))
    for t, _ in p["points"]:
        if not 0 <= t <= spec.t_max:
            raise DomainError(f"point time {t} outside [0, {spec.t_max}]")
    S = None
    if mode in ("series", "both"):
        F = continuum.sample_fields(spec, p["seeds"], seed, threads)
        S = continuum.series_solution(F, p["m_max"], beta, lam)
        rep.tables["term_norms"] = [dict(m=m, mean_abs=v) for m, v in enumerate(S.term_norms())]
    rows, refs = [], []
    ok = True
    for t, x in p["points"]:
        last = None
        if S is not None:
            partial = 0.0
            for m in range(p["m_max"] + 1):
                partial = partial + S.term_at(m, t, x)
                mm, se = rngmod.mean_se(partial)
                last = dict(t=t, x=x, m=m, mean=mm, se=se, variance=float(np.var(partial, ddof=1)))
                rows.append(last)
        if mode in ("fk", "both"):
            fm, fse = continuum.fk_moment(1, beta, lam, t, p["fk_replicas"], p["fk_resolution"], seed, threads)
            f2, f2se = continuum.fk_moment(2, beta, lam, t, p["fk_replicas"], p["fk_resolution"], seed + 1, threads)
            ref = dict(t=t, x=x, fk_mean=fm, fk_se=fse, fk_second=f2, fk_second_se=f2se, fk_variance=f2 - fm**2)
            if last is not None:
                ref.update(series_mean=last["mean"], series_se=last["se"])
                ref["agree"] = bool(abs(last["mean"] - fm) <= 0.05 * abs(fm) + 3 * math.hypot(last["se"], fse))
                ok &= ref["agree"]
            refs.append(ref)
    if rows:
        rep.tables["series"] = rows
    if refs:
        rep.tables["feynman_kac"] = refs
    rep.verdict = PASS if ok else FAIL
    return rep


def _test_function(name: str):
    return {"standard": standard_bump, "unit": unit_bump, "zero": zero_function}[name]()


def _cmd_noise(p: dict, seed: int, threads) -> ExperimentReport:
    if p["mode"] == "moments":
        return harness.moment_scaling(p["n"], p["ell"], p["eps"], p["lambda"], p["replicas"], seed,
                                      constant_field=p["constant_field"], threads=threads)
    return harness.noise_convergence(_test_function(p["test_function"]), p["eps"], p["lambda"], p["replicas"],
                                     seed, threads=threads)


def _cmd_norms(p: dict, seed: int, threads) -> ExperimentReport:
    return harness.norm_experiment(p["eps"], p["lambda"], seed, alphas=tuple(p["alphas"]), kappa=p["kappa"],
                                   density=p["density"])


def _cmd_tail(p: dict, seed: int, threads) -> ExperimentReport:
    return harness.tail_experiment(p["m"], p["eps"], p["beta"], p["lambda"], p["replicas"], seed,
                                   polymers=p["polymers"])


def _cmd_converge(p: dict, seed: int, threads) -> ExperimentReport:
    grid = continuum.GridSpec(**p["grid"]) if p.get("grid") is not None else None
    return harness.partition_vs_spde(p["points"], p["beta"], p["lambda"], p["eps"], p["replicas"], grid=grid,
                                     seed=seed, fk_replicas=p["fk_replicas"], fk_resolution=p["fk_resolution"],
                                     quenched_envs=p["quenched_envs"], quenched_polymers=p["quenched_polymers"],
                                     order1_envs=p["order1_envs"], threads=threads)


# ---------------------------------------------------------------- run

def version_string() -> str:
    """``git describe``-style version, falling back to the package version."""
    here = Path(__file__).resolve().parent
    try:
        res = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        desc = res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    if not desc:
        return f"v{__version__}"
    if desc.startswith("v"):
        return desc
    return f"v{__version__}-g{desc}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve_output_dir(config: RunConfig, flag: str | None = None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env)
    return Path(config.output_dir)


def execute(config: RunConfig, out_dir: Path | None = None) -> tuple[ExperimentReport, Path]:
    """Run the experiment and write its artifacts; raises on error."""
    out = Path(out_dir) if out_dir is not None else resolve_output_dir(config)
    threads = None if config.threads == "auto" else int(config.threads)
    rngmod.set_threads(config.threads)
    rngmod.stream_accounting(reset=True)
    t0 = time.perf_counter()
    p, seed, cmd = config.params, int(config.seed), config.command
    if cmd == "heat-kernel-check":
        rep = _cmd_heat_kernel_check(p, seed)
    elif cmd == "env":
        rep = _cmd_env(p, seed, out)
    else:
        handler = {"correlations": _cmd_correlations, "partition": _cmd_partition, "spde": _cmd_spde,
                   "noise": _cmd_noise, "norms": _cmd_norms, "tail": _cmd_tail, "converge": _cmd_converge}[cmd]
        rep = handler(p, seed, threads)
    wall = time.perf_counter() - t0
    files = rep.write(out)
    if cmd == "env":
        files.append(out / "env_snapshot.json")
    manifest = {
        "config": config.to_dict(),
        "version": version_string(),
        "wall_time_s": wall,
        "rng": {"generator": "Philox-4x64 via SeedSequence", "seed": seed,
                "streams_per_tag": rngmod.stream_accounting(reset=True)},
        "verdict": rep.verdict,
        "artifacts": {f.name: _sha256(f) for f in files},
        "platform": {"python": platform.python_version(), "numpy": np.__version__},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return rep, out


def run(config: RunConfig, out_dir: Path | None = None) -> int:
    """Exit status of one run: 0 pass (or inconclusive), 2 fail, 1 error."""
    try:
        rep, _ = execute(config, out_dir)
    except (ConfigError, DomainError, CapabilityError, NumericalError, SnapshotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_FAIL if rep.verdict == FAIL else EXIT_PASS


def rerun_from_manifest(manifest_path, out_dir) -> int:
    """Repeat a run from the config echoed in its manifest."""
    data = json.loads(Path(manifest_path).read_text())
    cfg = RunConfig.from_dict(data["config"])
    return run(cfg, Path(out_dir))


def snapshot_roundtrip(env_file) -> environment.Environment:
    """Load a saved environment; schema problems raise SnapshotError with a location."""
    return environment.load_snapshot(env_file)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="walkpolymer", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    ap.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else the config value)")
    ap.add_argument("--threads", default=None, help='worker threads or "auto"')
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config_file(args.config) if args.config else {}
        if not isinstance(raw, dict):
            raise ConfigError("/: config root must be an object")
        raw = dict(raw)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.threads is not None:
            raw["threads"] = "auto" if args.threads == "auto" else _int_flag(args.threads)
        config = RunConfig.from_dict(raw, args.command)
        out = resolve_output_dir(config, args.out)
        config.output_dir = str(out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return run(config, out)


def _int_flag(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"/threads: expected an integer or \"auto\", got {text!r}") from None


if __name__ == "__main__":
    sys.exit(main())
