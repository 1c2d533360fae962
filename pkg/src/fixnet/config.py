"""Run configuration: a single TOML file with nested tables.

Unknown keys anywhere are hard errors, so typos cannot silently change an
experiment.  Structural problems (syntax, unknown keys, missing fields,
bad enam values) raise ConfigError; semantically invalid but well-formed
configurations (parameter ranges, engine/scenario mismatches) raise
ValidationError.  The resolved configuration is fingerprinted for trace
provenance.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Optional

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

import numpy as np

from . import graph as graphs
from .engine import RelaxationSchedule
from .hilbert import BlockLayout
from .scenarios import (PRESETS, Scenario, build_feasibility_scenario,
                        build_linear_equation_scenario, make_preset)

SEED_ENV_VAR = "FIXNET_SEED"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_DIVERGENCE = 4


class ConfigError(ValueError):
    """Malformed configuration (exit code 2)."""


class ValidationError(ValueError):
    """Well-formed but semantically invalid configuration (exit code 3)."""


_RUN_KEYS = {"engine", "max_iters", "stop_tolerance", "repeat_count",
             "master_seed", "out_dir", "quiet"}
_SCENARIO_KEYS = {"preset", "kind", "dim", "seed", "n_agents", "sets",
                  "interior_point", "system_A", "system_b",
                  "graph", "relaxation", "errors", "blocks", "init"}
_GRAPH_KEYS = {"kind", "n_agents", "matrix", "matrices", "window", "seed", "sizes"}
_RELAX_KEYS = {"value", "values", "floor"}
_ERROR_KEYS = {"kind", "scale", "ratio", "exponent", "magnitudes"}
_BLOCK_KEYS = {"probs", "sizes"}
_INIT_KEYS = {"kind", "low", "high", "points"}
_SET_KEYS = {"kind", "a", "b", "lo", "hi", "center", "radius", "A", "d"}


def _require_keys(table: dict, allowed: set, where: str):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{where}]")


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config syntax error: {exc}")


@dataclass
class RunConfig:
    """Fully resolved batch-run settings."""

    engine: str
    max_iters: int
    stop_tolerance: float
    repeat_count: int
    master_seed: int
    out_dir: str
    quiet: bool
    scenario: Scenario
    fingerprint: str
    resolved: dict


def _fingerprint(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()[:16]


def _build_graph(table: dict) -> graphs.GraphSequence:
    _require_keys(table, _GRAPH_KEYS, "scenario.graph")
    kind = table.get("kind")
    if kind == "static-complete":
        return graphs.static_complete(int(table["n_agents"]))
    if kind == "static-matrix":
        return graphs.static_matrix(np.asarray(table["matrix"], dtype=float),
                                    window=int(table.get("window", 1)))
    if kind == "periodic-rotating":
        return graphs.periodic_rotating(int(table["n_agents"]))
    if kind == "periodic-matrices":
        if "window" not in table:
            raise ConfigError("periodic-matrices needs an explicit window")
        return graphs.periodic_matrices([np.asarray(M, dtype=float)
                                         for M in table["matrices"]],
                                        window=int(table["window"]))
    if kind == "random-pool":
        return graphs.random_pool(int(table["n_agents"]), int(table.get("seed", 0)))
    if kind == "disconnected-pair":
        sizes = table.get("sizes", [1, 1])
        return graphs.disconnected_pair((int(sizes[0]), int(sizes[1])))
    raise ConfigError(f"unknown graph kind {kind!r}")


def _build_relaxation(table: dict, n_agents: int) -> RelaxationSchedule:
    _require_keys(table, _RELAX_KEYS, "scenario.relaxation")
    try:
        if "values" in table:
            values = tuple(float(v) for v in table["values"])
            if len(values) != n_agents:
                raise ValidationError("one relaxation value per agent required")
            floor = float(table.get("floor", min(min(values), 1.0 - max(values))))
            return RelaxationSchedule(floor=floor, values=values)
        value = float(table.get("value", 0.45))
        floor = table.get("floor")
        return RelaxationSchedule.constant(n_agents, value,
                                           None if floor is None else float(floor))
    except ValueError as exc:
        raise ValidationError(str(exc))


def _error_spec(table: dict) -> dict:
    _require_keys(table, _ERROR_KEYS, "scenario.errors")
    kind = table.get("kind", "zero")
    if kind not in ("zero", "geometric", "power", "custom"):
        raise ConfigError(f"unknown error kind {kind!r}")
    spec = {"kind": kind}
    for key in ("scale", "ratio", "exponent"):
        if key in table:
            spec[key] = float(table[key])
    if "magnitudes" in table:
        spec["magnitudes"] = [float(v) for v in table["magnitudes"]]
    return spec


def _init_spec(table: dict) -> dict:
    _require_keys(table, _INIT_KEYS, "scenario.init")
    kind = table.get("kind", "uniform-box")
    if kind == "uniform-box":
        return {"kind": kind, "low": float(table.get("low", -5.0)),
                "high": float(table.get("high", 5.0))}
    if kind == "given":
        if "points" not in table:
            raise ConfigError("init kind 'given' needs points")
        return {"kind": kind, "points": [[float(v) for v in row]
                                         for row in table["points"]]}
    raise ConfigError(f"unknown init kind {kind!r}")


def build_scenario(table: dict) -> Scenario:
    """Assemble a Scenario from the [scenario] table."""
    _require_keys(table, _SCENARIO_KEYS, "scenario")
    preset = table.get("preset")
    kind = table.get("kind")
    if (preset is None) == (kind is None):
        raise ConfigError("scenario needs exactly one of 'preset' or inline 'kind'")

    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        params = {}
        if "dim" in table:
            params["dim"] = int(table["dim"])
        if "seed" in table:
            params["seed"] = int(table["seed"])
        if "n_agents" in table:
            params["n_agents"] = int(table["n_agents"])
        try:
            sc = make_preset(preset, **params)
        except TypeError as exc:
            raise ConfigError(f"preset {preset!r} does not accept these parameters: {exc}")
    else:
        seed = int(table.get("seed", 1234))
        if kind == "feasibility":
            if "sets" not in table or "dim" not in table:
                raise ConfigError("inline feasibility scenario needs 'sets' and 'dim'")
            for s in table["sets"]:
                _require_keys(s, _SET_KEYS, "scenario.sets[*]")
            try:
                sc = build_feasibility_scenario(table["sets"], dim=int(table["dim"]),
                                                interior_point=table.get("interior_point"),
                                                seed=seed)
            except ValueError as exc:
                raise ValidationError(str(exc))
        elif kind == "linear-equation":
            if "system_A" not in table or "system_b" not in table:
                raise ConfigError("inline linear-equation scenario needs 'system_A'/'system_b'")
            try:
                sc = build_linear_equation_scenario(
                    table["system_A"], table["system_b"],
                    n_agents=int(table.get("n_agents", len(table["system_A"]))), seed=seed)
            except ValueError as exc:
                raise ValidationError(str(exc))
        else:
            raise ConfigError(f"unknown inline scenario kind {kind!r}")

    if "graph" in table:
        g = _build_graph(table["graph"])
        if g.n_agents != sc.n_agents:
            raise ValidationError(
                f"graph has {g.n_agents} agents but the scenario has {sc.n_agents}")
        sc = sc.with_overrides(graph=g)
    if "relaxation" in table:
        sc = sc.with_overrides(relaxation=_build_relaxation(table["relaxation"], sc.n_agents))
    if "errors" in table:
        sc = sc.with_overrides(error_spec=_error_spec(table["errors"]))
    if "blocks" in table:
        _require_keys(table["blocks"], _BLOCK_KEYS, "scenario.blocks")
        probs = tuple(float(p) for p in table["blocks"]["probs"])
        if any(not (0.0 < p <= 1.0) for p in probs):
            raise ValidationError("block probabilities must lie in (0, 1]")
        if "sizes" in table["blocks"]:
            sizes = tuple(int(s) for s in table["blocks"]["sizes"])
        elif len(probs) == sc.dim:
            sizes = (1,) * sc.dim
        else:
            raise ConfigError("blocks need explicit sizes unless one block per coordinate")
        if len(sizes) != len(probs):
            raise ValidationError("one probability per block required")
        try:
            layout = BlockLayout(sizes)
        except ValueError as exc:
            raise ValidationError(str(exc))
        if layout.dim != sc.dim:
            raise ValidationError("block sizes must sum to the scenario dimension")
        sc = sc.with_overrides(block_probs=probs, layout=layout)
    if "init" in table:
        sc = sc.with_overrides(init_spec=_init_spec(table["init"]))
    return sc


def resolve_config(raw: dict, *, seed_override: Optional[int] = None,
                   iters_override: Optional[int] = None,
                   tol_override: Optional[float] = None,
                   repeats_override: Optional[int] = None,
                   out_override: Optional[str] = None,
                   quiet_override: bool = False,
                   env: Optional[dict] = None) -> RunConfig:
    """Merge file values, environment, and CLI flags (flags win)."""
    env = os.environ if env is None else env
    _require_keys(raw, {"run", "scenario"}, "top level")
    run_t = raw.get("run", {})
    _require_keys(run_t, _RUN_KEYS, "run")
    if "scenario" not in raw:
        raise ConfigError("missing [scenario] table")

    engine = run_t.get("engine", "dikm")
    if engine not in ("km", "dikm", "dibkm"):
        raise ConfigError(f"unknown engine {engine!r}")

    seed = int(run_t.get("master_seed", 0))
    if SEED_ENV_VAR in env:
        try:
            seed = int(env[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer")
    if seed_override is not None:
        seed = int(seed_override)

    max_iters = int(run_t.get("max_iters", 10000)) if iters_override is None else int(iters_override)
    stop_tol = float(run_t.get("stop_tolerance", 1e-8)) if tol_override is None else float(tol_override)
    repeats = int(run_t.get("repeat_count", 1)) if repeats_override is None else int(repeats_override)
    out_dir = str(run_t.get("out_dir", "out")) if out_override is None else str(out_override)
    quiet = bool(run_t.get("quiet", False)) or quiet_override

    if max_iters < 0:
        raise ValidationError("max_iters must be nonnegative")
    if stop_tol < 0:
        raise ValidationError("stop_tolerance must be nonnegative")
    if repeats < 1:
        raise ValidationError("repeat_count must be at least 1")

    scenario = build_scenario(raw["scenario"])

    if engine == "km" and scenario.n_agents != 1:
        raise ValidationError("the centralized engine requires a single-agent scenario")
    if engine == "dibkm" and scenario.block_probs is None:
        raise ValidationError("the block engine requires a [scenario.blocks] table")

    resolved = {
        "engine": engine, "max_iters": max_iters, "stop_tolerance": stop_tol,
        "repeat_count": repeats, "master_seed": seed,
        "scenario": _canonical(raw["scenario"]),
    }
    return RunConfig(engine=engine, max_iters=max_iters, stop_tolerance=stop_tol,
                     repeat_count=repeats, master_seed=seed, out_dir=out_dir,
                     quiet=quiet, scenario=scenario,
                     fingerprint=_fingerprint(resolved), resolved=resolved)


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (int, float, str, bool)) or obj is None:
        return obj
    return str(obj)
