"""Run configuration: TOML parsing with strict key checking, defaults, and initial data."""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .admissibility import BumpSpec, RadialProfile, make_power_law_init
from .errors import ConfigError
from .grid import FARFIELD, PERIODIC, Grid
from .momentum import MomentumStepConfig
from .params import Params, validate_params
from .picard import ContinuationPlan, PicardConfig
from .state import PrimitiveState
from .transport import TransportScheme

INIT_FAMILIES = ("sine", "equilibrium", "power_law", "random_modes", "snapshot")

# Documented key set with defaults. None means "no value" and is omitted from
# the resolved TOML.
SCHEMA: dict[str, dict[str, Any]] = {
    "params": {f.name: f.default for f in fields(Params)},
    "grid": {"n": 128, "length": 1.0, "boundary": PERIODIC, "origin": None},
    "init": {
        "family": "sine",
        "rho_mean": 1.0,
        "rho_amp": 0.2,
        "u_mean": 0.5,
        "u_amp": 0.1,
        "wavenumber": 1,
        "a_exp": 2.0,
        "bump_amplitude": 0.1,
        "bump_radius": 1.0,
        "modes": 3,
        "path": None,
    },
    "transport": {"method": "Upwind2", "cfl": 0.9},
    "momentum": {"form": "VarphiForm", "theta": 1.0, "rtol": 1e-10, "maxiter": None, "preconditioner": "Jacobi"},
    "picard": {
        "dt": 1e-3,
        "steps_per_slab": 10,
        "tol": None,
        "safety": 1.0,
        "k_max": 30,
        "nu": 0.1,
        "initial": "FrozenInitial",
        "psi_iterate": "new",
        "monitors": True,
        "evolve_tracks": True,
        "subcycle": 0,
    },
    "continuation": {
        "eps": [1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
        "eta": [1e-1, 1e-2, 1e-3, 1e-4],
        "eta_fixed": None,
        "form": "HForm",
        "interior_halfwidth": 1.0,
    },
    "check": {"dim": 3, "q": None, "radii": None},
    "oracle": {"levels": [32, 64, 128, 256], "T": 0.2, "courant": 0.4, "methods": ["Upwind1", "Upwind2"]},
    "convergence": {"levels": [64, 128, 256], "T": 0.05},
    "output": {"directory": "dnslab-output", "cadence": 10, "formats": ["csv", "snapshot"], "snapshot_every": 1},
}
TOP_LEVEL = {"T": 0.1, "seed": 0}


@dataclass
class OutputConfig:
    directory: str = "dnslab-output"
    cadence: int = 10
    formats: tuple[str, ...] = ("csv", "snapshot")
    snapshot_every: int = 1


@dataclass
class RunConfig:
    params: Params
    grid: Grid
    init: dict
    transport: TransportScheme
    momentum: MomentumStepConfig
    picard: PicardConfig
    continuation: ContinuationPlan
    output: OutputConfig
    check: dict
    oracle: dict
    convergence: dict
    T: float = 0.1
    seed: int = 0
    raw: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """The full key set with defaults filled in (values of None dropped)."""
        return _drop_none(self.raw)

    def resolved_toml(self) -> str:
        return tomli_w.dumps(self.resolved())


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    return d


def _merge(doc: dict, problems: list[str]) -> dict:
    out: dict[str, Any] = {}
    for key, value in doc.items():
        if key in TOP_LEVEL:
            continue
        if key not in SCHEMA:
            problems.append(f"unknown key: {key}")
            continue
        if not isinstance(value, dict):
            problems.append(f"[{key}] must be a table")
            continue
        for sub in value:
            if sub not in SCHEMA[key]:
                problems.append(f"unknown key: {sub} (in [{key}])")
    for block, defaults in SCHEMA.items():
        given = doc.get(block, {}) if isinstance(doc.get(block, {}), dict) else {}
        out[block] = {k: given.get(k, v) for k, v in defaults.items()}
    for key, default in TOP_LEVEL.items():
        out[key] = doc.get(key, default)
    return out


def _build(label: str, problems: list[str], fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (TypeError, ValueError) as exc:
        problems.append(f"[{label}] {exc}")
        return None


def _cadence(value) -> int:
    return value if isinstance(value, int) and value >= 1 else 1


def _make_grid(g: dict, dim: int) -> Grid:
    n = g["n"] if isinstance(g["n"], list) else [g["n"]] * dim
    length = g["length"] if isinstance(g["length"], list) else [g["length"]] * dim
    if len(n) != dim or len(length) != dim:
        raise ValueError(f"grid n/length must have {dim} entries")
    if g["boundary"] not in (PERIODIC, FARFIELD):
        raise ValueError(f"boundary must be {PERIODIC!r} or {FARFIELD!r} (got {g['boundary']!r})")
    origin = None if g["origin"] is None else tuple(float(o) for o in g["origin"])
    return Grid(tuple(float(x) for x in length), tuple(int(x) for x in n), g["boundary"], origin)


def parse_config(source: str | os.PathLike, base_dir: str | os.PathLike | None = None) -> RunConfig:
    """Parse a TOML document (path or text) into a validated RunConfig.

    Unknown keys and every semantic violation are collected and raised together
    as one ConfigError.
    """
    looks_like_path = isinstance(source, str) and "\n" not in source and (source.endswith(".toml") or os.path.isfile(source))
    if isinstance(source, os.PathLike) or looks_like_path:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
        base_dir = base_dir or path.parent
    else:
        text = str(source)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from None
    problems: list[str] = []
    raw = _merge(doc, problems)

    params = None
    try:
        params = Params(**{k: (float(v) if k != "dim" else int(v)) for k, v in raw["params"].items()})
        problems += [f"[params] {v}" for v in validate_params(params)]
    except (TypeError, ValueError) as exc:
        problems.append(f"[params] {exc}")
    dim = params.dim if params is not None and params.dim in (1, 2, 3) else 1
    grid = _build("grid", problems, _make_grid, raw["grid"], dim)
    transport = _build("transport", problems, TransportScheme, **raw["transport"])
    mom = dict(raw["momentum"])
    momentum = _build("momentum", problems, MomentumStepConfig, **mom)
    pic = dict(raw["picard"])
    picard = None
    if transport is not None and momentum is not None:
        picard = _build("picard", problems, PicardConfig, transport=transport, momentum=momentum, diag_every=_cadence(raw["output"]["cadence"]), **pic)
    cont = dict(raw["continuation"])
    continuation = _build("continuation", problems, ContinuationPlan, eps=tuple(cont.pop("eps")), eta=tuple(cont.pop("eta")), **cont)
    out = raw["output"]
    if not isinstance(out["cadence"], int) or out["cadence"] < 1:
        problems.append("[output] cadence must be an integer >= 1")
    if not isinstance(out["snapshot_every"], int) or out["snapshot_every"] < 1:
        problems.append("[output] snapshot_every must be an integer >= 1")
    bad_formats = [f for f in out["formats"] if f not in ("csv", "snapshot")]
    if bad_formats:
        problems.append(f"[output] unknown formats {bad_formats}")
    output = OutputConfig(out["directory"], out["cadence"], tuple(out["formats"]), out["snapshot_every"])
    init = dict(raw["init"])
    if init["family"] not in INIT_FAMILIES:
        problems.append(f"[init] family must be one of {INIT_FAMILIES} (got {init['family']!r})")
    if init["family"] == "snapshot":
        if not init["path"]:
            problems.append("[init] snapshot family needs a path")
        else:
            p = Path(init["path"])
            if not p.is_absolute() and base_dir is not None:
                p = Path(base_dir) / p
            if not p.exists():
                problems.append(f"[init] snapshot path does not exist: {p}")
            init["path"] = str(p)
            raw["init"]["path"] = str(p)
    if not (isinstance(raw["T"], (int, float)) and raw["T"] > 0):
        problems.append("T must be positive")
    if not isinstance(raw["seed"], int):
        problems.append("seed must be an integer")
    if problems:
        raise ConfigError(problems)
    return RunConfig(
        params, grid, init, transport, momentum, picard, continuation, output,
        dict(raw["check"]), dict(raw["oracle"]), dict(raw["convergence"]), float(raw["T"]), int(raw["seed"]), raw,
    )


# ---------------------------------------------------------------- initial data


def build_initial_state(cfg: RunConfig) -> PrimitiveState:
    """Grid the configured initial-data family."""
    g, p, init = cfg.grid, cfg.params, cfg.init
    fam = init["family"]
    if fam == "snapshot":
        from .snapshot import load_snapshot

        state, _, _ = load_snapshot(init["path"], grid=g)
        if not isinstance(state, PrimitiveState):
            from .reform import from_reform

            state = from_reform(state, p)
        return state
    x = g.coords[0]
    phase = 2 * math.pi * init["wavenumber"] * (x - g.origin[0]) / g.lengths[0]
    u = np.zeros((g.dim, *g.shape))
    if fam == "equilibrium":
        return PrimitiveState(g, np.full(g.shape, float(init["rho_mean"])), u)
    if fam == "sine":
        rho = init["rho_mean"] + init["rho_amp"] * np.sin(phase)
        u[0] = init["u_mean"] + init["u_amp"] * np.sin(phase)
        return PrimitiveState(g, rho, u)
    if fam == "random_modes":
        rng = np.random.default_rng(cfg.seed)
        rho = np.full(g.shape, float(init["rho_mean"]))
        for k in range(1, int(init["modes"]) + 1):
            c = rng.uniform(-1, 1, size=(1 + g.dim, 2)) / k**2
            rho = rho + init["rho_amp"] * (c[0, 0] * np.sin(k * phase) + c[0, 1] * np.cos(k * phase))
            for d in range(g.dim):
                u[d] += init["u_amp"] * (c[1 + d, 0] * np.sin(k * phase) + c[1 + d, 1] * np.cos(k * phase))
        u[0] += init["u_mean"]
        return PrimitiveState(g, rho, u)
    # power_law
    spec = BumpSpec(float(init["bump_amplitude"]), float(init["bump_radius"]))
    return make_power_law_init(float(init["a_exp"]), spec, g, p)


def radial_profile(cfg: RunConfig) -> RadialProfile:
    init = cfg.init
    return RadialProfile(float(init["a_exp"]), int(cfg.check["dim"]), float(init["bump_amplitude"]), float(init["bump_radius"]))


def write_resolved(cfg: RunConfig, directory: str | os.PathLike) -> Path:
    path = Path(directory) / "resolved_config.toml"
    path.write_text(cfg.resolved_toml())
    return path


__all__ = ["OutputConfig", "RunConfig", "SCHEMA", "build_initial_state", "parse_config", "radial_profile", "write_resolved"]
