"""Run-configuration files: sectioned ``key = value`` text.

Configs are experiment records, so unknown sections or keys are hard errors
rather than warnings. Example:

    [network]
    rows = 8
    cols = 8
    inlets = 4
    outlets = 4

    [mpc]
    beta = 0.0
    d0 = 400
    horizon = 5

    [sim]
    seed = 1
    steps = 300
    p_min = 0.05
    p_max = 0.95

``[network]`` takes either ``file = <path>`` or the four grid keys.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError
from .sim import GridSpec, SimulationConfig

_NETWORK_KEYS = {"file", "rows", "cols", "inlets", "outlets"}
_MPC_KEYS = {"beta", "d0", "horizon", "infeasibility_fallback"}
_SIM_KEYS = {
    "seed", "steps", "p_min", "p_max", "initial_max_fraction",
    "vehicle_length_m", "retain_models",
}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    return cp


def _get(section, key, cast, default=None, *, where):
    if key not in section:
        if default is None:
            raise ConfigError(f"missing required key {key!r} in [{where}]")
        return default
    raw = section[key]
    try:
        if cast is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError:
        raise ConfigError(f"key {key!r} in [{where}]: cannot parse {raw!r}") from None


def parse_config_text(text: str, *, base_dir: Path | None = None) -> SimulationConfig:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    expected = {"network": _NETWORK_KEYS, "mpc": _MPC_KEYS, "sim": _SIM_KEYS}
    for section in cp.sections():
        if section not in expected:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(cp[section]) - expected[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    for required in ("network", "mpc", "sim"):
        if required not in cp:
            raise ConfigError(f"missing required section [{required}]")

    net = cp["network"]
    network_file: str | None = None
    grid: GridSpec | None = None
    if "file" in net:
        extra = set(net) - {"file"}
        if extra:
            raise ConfigError(f"[network] file excludes grid keys {sorted(extra)}")
        path = Path(net["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        network_file = str(path)
    else:
        grid = GridSpec(
            rows=_get(net, "rows", int, where="network"),
            cols=_get(net, "cols", int, where="network"),
            inlets=_get(net, "inlets", int, where="network"),
            outlets=_get(net, "outlets", int, where="network"),
        )

    mpc_sec = cp["mpc"]
    sim_sec = cp["sim"]
    p_min = _get(sim_sec, "p_min", float, 0.05, where="sim")
    p_max = _get(sim_sec, "p_max", float, 0.95, where="sim")

    try:
        return SimulationConfig(
            seed=_get(sim_sec, "seed", int, where="sim"),
            steps=_get(sim_sec, "steps", int, where="sim"),
            beta=_get(mpc_sec, "beta", float, where="mpc"),
            d0=_get(mpc_sec, "d0", float, where="mpc"),
            horizon=_get(mpc_sec, "horizon", int, 5, where="mpc"),
            network_file=network_file,
            grid=grid,
            p_range=(p_min, p_max),
            initial_max_fraction=_get(sim_sec, "initial_max_fraction", float, 0.5, where="sim"),
            vehicle_length_m=_get(sim_sec, "vehicle_length_m", float, 4.5, where="sim"),
            retain_models=_get(sim_sec, "retain_models", bool, True, where="sim"),
            infeasibility_fallback=_get(mpc_sec, "infeasibility_fallback", bool, False, where="mpc"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_file(path) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, base_dir=path.parent)


def render_config(cfg: SimulationConfig) -> str:
    """Normalized echo of a configuration, suitable for re-parsing."""
    lines = ["[network]"]
    if cfg.network_file is not None:
        lines.append(f"file = {cfg.network_file}")
    else:
        lines += [
            f"rows = {cfg.grid.rows}",
            f"cols = {cfg.grid.cols}",
            f"inlets = {cfg.grid.inlets}",
            f"outlets = {cfg.grid.outlets}",
        ]
    lines += [
        "",
        "[mpc]",
        f"beta = {cfg.beta!r}",
        f"d0 = {cfg.d0!r}",
        f"horizon = {cfg.horizon}",
        f"infeasibility_fallback = {str(cfg.infeasibility_fallback).lower()}",
        "",
        "[sim]",
        f"seed = {cfg.seed}",
        f"steps = {cfg.steps}",
        f"p_min = {cfg.p_range[0]!r}",
        f"p_max = {cfg.p_range[1]!r}",
        f"initial_max_fraction = {cfg.initial_max_fraction!r}",
        f"vehicle_length_m = {cfg.vehicle_length_m!r}",
        f"retain_models = {str(cfg.retain_models).lower()}",
    ]
    return "\n".join(lines) + "\n"
