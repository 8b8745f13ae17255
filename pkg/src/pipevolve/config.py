"""Strict ``key = value`` run configuration files."""
from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

from .evolve import RunConfig
from .operators import PLUGIN_TIMEOUT, PluginSpec

KEYS = {
    "seed", "population_size", "offspring_size", "generations", "operators",
    "content", "styles", "masks", "style_masks", "pyramid_levels", "out_dir",
    "resolution", "workers",
}
INT_KEYS = ("seed", "population_size", "offspring_size", "generations", "pyramid_levels", "workers")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.line = line


def _split_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _resolution(value: str) -> tuple[int, int]:
    parts = value.lower().replace(" ", "").split("x")
    if len(parts) != 2 or not all(p.isdigit() and int(p) > 0 for p in parts):
        raise ValueError(f"resolution must look like WIDTHxHEIGHT, got {value!r}")
    return int(parts[0]), int(parts[1])


def parse_config(text: str, base_dir: Path | str = ".", path=None) -> RunConfig:
    """Parse config text; relative file paths resolve against ``base_dir``."""
    base = Path(base_dir)
    cfg = RunConfig()
    seen: dict[str, int] = {}
    commands: dict[str, tuple[str, int]] = {}
    timeouts: dict[str, float] = {}

    def resolve(p: str) -> str:
        q = Path(p).expanduser()
        return str(q if q.is_absolute() else base / q)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno, path)
        seen[key] = lineno
        try:
            if key.startswith("plugin."):
                name = key[len("plugin."):]
                if name.endswith(".timeout"):
                    timeouts[name[: -len(".timeout")]] = float(value)
                elif name and "." not in name:
                    commands[name.lower()] = (value, lineno)
                else:
                    raise ValueError(f"unknown plugin key {key!r}")
            elif key not in KEYS:
                raise ValueError(f"unknown key {key!r}")
            elif key in INT_KEYS:
                setattr(cfg, key, int(value))
            elif key == "operators":
                cfg.operators = tuple(op.lower() for op in _split_list(value))
            elif key == "content":
                cfg.content = [resolve(p) for p in _split_list(value)]
            elif key == "styles":
                styles = []
                for i, item in enumerate(_split_list(value)):
                    label, sep, p = item.partition(":")
                    if not sep:
                        label, p = f"condition{i}", item
                    styles.append((label.strip(), resolve(p.strip())))
                cfg.styles = styles
            elif key in ("masks", "style_masks"):
                setattr(cfg, key, [resolve(p) for p in _split_list(value)])
            elif key == "out_dir":
                cfg.out_dir = resolve(value)
            elif key == "resolution":
                cfg.resolution = _resolution(value)
        except ValueError as exc:
            raise ConfigError(str(exc), lineno, path) from None

    for name in timeouts:
        if name not in commands:
            raise ConfigError(f"timeout given for undeclared plugin {name!r}", path=path)
    plugins = {}
    for name, (command, lineno) in commands.items():
        try:
            plugins[name] = PluginSpec.parse(name, command, timeouts.get(name, PLUGIN_TIMEOUT))
        except ValueError as exc:
            raise ConfigError(str(exc), lineno, path) from None
    cfg.plugins = plugins
    if "operators" not in seen:
        cfg.operators = cfg.operators + tuple(n for n in plugins if n not in cfg.operators)
    if "out_dir" not in seen:
        cfg.out_dir = str(base / "out")
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc), path=path) from None
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), p.parent, path=p)


def config_to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["operators"] = list(cfg.operators)
    d["styles"] = [{"condition": label, "path": p} for label, p in cfg.styles]
    d["plugins"] = {
        name: {"command": list(spec.command), "timeout": spec.timeout}
        for name, spec in sorted(cfg.plugins.items())
    }
    d["resolution"] = list(cfg.resolution) if cfg.resolution else None
    return d
