"""Run configuration: a flat ``key = value`` file with dotted keys.

Example::

    # lq1d at desk scale
    problem.name = lq1d
    problem.q = 1.0
    grid.nx = 33
    time.nt = 256
    mc.paths = 1000
    iter.relaxation = 0.5

Keys under ``problem.`` other than ``problem.name`` are catalog parameter
overrides.  Blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigError

__all__ = ["RunConfig", "parse_config_text", "load_config", "OUTPUT_DIR_ENV", "KEYS"]

OUTPUT_DIR_ENV = "SPDEDUAL_OUTPUT_DIR"

# dotted key -> (attribute, converter, description)
KEYS = {
    "problem.name": ("problem", str, "catalog problem name (default lq1d)"),
    "grid.nx": ("nx", int, "nodes per axis (default: catalog value)"),
    "time.nt": ("nt", int, "time steps (default: catalog value)"),
    "mc.paths": ("paths", int, "Brownian paths (default 1000)"),
    "mc.seed": ("seed", int, "master seed (default 20240101)"),
    "mc.threads": ("threads", int, "worker threads; results do not depend on it (default 1)"),
    "scheme.theta": ("theta", float, "implicitness of the drift term in [0, 1] (default 1)"),
    "control.resolution": ("resolution", int, "control grid points per dimension (default 65)"),
    "iter.max_iterations": ("max_iterations", int, "sweep iteration cap (default 200)"),
    "iter.tolerance": ("tolerance", float, "sup-norm control-change tolerance (default 1e-7)"),
    "iter.relaxation": ("relaxation", float, "control mixing weight in (0, 1] (default 0.5)"),
    "iter.mode": ("mode", str, "mean-field, per-path, partial or auto (default auto)"),
    "bound.samples": ("samples", int, "random controls for the bound command (default 100)"),
    "sweep.levels": ("levels", int, "refinement levels for the sweep command (default 3)"),
    "output.dir": ("output_dir", str, f"output directory (default ${OUTPUT_DIR_ENV} or ./spdedual-out)"),
    "output.formats": ("formats", str, "comma-separated subset of json,csv (default json,csv)"),
}

_MODES = ("auto", "mean-field", "per-path", "partial")


@dataclass(frozen=True)
class RunConfig:
    problem: str = "lq1d"
    overrides: dict = field(default_factory=dict)
    nx: int | None = None
    nt: int | None = None
    paths: int = 1000
    seed: int = 20240101
    threads: int = 1
    theta: float = 1.0
    resolution: int = 65
    max_iterations: int = 200
    tolerance: float = 1e-7
    relaxation: float = 0.5
    mode: str = "auto"
    samples: int = 100
    levels: int = 3
    output_dir: str = ""
    formats: str = "json,csv"

    def __post_init__(self):
        checks = [
            (self.nx is None or self.nx >= 3, "grid.nx", "must be at least 3"),
            (self.nt is None or self.nt >= 1, "time.nt", "must be at least 1"),
            (self.paths >= 1, "mc.paths", "must be at least 1"),
            (self.seed >= 0, "mc.seed", "must be nonnegative"),
            (self.threads >= 1, "mc.threads", "must be at least 1"),
            (0.0 <= self.theta <= 1.0, "scheme.theta", "must lie in [0, 1]"),
            (self.resolution >= 2, "control.resolution", "must be at least 2"),
            (self.max_iterations >= 1, "iter.max_iterations", "must be at least 1"),
            (self.tolerance > 0, "iter.tolerance", "must be positive"),
            (0.0 < self.relaxation <= 1.0, "iter.relaxation", "must lie in (0, 1]"),
            (self.mode in _MODES, "iter.mode", f"must be one of {', '.join(_MODES)}"),
            (self.samples >= 1, "bound.samples", "must be at least 1"),
            (self.levels >= 1, "sweep.levels", "must be at least 1"),
            (set(self.output_formats) <= {"json", "csv"}, "output.formats", "must list json and/or csv"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ConfigError(f"{key} {msg}")

    @property
    def output_formats(self) -> tuple:
        return tuple(f.strip() for f in self.formats.split(",") if f.strip())

    @property
    def resolved_output_dir(self) -> str:
        return self.output_dir or os.environ.get(OUTPUT_DIR_ENV, "") or "spdedual-out"

    def problem_overrides(self) -> dict:
        out = dict(self.overrides)
        if self.nx is not None:
            out["nx"] = self.nx
        if self.nt is not None:
            out["nt"] = self.nt
        out["resolution"] = self.resolution
        return out

    def with_values(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        """Serializable record of the settings that determine results.

        ``threads`` and the output location are left out: they never change
        the numbers, and reports must be identical across them.
        """
        d = asdict(self)
        for k in ("threads", "output_dir", "formats"):
            d.pop(k)
        d["overrides"] = dict(sorted(d["overrides"].items()))
        return d


def _convert(key, raw, line):
    attr, conv, _ = KEYS[key]
    try:
        return attr, conv(raw)
    except ValueError:
        where = f"line {line}: " if line else ""
        raise ConfigError(f"{where}{key} expects {conv.__name__}, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into ``{key: (value, line_number)}``."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source} line {n}: empty key or value")
        if key not in KEYS and not key.startswith("problem."):
            raise ConfigError(f"{source} line {n}: unknown key {key!r}")
        out[key] = (value, n)
    return out


def build_config(entries: dict, base: RunConfig | None = None) -> RunConfig:
    """Apply ``{key: (value, line)}`` entries on top of ``base``."""
    values = {}
    overrides = dict((base or RunConfig()).overrides)
    for key, (raw, line) in entries.items():
        if key in KEYS:
            attr, v = _convert(key, raw, line)
            values[attr] = v
        else:
            try:
                overrides[key.split(".", 1)[1]] = float(raw)
            except ValueError:
                where = f"line {line}: " if line else ""
                raise ConfigError(f"{where}{key} expects a number, got {raw!r}") from None
    return replace(base or RunConfig(), overrides=overrides, **values)


def load_config(path: str | None = None, assignments=()) -> RunConfig:
    """Read a config file (optional), then apply ``key=value`` command-line assignments."""
    entries = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        entries.update(parse_config_text(text, path))
    try:
        cfg = build_config(entries)
    except ConfigError as exc:
        raise ConfigError(f"{path} {exc}" if path else str(exc)) from None
    if assignments:
        cli = parse_config_text("\n".join(assignments), "--set")
        cfg = build_config({k: (v, 0) for k, (v, _) in cli.items()}, cfg)
    return cfg
