"""Run configuration: a versioned, sectioned key-value document.

    [run]
    version = 1
    probes = evaluate, identities
    seed = 0
    ...

Every key has a default, unknown sections or keys are rejected, and
``serialize(parse_config(text))`` is a fixed point of ``parse_config``.
The weights listed under ``[weights] deltas`` use the sign of the kernel
statement (delta in ]-2, -1[); the coercivity probes run at w = -delta.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields, replace

from .errors import ParseError, RangeError, UnknownKey

CONFIG_VERSION = 1
PROBES = ("evaluate", "identities", "inequalities", "kernel", "lipschitz", "convergence")
PROBE_ALIASES = {"phi-zero": "evaluate", "verify-identities": "identities", "probe-inequalities": "inequalities",
                 "kernel-probe": "kernel"}
KERNEL_WINDOW = (-2.0, -1.0)


@dataclass(frozen=True)
class ChartConfig:
    r_inner: float = 0.3
    r_outer: float = 0.95
    n_ang: int = 12
    q_radial: int = 4


@dataclass(frozen=True)
class Tolerances:
    phi: float = 1e-10
    rate: float = 1.9
    boundary: float = 1e-12
    pairing: float = 1e-6
    pairing_fd: float = 1e-4
    stability: float = 0.2
    kernel_variation: float = 0.2
    lipschitz: float = 0.2


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    probes: tuple[str, ...] = PROBES
    seed: int = 0
    out: str = "reports"
    warn_and_proceed: bool = True
    tau: float = 1.0
    lam: float = 0.5
    deltas: tuple[float, ...] = (-1.5,)
    radii: tuple[float, ...] = (1.0,)
    resolutions: tuple[int, ...] = (32, 64)
    kernel_ladder: tuple[int, ...] = (16, 24, 32)
    family_size: int = 50
    input_seeds: int = 1
    chart: ChartConfig = field(default_factory=ChartConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)


# section -> key -> (RunConfig attribute path, kind)
SCHEMA: dict[str, dict[str, tuple[str, str]]] = {
    "run": {"version": ("version", "int"), "probes": ("probes", "probes"), "seed": ("seed", "int"),
            "out": ("out", "str"), "warn_and_proceed": ("warn_and_proceed", "bool")},
    "model": {"tau": ("tau", "float"), "lambda": ("lam", "float")},
    "weights": {"deltas": ("deltas", "floats"), "R": ("radii", "floats")},
    "ladder": {"resolutions": ("resolutions", "ints"), "kernel": ("kernel_ladder", "ints")},
    "families": {"size": ("family_size", "int"), "input_seeds": ("input_seeds", "int")},
    "chart": {f.name: (f"chart.{f.name}", "float" if f.type == "float" else "int") for f in fields(ChartConfig)},
    "tolerances": {f.name: (f"tolerances.{f.name}", "float") for f in fields(Tolerances)},
}


def _locate(text: str, section: str, key: str) -> tuple[int, int]:
    """1-based line and column of the value of ``key`` inside ``section``."""
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        if current == section:
            m = re.match(r"\s*([^=:\s]+)\s*[=:]\s*", line)
            if m and m.group(1) == key:
                return i, m.end() + 1
    return 0, 0


def _convert(raw: str, kind: str):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "str":
        return raw
    if kind == "bool":
        low = raw.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {raw!r}")
        return low == "true"
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if kind == "floats":
        return tuple(float(s) for s in items)
    if kind == "ints":
        return tuple(int(s) for s in items)
    if kind == "probes":
        out = []
        for s in items:
            name = PROBE_ALIASES.get(s, s)
            if name == "all":
                return PROBES
            if name not in PROBES:
                raise ValueError(f"unknown probe {s!r}")
            out.append(name)
        return tuple(out)
    raise AssertionError(kind)


def _set(cfg: RunConfig, path: str, value) -> RunConfig:
    if "." in path:
        head, tail = path.split(".")
        return replace(cfg, **{head: replace(getattr(cfg, head), **{tail: value})})
    return replace(cfg, **{path: value})


def parse_config(text: str, strict: bool | None = None) -> RunConfig:
    """Parse and validate a config document; ``strict`` overrides ``warn_and_proceed``."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ParseError("key outside any section", e.lineno, 1) from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0]
        lines = text.splitlines()
        line = lines[lineno - 1] if 0 < lineno <= len(lines) else ""
        col = len(line) - len(line.lstrip()) + 1
        raise ParseError(f"expected 'key = value', got {line.strip()!r}", lineno, col) from None
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as e:
        raise ParseError(str(e).split(":")[-1].strip(), e.lineno or 0, 1) from None
    cfg = RunConfig()
    for section in parser.sections():
        if section not in SCHEMA:
            line, _ = _locate_section(text, section)
            raise UnknownKey(f"unknown section [{section}] (line {line})")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                line, col = _locate(text, section, key)
                raise UnknownKey(f"unknown key {section}.{key} (line {line})")
            path, kind = SCHEMA[section][key]
            try:
                value = _convert(raw.strip(), kind)
            except ValueError as e:
                line, col = _locate(text, section, key)
                raise ParseError(f"{section}.{key}: {e}", line, col) from None
            cfg = _set(cfg, path, value)
    if strict is not None:
        cfg = replace(cfg, warn_and_proceed=not strict)
    return validate(cfg)


def _locate_section(text: str, section: str) -> tuple[int, int]:
    for i, line in enumerate(text.splitlines(), start=1):
        if re.match(rf"\s*\[{re.escape(section)}\]", line):
            return i, 1
    return 0, 0


def window_warnings(cfg: RunConfig) -> list[str]:
    """Window violations of the selected probes (kernel: delta in ]-2, -1[)."""
    out = []
    if "kernel" in cfg.probes:
        lo, hi = KERNEL_WINDOW
        out += [f"kernel: delta = {d} outside ]{lo}, {hi}[" for d in cfg.deltas if not lo < d < hi]
    if "inequalities" in cfg.probes:
        from .verify import in_window

        for d in cfg.deltas:
            for est in ("POINCARE_T", "KORN_S", "COERCIVE_U", "ADJ_35CG"):
                if not in_window(est, -d):
                    out.append(f"{est}: w = {-d} outside its window")
    return out


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.version != CONFIG_VERSION:
        raise RangeError(f"unsupported config version {cfg.version}")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise RangeError("seed must be an unsigned 64-bit integer")
    if not 0.0 < cfg.lam < 1.0:
        raise RangeError("lambda must lie in ]0, 1[")
    if not math.isfinite(cfg.tau):
        raise RangeError("tau must be finite")
    if not cfg.deltas or not cfg.radii:
        raise RangeError("deltas and R need at least one value")
    if any(r <= 0 for r in cfg.radii):
        raise RangeError("R must be positive")
    if len(cfg.resolutions) < 2 or any(r < 4 for r in cfg.resolutions):
        raise RangeError("the resolution ladder needs at least two entries >= 4")
    if len(cfg.kernel_ladder) < 2 or any(r < 2 for r in cfg.kernel_ladder):
        raise RangeError("the kernel ladder needs at least two entries >= 2")
    if cfg.family_size < 1 or cfg.input_seeds < 1:
        raise RangeError("family size and input seeds must be positive")
    c = cfg.chart
    if not 0.0 < c.r_inner < c.r_outer < 1.0 or c.n_ang < 2 or c.q_radial < 1:
        raise RangeError("chart needs 0 < r_inner < r_outer < 1, n_ang >= 2, q_radial >= 1")
    if any(v <= 0 for v in (getattr(cfg.tolerances, f.name) for f in fields(Tolerances))):
        raise RangeError("tolerances must be positive")
    bad = window_warnings(cfg)
    if bad and not cfg.warn_and_proceed:
        raise RangeError("; ".join(bad))
    return cfg


def _format(value, kind: str) -> str:
    if kind in ("floats",):
        return ", ".join(repr(float(v)) for v in value)
    if kind in ("ints",):
        return ", ".join(str(int(v)) for v in value)
    if kind == "probes":
        return ", ".join(value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


def _get(cfg: RunConfig, path: str):
    obj = cfg
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def serialize(cfg: RunConfig) -> str:
    """Canonical text with every key spelled out."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (path, kind) in keys.items():
            lines.append(f"{key} = {_format(_get(cfg, path), kind)}")
        lines.append("")
    return "\n".join(lines)
