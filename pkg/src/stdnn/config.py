"""Plain ``key = value`` run configuration shared by every subcommand."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

from .descriptor import DEFAULT_HIDDEN, DEFAULT_LAYER_ALPHA, DEFAULT_SCALES


class ConfigError(ValueError):
    """Bad key, value or range; the message names the key (and line if known)."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_str(text: str):
    text = text.strip()
    return None if text.lower() in ("", "none") else text


def _list(item):
    def parse(text: str):
        parts = [p for p in text.replace(",", " ").split() if p]
        return tuple(item(p) for p in parts)
    return parse


def _opt(parse, check=None, help=""):
    return {"parse": parse, "check": check, "help": help}


def _ge(lo):
    return lambda v: v >= lo, f">= {lo}"


def _gt(lo):
    return lambda v: v > lo, f"> {lo}"


def _all(check):
    test, text = check
    return lambda vs: len(vs) > 0 and all(test(v) for v in vs), f"a nonempty list of values {text}"


def _choice(*names):
    return lambda v: v in names, "one of " + ", ".join(names)


@dataclass(frozen=True)
class RunConfig:
    # paths
    dataset: str | None = field(default=None, metadata=_opt(_optional_str, help="directory with images/ and labels/"))
    image: str | None = field(default=None, metadata=_opt(_optional_str, help="input image"))
    weights: str | None = field(default=None, metadata=_opt(_optional_str, help="weights file"))
    seg: str | None = field(default=None, metadata=_opt(_optional_str, help="label map to score"))
    gt: str | None = field(default=None, metadata=_opt(_optional_str, help="ground-truth label map"))
    out: str = field(default="out", metadata=_opt(str, help="output directory"))
    threads: int = field(default=1, metadata=_opt(int, _ge(1), "worker cap"))
    normalize: bool = field(default=False, metadata=_opt(_bool, help="z-score every image channel"))
    # network
    hidden: tuple = field(default=DEFAULT_HIDDEN, metadata=_opt(_list(int), _all(_ge(1)), "layer widths"))
    scales: tuple = field(default=DEFAULT_SCALES, metadata=_opt(_list(float), _all(_gt(0.0)), "preprocessing alphas"))
    orientations: tuple = field(default=(0.0, 45.0, 90.0, 135.0),
                                metadata=_opt(_list(float), help="gradient angles in degrees"))
    layer_alpha: float = field(default=DEFAULT_LAYER_ALPHA, metadata=_opt(float, _ge(0.0)))
    init_seed: int = field(default=0, metadata=_opt(int, _ge(0)))
    # training
    learning_rate: float = field(default=0.02, metadata=_opt(float, _gt(0.0)))
    epochs: int = field(default=150, metadata=_opt(int, _ge(1)))
    batch: int = field(default=4, metadata=_opt(int, _ge(1)))
    seed: int = field(default=0, metadata=_opt(int, _ge(0)))
    momentum: float = field(default=0.0, metadata=_opt(float, (lambda v: 0 <= v < 1, "in [0, 1)")))
    downsample_factor: int = field(default=0, metadata=_opt(int, _ge(0), "0 picks the factor automatically"))
    solver: str = field(default="direct", metadata=_opt(str, _choice("cg", "direct")))
    # segmentation
    n: int = field(default=2, metadata=_opt(int, _ge(2), "number of regions"))
    beta: float = field(default=1.0, metadata=_opt(float, _ge(0.0)))
    dt: float = field(default=0.25, metadata=_opt(float, _gt(0.0)))
    dilation_radius: int = field(default=5, metadata=_opt(int, _ge(1)))
    inner_steps: int = field(default=20, metadata=_opt(int, _ge(1)))
    max_iters: int = field(default=100, metadata=_opt(int, _ge(1)))
    multistart: bool = field(default=True, metadata=_opt(_bool))
    monotone: bool = field(default=True, metadata=_opt(_bool))
    alpha_exponent: float = field(default=2.0, metadata=_opt(float, _ge(0.0)))
    # evaluation and probes
    boundary_tol: float = field(default=2.0, metadata=_opt(float, _ge(0.0)))
    norms: tuple = field(default=(0.0, 10.0, 20.0, 40.0, 80.0), metadata=_opt(_list(float), _all(_ge(0.0))))
    seeds: tuple = field(default=(0, 1, 2, 3, 4), metadata=_opt(_list(int), _all(_ge(0))))
    angles: tuple = field(default=(90.0,), metadata=_opt(_list(float), help="probe rotations in degrees"))
    shift: tuple = field(default=(0, 0), metadata=_opt(_list(int), (lambda v: len(v) == 2, "two integers dy, dx")))
    n_max: int = field(default=10, metadata=_opt(int, _ge(0)))
    # gradient check
    check_size: int = field(default=8, metadata=_opt(int, _ge(2)))
    check_hidden: tuple = field(default=(6, 3), metadata=_opt(_list(int), _all(_ge(1))))
    check_scales: tuple = field(default=(5.0,), metadata=_opt(_list(float), _all(_gt(0.0))))
    check_eps: float = field(default=1e-5, metadata=_opt(float, _gt(0.0)))
    # synthetic data
    count: int = field(default=10, metadata=_opt(int, _ge(1)))
    size: int = field(default=32, metadata=_opt(int, _ge(4)))
    kind: str = field(default="halfplane", metadata=_opt(str, _choice("halfplane", "disc", "mixed")))

    def with_values(self, values: dict, where: dict | None = None) -> "RunConfig":
        """Parse and validate string `values`; `where` maps keys to a location for messages."""
        where = where or {}
        known = {f.name: f for f in fields(self)}
        parsed = {}
        for key, text in values.items():
            loc = f" ({where[key]})" if key in where else ""
            if key not in known:
                raise ConfigError(f"unknown key {key!r}{loc}")
            meta = known[key].metadata
            try:
                value = meta["parse"](text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}{loc}: {exc}") from None
            check = meta["check"]
            if check is not None and not check[0](value):
                raise ConfigError(f"{key!r}{loc} must be {check[1]}, got {text.strip()!r}")
            parsed[key] = value
        return replace(self, **parsed)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def parse_text(text: str, source: str = "<config>") -> tuple[dict, dict]:
    """Split config text into ``{key: raw value}`` and ``{key: "file:line"}``."""
    values, where = {}, {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: missing key")
        if key in values:
            raise ConfigError(f"duplicate key {key!r} ({source}:{number})")
        values[key] = value
        where[key] = f"{source}:{number}"
    return values, where


def load(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at `path`, then `overrides` (raw strings)."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values, where = parse_text(text, str(path))
        cfg = cfg.with_values(values, where)
    if overrides:
        cfg = cfg.with_values(overrides, {k: "command line" for k in overrides})
    return cfg


def option_help() -> dict:
    return {f.name: f.metadata.get("help", "") for f in fields(RunConfig)}
