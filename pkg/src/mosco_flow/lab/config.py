"""INI experiment configs.

Example::

    [experiment]
    name = graph-limit
    p = 2
    eps_list = 1/8, 1/16, 1/32
    T = 0.1
    N = 2000
    initial_data = cosine

    [prox]
    tol = 1e-10

    [output]
    dir = out/graph-limit
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from pathlib import Path

EXPERIMENTS = ("graph-limit", "thin-domain", "boundary-layer", "dynamic-bc", "mosco-check", "prox-bench")
PROFILES = ("cosine", "sine", "bump", "step", "random")
MOSCO_EXAMPLES = ("graph", "thin", "boundary-layer", "tau-neumann", "tau-dirichlet")

# key -> (section, parser name)
KEYS = {
    "name": ("experiment", "choice"),
    "p": ("experiment", "float"),
    "n": ("experiment", "int"),
    "eps_list": ("experiment", "list"),
    "tau_list": ("experiment", "list"),
    "mode": ("experiment", "str"),
    "example": ("experiment", "str"),
    "T": ("experiment", "float"),
    "N": ("experiment", "int"),
    "lambda": ("experiment", "float"),
    "diagnostic_lambda": ("experiment", "float"),
    "initial_data": ("experiment", "str"),
    "seed": ("experiment", "int"),
    "M": ("experiment", "int"),
    "Mx": ("experiment", "int"),
    "My": ("experiment", "int"),
    "delta_power": ("experiment", "float"),
    "tol": ("prox", "float"),
    "max_iter": ("prox", "int"),
    "dir": ("output", "str"),
}


class ConfigError(ValueError):
    """Invalid config; the message names the line and field."""


@dataclass
class ExperimentConfig:
    experiment: str
    p: float = 2.0
    n: int = 1
    eps_list: tuple = ()
    tau_list: tuple = ()
    mode: str = "to_neumann"
    example: str = "graph"
    T: float = 0.1
    N: int = 100
    lam_init: float = 0.0
    diagnostic_lambda: float = 0.05
    initial_data: str = "cosine"
    seed: int = 0
    M: int = 256
    Mx: int = 32
    My: int = 8
    delta_power: float = 0.5
    tol: float = 1e-10
    max_iter: int = 100_000
    output_dir: Path = field(default_factory=lambda: Path("out"))
    source: str = ""

    def echo(self) -> dict:
        d = asdict(self)
        d["output_dir"] = str(self.output_dir)
        d.pop("source")
        d["eps_list"] = list(self.eps_list)
        d["tau_list"] = list(self.tau_list)
        return d

    @property
    def uses_tau(self) -> bool:
        return self.experiment == "dynamic-bc" or (
            self.experiment == "mosco-check" and self.example.startswith("tau"))

    @property
    def sweep(self) -> tuple:
        return self.tau_list if self.uses_tau else self.eps_list


def _line_of(text: str, key: str) -> int:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*[=:]")
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return i
    return 0


def _parse_list(raw: str) -> tuple:
    items = [s.strip() for s in raw.replace(";", ",").split(",") if s.strip()]
    return tuple(float(Fraction(s)) for s in items)


def parse_config(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    """Parse and validate config text; relative output dirs resolve against ``base_dir``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive: n (dimension) vs N (steps)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None) or (exc.errors[0][0] if getattr(exc, "errors", None) else 0)
        raise ConfigError(f"line {line}: cannot parse config ({exc.__class__.__name__})") from exc

    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            canon = {"output_dir": "dir", "experiment": "name"}.get(key, key)
            if canon not in KEYS or KEYS[canon][0] != section:
                raise ConfigError(f"line {_line_of(text, key)}: unknown field {key!r} in [{section}]")
            values[canon] = (key, raw.strip())

    def get(canon, kind, default=None):
        if canon not in values:
            return default
        key, raw = values[canon]
        line = _line_of(text, key)
        try:
            if kind == "float":
                v = float(Fraction(raw)) if "/" in raw else float(raw)
                if not math.isfinite(v):
                    raise ValueError
                return v
            if kind == "int":
                return int(raw, 0)
            if kind == "list":
                return _parse_list(raw)
            return raw
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"line {line}: field {key!r} has invalid value {raw!r}") from None

    def fail(canon, message):
        key = values.get(canon, (canon,))[0]
        raise ConfigError(f"line {_line_of(text, key)}: field {key!r} {message}")

    name = get("name", "str")
    if name is None:
        raise ConfigError("line 0: field 'name' in [experiment] is required")
    if name not in EXPERIMENTS:
        fail("name", f"must be one of {', '.join(EXPERIMENTS)}")
    cfg = ExperimentConfig(experiment=name, source=text)
    cfg.p = get("p", "float", cfg.p)
    cfg.n = get("n", "int", cfg.n)
    cfg.eps_list = get("eps_list", "list", ())
    cfg.tau_list = get("tau_list", "list", ())
    cfg.mode = get("mode", "str", cfg.mode)
    cfg.example = get("example", "str", cfg.example)
    cfg.T = get("T", "float", cfg.T)
    cfg.N = get("N", "int", cfg.N)
    cfg.lam_init = get("lambda", "float", cfg.lam_init)
    cfg.diagnostic_lambda = get("diagnostic_lambda", "float", cfg.diagnostic_lambda)
    cfg.initial_data = get("initial_data", "str", cfg.initial_data)
    cfg.seed = get("seed", "int", cfg.seed)
    cfg.M = get("M", "int", cfg.M)
    cfg.Mx = get("Mx", "int", cfg.Mx)
    cfg.My = get("My", "int", cfg.My)
    cfg.delta_power = get("delta_power", "float", cfg.delta_power)
    cfg.tol = get("tol", "float", cfg.tol)
    cfg.max_iter = get("max_iter", "int", cfg.max_iter)
    out = Path(get("dir", "str", "out"))
    cfg.output_dir = out if out.is_absolute() else Path(base_dir) / out

    if not cfg.p >= 1:
        fail("p", "must be >= 1")
    if not 1 <= cfg.n <= 4:
        fail("n", "must lie in 1..4")
    if not cfg.T > 0:
        fail("T", "must be positive")
    if cfg.N < 1:
        fail("N", "must be >= 1")
    if cfg.lam_init < 0:
        fail("lambda", "must be >= 0")
    if not cfg.diagnostic_lambda > 0:
        fail("diagnostic_lambda", "must be positive")
    if cfg.initial_data not in PROFILES:
        fail("initial_data", f"must be one of {', '.join(PROFILES)}")
    if not cfg.tol > 0:
        fail("tol", "must be positive")
    if cfg.max_iter < 1:
        fail("max_iter", "must be >= 1")
    if not 0 <= cfg.seed < 2**64:
        fail("seed", "must be a 64-bit unsigned integer")
    if cfg.mode not in ("to_neumann", "to_dirichlet"):
        fail("mode", "must be to_neumann or to_dirichlet")
    if cfg.example not in MOSCO_EXAMPLES:
        fail("example", f"must be one of {', '.join(MOSCO_EXAMPLES)}")

    if cfg.uses_tau:
        taus = cfg.tau_list
        if not taus:
            fail("tau_list", "must list at least one value")
        if any(t <= 0 for t in taus):
            fail("tau_list", "entries must be positive")
        towards_zero = (cfg.mode == "to_neumann") if name == "dynamic-bc" else cfg.example == "tau-neumann"
        if not towards_zero and cfg.initial_data not in ("sine", "bump", "step"):
            fail("initial_data", "must vanish at both ends for the Dirichlet limit (sine, bump or step)")
        steps = [b - a for a, b in zip(taus, taus[1:])]
        if any((s >= 0) if towards_zero else (s <= 0) for s in steps):
            fail("tau_list", "must move monotonically towards the limit "
                 + ("(decreasing)" if towards_zero else "(increasing)"))
    else:
        eps = cfg.eps_list
        if not eps:
            fail("eps_list", "must list at least one value")
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            fail("eps_list", "must be strictly decreasing positive values")
        if name in ("graph-limit", "prox-bench") or (name == "mosco-check" and cfg.example == "graph"):
            for e in eps:
                m = 1 / e
                if abs(m - round(m)) > 1e-9 or round(m) < 3:
                    fail("eps_list", f"entry {e!r} is not 1/m with integer m >= 3")
        if name in ("boundary-layer",) or (name == "mosco-check" and cfg.example == "boundary-layer"):
            for e in eps:
                k = e * cfg.M
                if abs(k - round(k)) > 1e-9 or not 1 <= round(k) <= cfg.M // 2:
                    fail("eps_list", f"entry {e!r} is not a multiple of 1/{cfg.M} fitting the interval")
        if (name == "thin-domain" or (name == "mosco-check" and cfg.example == "thin")) and cfg.p <= 1:
            fail("p", "must exceed 1 for the thin domain")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"line 0: cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, path.parent)
