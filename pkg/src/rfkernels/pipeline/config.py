"""Flat ``key = value`` experiment manifests.

Grammar, one entry per line::

    # comment
    key = value          # trailing comments are allowed
    list_key = a, b, c

Keys are case-sensitive and may appear once. Values are parsed according to
the schema of the experiment; every problem in a file is collected and
reported together in one :class:`ConfigError`.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from ..scenarios import SCENARIO_IDS
from .synthetic import GENERATORS

EXPERIMENTS = ("gram", "kpca", "gvi-bench", "igb-trace", "neff")
FOREST_VARIANTS = ("ET", "ET5", "BRF", "Unif")
KERNELS = ("linear", "rbf", "k0", "kP")


class ConfigError(ValueError):
    """All validation problems of one configuration."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    choices: tuple | None = None
    check: Callable[[Any], str | None] | None = None


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    return float(s)


def _list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _str(s: str) -> str:
    return s


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ValueError(s)


def _positive(v):
    return None if v > 0 else "must be > 0"


def _at_least(k):
    return lambda v: None if v >= k else f"must be >= {k}"


def _fraction(v):
    return None if 0 < v < 1 else "must lie in (0, 1)"


_DATA = {
    "dataset": Key(_str, None),
    "generator": Key(_str, None, GENERATORS),
    "n": Key(_int, 600, check=_at_least(4)),
    "p": Key(_int, 5, check=_at_least(2)),
    "noise": Key(_float, None, check=lambda v: None if v >= 0 else "must be >= 0"),
    "target": Key(_str, "target"),
    "task": Key(_str, None, ("classify", "regress")),
    "categorical": Key(_list, ()),
    "test_fraction": Key(_float, 0.3, check=_fraction),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "kpca": {
        **_DATA,
        "kernels": Key(_list, KERNELS, KERNELS),
        "forests": Key(_list, ("ET", "ET5", "BRF", "Unif"), FOREST_VARIANTS),
        "M": Key(_int, 200, check=_at_least(1)),
        "components": Key(_int, 2, check=_at_least(1)),
    },
    "gvi-bench": {
        "scenarios": Key(_list, SCENARIO_IDS, SCENARIO_IDS),
        "replicates": Key(_int, 20, check=_at_least(1)),
        "n": Key(_int, 500, check=_at_least(10)),
        "M": Key(_int, 500, check=_at_least(1)),
        "min_samples_leaf": Key(_int, 5, check=_at_least(1)),
        "n_permutations": Key(_int, 5, check=_at_least(1)),
        "timing": Key(_bool, False),
    },
    "igb-trace": {
        **_DATA,
        "generator": Key(_str, "linear_sine", GENERATORS),
        "n": Key(_int, 200, check=_at_least(4)),
        "loss": Key(_str, None, ("squared", "logistic")),
        "lambda": Key(_float, 0.01, check=_positive),
        "T_end": Key(_float, 1.0, check=lambda v: None if v >= 0 else "must be >= 0"),
        "M_per_step": Key(_int, 50, check=_at_least(1)),
        "depth": Key(_int, 3, check=lambda v: None if 0 <= v <= 12 else "must lie in [0, 12]"),
        "K": Key(_int, 5, check=_at_least(1)),
        "beta": Key(_float, 10.0, check=lambda v: None if v >= 0 else "must be >= 0"),
        "mode": Key(_str, "fresh", ("fresh", "frozen")),
    },
    "gram": {
        **_DATA,
        "generator": Key(_str, "circles", GENERATORS),
        "n": Key(_int, 200, check=_at_least(1)),
        "forest": Key(_str, "ET", FOREST_VARIANTS),
        "kernel": Key(_str, "kP", ("k0", "kP")),
        "M": Key(_int, 200, check=_at_least(1)),
    },
    "neff": {
        **_DATA,
        "generator": Key(_str, "circles", GENERATORS),
        "forests": Key(_list, ("ET", "ET5", "BRF", "Unif"), FOREST_VARIANTS),
        "M": Key(_int, 200, check=_at_least(1)),
    },
}
for _schema in SCHEMAS.values():
    _schema["name"] = Key(_str, None)
    _schema["seed"] = Key(_int, 0, check=lambda v: None if 0 <= v < 2 ** 64 else "must be a 64-bit unsigned integer")


def parse_text(text: str, source: str = "<config>") -> tuple[dict[str, str], list[str]]:
    """Split a manifest into raw ``key -> value`` strings plus syntax problems."""
    raw, problems = {}, []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            problems.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in body.split("=", 1))
        if not key:
            problems.append(f"{source}:{lineno}: empty key")
        elif key in raw:
            problems.append(f"{source}:{lineno}: duplicate key {key!r}")
        else:
            raw[key] = value
    return raw, problems


def validate(experiment: str, raw: dict[str, str], problems: list[str] | None = None,
             source: str = "<config>") -> dict[str, Any]:
    """Typed configuration for ``experiment``; raises :class:`ConfigError` listing every problem."""
    problems = list(problems or [])
    if experiment not in SCHEMAS:
        raise ConfigError([f"unknown experiment {experiment!r}"])
    schema = SCHEMAS[experiment]
    out: dict[str, Any] = {}
    for key in raw:
        if key not in schema:
            problems.append(f"{source}: unknown key {key!r} for {experiment}")
    for key, spec in schema.items():
        if key not in raw:
            out[key] = spec.default
            continue
        try:
            value = spec.parse(raw[key])
        except ValueError:
            problems.append(f"{source}: {key}: cannot parse {raw[key]!r}")
            continue
        if spec.choices is not None:
            items = value if isinstance(value, tuple) else (value,)
            bad = [v for v in items if v not in spec.choices]
            if bad:
                problems.append(f"{source}: {key}: {', '.join(map(str, bad))} not in {{{', '.join(spec.choices)}}}")
                continue
            if isinstance(value, tuple) and not value:
                problems.append(f"{source}: {key}: empty list")
                continue
        if spec.check is not None and value is not None:
            msg = spec.check(value)
            if msg:
                problems.append(f"{source}: {key}: {msg}")
                continue
        out[key] = value
    if "dataset" in schema:
        has_path = out.get("dataset") is not None
        has_gen = out.get("generator") is not None
        if not has_path and not has_gen:
            problems.append(f"{source}: need either 'dataset' (CSV path) or 'generator'")
        if has_path and "generator" in raw:
            problems.append(f"{source}: give 'dataset' or 'generator', not both")
        if has_path:
            out["generator"] = None
            if not Path(out["dataset"]).is_file():
                problems.append(f"{source}: dataset file not found: {out['dataset']}")
            if out.get("task") is None:
                problems.append(f"{source}: 'task' is required with a CSV dataset")
    if problems:
        raise ConfigError(problems)
    out["name"] = out.get("name") or experiment
    return out


def load_config(experiment: str, path=None, overrides: dict[str, str] | None = None) -> dict[str, Any]:
    """Read, merge and validate a manifest (``path=None`` uses the defaults)."""
    raw, problems, source = {}, [], "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([f"{source}: cannot read ({exc.strerror})"]) from None
        raw, problems = parse_text(text, source)
        relative = raw.get("dataset")
        if relative and not Path(relative).is_absolute():
            candidate = Path(path).parent / relative
            if candidate.is_file():
                raw["dataset"] = str(candidate)
    raw.update(overrides or {})
    return validate(experiment, raw, problems, source)
