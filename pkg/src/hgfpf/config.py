"""INI experiment configuration.

    [experiment]
    kind = benchmark          ; gain_compare | convergence_M | convergence_Np | benchmark
    seeds = 0-49              ; comma-separated integers and inclusive ranges
    output_dir = results/benchmark
    workers = 1               ; processes for the Monte Carlo loop

    [parameters]
    T = 40                    ; any key of experiments.DEFAULTS[kind]

Unknown sections or keys are errors. Omitted keys take the defaults listed
in ``experiments.DEFAULTS`` and ``experiments.DEFAULT_SEEDS``.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .experiments import ExperimentSpec

__all__ = ["ConfigError", "load_config", "parse_seeds"]

_EXPERIMENT_KEYS = {"kind", "seeds", "output_dir", "workers"}


class ConfigError(ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    """'0-3,7' -> [0, 1, 2, 3, 7]."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                a, b = int(lo), int(hi)
                if b < a:
                    raise ConfigError(f"empty seed range {part!r}")
                seeds.extend(range(a, b + 1))
            else:
                seeds.append(int(part))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad seed entry {part!r}") from None
    if not seeds:
        raise ConfigError("no seeds given")
    return seeds


def load_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys such as Np and T are case-sensitive
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    extra = sorted(set(parser.sections()) - {"experiment", "parameters"})
    if extra:
        raise ConfigError(f"{path}: unknown section(s): {', '.join(extra)}")
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    exp = dict(parser["experiment"])
    unknown = sorted(set(exp) - _EXPERIMENT_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) in [experiment]: {', '.join(unknown)}")
    if "kind" not in exp:
        raise ConfigError(f"{path}: [experiment] needs a kind")
    params = dict(parser["parameters"]) if parser.has_section("parameters") else {}
    try:
        return ExperimentSpec(
            kind=exp["kind"].strip(),
            parameters=params,
            seeds=parse_seeds(exp["seeds"]) if "seeds" in exp else [],
            output_dir=Path(exp.get("output_dir", "out")),
            workers=int(exp.get("workers", 1)),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
