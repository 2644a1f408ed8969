"""Experiment configuration: TOML in, deterministic TOML out.

Configs round-trip exactly: parse -> serialize -> parse yields an equal
config, and serialization is byte-deterministic (sorted keys, repr floats),
so re-frozen files compare byte-identical.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

EXPERIMENT_KINDS = (
    "check-assumptions",
    "heat-kernel",
    "exit-prob",
    "lower-bound",
    "reversal",
    "levy",
    "poincare",
    "harnack",
    "counterexample",
    "homogenize",
    "clt",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    model: Dict[str, Any] = field(default_factory=dict)
    params: Dict[str, Any] = field(default_factory=dict)
    tolerances: Dict[str, Any] = field(default_factory=dict)
    output_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(
                f"unknown experiment kind {self.kind!r}; choose from {EXPERIMENT_KINDS}"
            )

    def to_mapping(self) -> Dict[str, Any]:
        return {
            "experiment": {
                "kind": self.kind,
                "seed": self.seed,
                "output_dir": self.output_dir,
                "workers": self.workers,
            },
            "model": self.model,
            "params": self.params,
            "tolerances": self.tolerances,
        }

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()[:16]


def parse_mapping(data: Dict[str, Any]) -> ExperimentConfig:
    exp = data.get("experiment", {})
    if "kind" not in exp:
        raise ConfigError("missing [experiment] kind")
    return ExperimentConfig(
        kind=exp["kind"],
        seed=int(exp.get("seed", 0)),
        model=data.get("model", {}),
        params=data.get("params", {}),
        tolerances=data.get("tolerances", {}),
        output_dir=exp.get("output_dir", "out"),
        workers=int(exp.get("workers", 1)),
    )


def load(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return parse_mapping(tomllib.load(fh))


def parse(text: str) -> ExperimentConfig:
    return parse_mapping(tomllib.loads(text))


# ---------------------------------------------------------------------------
# Deterministic TOML emission (scalars, lists, nested tables)
# ---------------------------------------------------------------------------


def _fmt_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        r = repr(v)
        if "e" not in r and "." not in r and "inf" not in r and "nan" not in r:
            r += ".0"
        return r
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise ConfigError(f"unsupported scalar {v!r}")


def _fmt_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    return _fmt_scalar(v)


def _is_table_array(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(isinstance(x, dict) for x in v)


def _emit_body(
    name: str, table: Dict[str, Any], out: List[str], header: str, force: bool = False
):
    arrays = {k: v for k, v in table.items() if _is_table_array(v)}
    subtables = {k: v for k, v in table.items() if isinstance(v, dict)}
    scalars = {
        k: v for k, v in table.items() if k not in arrays and k not in subtables
    }
    if scalars or force or not (subtables or arrays):
        out.append(header)
        for k in sorted(scalars):
            out.append(f"{k} = {_fmt_value(scalars[k])}")
        out.append("")
    for k in sorted(subtables):
        _emit_body(f"{name}.{k}", subtables[k], out, f"[{name}.{k}]")
    for k in sorted(arrays):
        for item in arrays[k]:
            # Array-of-tables items always need their own header, even when
            # they carry no scalar entries.
            _emit_body(f"{name}.{k}", item, out, f"[[{name}.{k}]]", force=True)


def _emit_table(name: str, table: Dict[str, Any], out: List[str]):
    _emit_body(name, table, out, f"[{name}]")


def serialize(cfg: ExperimentConfig) -> str:
    out: List[str] = []
    mapping = cfg.to_mapping()
    for section in ("experiment", "model", "params", "tolerances"):
        table = mapping[section]
        if table or section == "experiment":
            _emit_table(section, table, out)
    return "\n".join(out).rstrip("\n") + "\n"


def save(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(serialize(cfg))
