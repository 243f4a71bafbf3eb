"""Declarative experiment files: one primary workload versus secondaries.

An experiment JSON names a cache geometry (preset, file path, or inline
fields), a primary workload, a list of secondary workloads, simulator
parameter overrides, and native-run options.  Workloads are written either
literally (threads + patterns) or through a generator shorthand:

    {"generator": "offchip", "threads": 15, "array_bytes": 2097152}
    {"generator": "onchip", "threads": 4}
    {"generator": "sweep", "threads": 2, "array_bytes": 67108864}
    {"generator": "stream", "kind": "triad", "n_elems": 65536}
    {"generator": "bucketsort", "n_keys": 4096, "seed": 7}

The loader renames the primary to "primary", requires unique secondary
names, and rebases every secondary above the primary's address range at a
conflict-stride multiple, so bank/set structure survives relocation and
each (primary, secondary) pair occupies disjoint arenas.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .geometry import CacheGeometry, GeometryError, conflict_stride, geometry_to_dict, resolve_geometry
from .patterns import (
    PatternError,
    WorkloadSpec,
    gen_bucket_sort,
    gen_offchip_antagonist,
    gen_onchip_antagonist,
    gen_stream,
    gen_xeon_samedie_antagonist,
    relocate,
    validate_workload,
    with_pinning,
    workload_from_dict,
    workload_to_dict,
)
from .simulator import SimConfig

PRIMARY_NAME = "primary"


class ConfigError(ValueError):
    """Raised when an experiment file fails to parse or validate."""


@dataclass(frozen=True)
class NativeOptions:
    duration: float = 1.0
    pins: dict[str, tuple[int, ...]] = field(default_factory=dict)
    hugepages: bool = False

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("native duration must be > 0 seconds")
        object.__setattr__(
            self, "pins", {k: tuple(v) for k, v in self.pins.items()}
        )


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    geometry: CacheGeometry
    sim: SimConfig
    primary: WorkloadSpec
    secondaries: tuple[WorkloadSpec, ...]
    native: NativeOptions = field(default_factory=NativeOptions)


_SIM_FIELDS = {f.name for f in fields(SimConfig)} - {"geometry"}


def _build_workload(d: dict, g: CacheGeometry) -> WorkloadSpec:
    if not isinstance(d, dict):
        raise ConfigError(f"workload must be an object, got {type(d).__name__}")
    if "generator" not in d:
        return workload_from_dict(d)
    kind = d["generator"]
    args = dict(d)
    args.pop("generator")
    name_override = args.pop("name", None)
    try:
        if kind == "offchip":
            w = gen_offchip_antagonist(
                g,
                n_threads=args.pop("threads", 15),
                array_bytes=args.pop("array_bytes", 2 * 1024 * 1024),
                stride=args.pop("stride", None),
                op_mix=args.pop("op_mix", "read"),
            )
        elif kind == "onchip":
            w = gen_onchip_antagonist(g, n_threads=args.pop("threads", 4))
        elif kind == "sweep":
            w = gen_xeon_samedie_antagonist(
                g,
                n_threads=args.pop("threads", 1),
                array_bytes=args.pop("array_bytes", 64 * 1024 * 1024),
            )
        elif kind == "stream":
            w = gen_stream(args.pop("kind"), args.pop("n_elems"))
        elif kind == "bucketsort":
            w = gen_bucket_sort(
                args.pop("n_keys"),
                args.pop("n_buckets", 10),
                args.pop("iterations", 10),
                args.pop("seed", 0),
            )
        else:
            raise ConfigError(f"unknown generator {kind!r}")
    except KeyError as e:
        raise ConfigError(f"generator {kind!r} missing required field {e}") from e
    if args:
        raise ConfigError(f"generator {kind!r} got unknown fields {sorted(args)}")
    if name_override is not None:
        w = WorkloadSpec(str(name_override), w.threads, dict(w.shared_arenas))
    return w


def _rename(w: WorkloadSpec, name: str) -> WorkloadSpec:
    return WorkloadSpec(name, w.threads, dict(w.shared_arenas))


def experiment_from_dict(d: dict) -> ExperimentConfig:
    """Validate and build an experiment; raises ConfigError on any problem."""
    if not isinstance(d, dict):
        raise ConfigError("experiment file must contain a JSON object")
    unknown = set(d) - {"name", "geometry", "sim", "primary", "secondaries", "native"}
    if unknown:
        raise ConfigError(f"unknown top-level fields {sorted(unknown)}")
    try:
        g = resolve_geometry(d.get("geometry", "t1"))
    except (GeometryError, OSError) as e:
        raise ConfigError(f"bad geometry: {e}") from e

    sim_over = d.get("sim", {})
    if not isinstance(sim_over, dict):
        raise ConfigError("sim section must be an object")
    bad = set(sim_over) - _SIM_FIELDS
    if bad:
        raise ConfigError(f"unknown sim fields {sorted(bad)}")
    try:
        sim = SimConfig(geometry=g, **sim_over)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad sim section: {e}") from e

    if "primary" not in d:
        raise ConfigError("experiment needs a primary workload")
    try:
        primary = _rename(_build_workload(d["primary"], g), PRIMARY_NAME)
        secondaries = [_build_workload(s, g) for s in d.get("secondaries", [])]
    except PatternError as e:
        raise ConfigError(str(e)) from e

    names = [s.name for s in secondaries]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate secondary names {dupes}")
    if PRIMARY_NAME in names or "idle" in names:
        raise ConfigError('secondary names "primary" and "idle" are reserved')

    # rebase each secondary above the primary; conflict-stride alignment
    # keeps every access's (bank, set) unchanged by the move
    stride = conflict_stride(g)
    end = primary.end_address()
    sec_base = max((end + stride - 1) // stride * stride, stride)
    secondaries = [relocate(s, sec_base) for s in secondaries]

    native_over = d.get("native", {})
    if not isinstance(native_over, dict):
        raise ConfigError("native section must be an object")
    bad = set(native_over) - {"duration", "pins", "hugepages"}
    if bad:
        raise ConfigError(f"unknown native fields {sorted(bad)}")
    try:
        native = NativeOptions(
            duration=float(native_over.get("duration", 1.0)),
            pins={str(k): tuple(int(c) for c in v)
                  for k, v in native_over.get("pins", {}).items()},
            hugepages=bool(native_over.get("hugepages", False)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad native section: {e}") from e
    known = {PRIMARY_NAME, *names}
    for pinned in native.pins:
        if pinned not in known:
            raise ConfigError(f"pin target {pinned!r} is not a workload in this experiment")

    cfg = ExperimentConfig(
        name=str(d.get("name", "experiment")),
        geometry=g,
        sim=sim,
        primary=primary,
        secondaries=tuple(secondaries),
        native=native,
    )
    for w in (cfg.primary, *cfg.secondaries):
        try:
            validate_workload(w, g.line_size)
        except PatternError as e:
            raise ConfigError(str(e)) from e
    return cfg


def load_experiment(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return experiment_from_dict(d)


def experiment_to_dict(cfg: ExperimentConfig) -> dict:
    """Literal (generator-free) form; feeding it back reproduces cfg exactly."""
    return {
        "name": cfg.name,
        "geometry": geometry_to_dict(cfg.geometry),
        "sim": {f: getattr(cfg.sim, f) for f in sorted(_SIM_FIELDS)},
        "primary": workload_to_dict(cfg.primary),
        "secondaries": [workload_to_dict(s) for s in cfg.secondaries],
        "native": {
            "duration": cfg.native.duration,
            "pins": {k: list(v) for k, v in cfg.native.pins.items()},
            "hugepages": cfg.native.hugepages,
        },
    }


def pinned_workloads(cfg: ExperimentConfig) -> tuple[WorkloadSpec, list[WorkloadSpec]]:
    """Apply the native pin map to the experiment's workloads."""
    prim = cfg.primary
    if PRIMARY_NAME in cfg.native.pins:
        prim = with_pinning(prim, cfg.native.pins[PRIMARY_NAME])
    secs = [
        with_pinning(s, cfg.native.pins[s.name]) if s.name in cfg.native.pins else s
        for s in cfg.secondaries
    ]
    return prim, secs
