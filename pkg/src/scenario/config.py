"""
Scenario documents: YAML text parsed into frozen dataclasses.

Every section has documented defaults, unknown keys are rejected with the
dotted key path, and to_dict() serializes the effective configuration so
that parse_scenario(to_dict(config)) == config.
"""
import copy
import dataclasses
import os
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import yaml

from ..custom_exceptions import ScenarioConfigError
from ..dram.physmem import DEFAULT_THRESHOLD, PAGE_SIZE
from ..paging.profiles import Isa
from ..tlb.tlb import Replacement, Tagging, TlbKind

FORMAT_VERSION = 1
ROLES = ("attacker", "victim")
METRICS = (
    "misdirection_count",
    "misdirected_pages",
    "shared_span_bytes",
    "flip_events",
)


class Action(str, Enum):
    """Script step actions."""

    MMAP = "MMAP"
    MUNMAP = "MUNMAP"
    TOUCH_READ = "TOUCH_READ"
    TOUCH_WRITE = "TOUCH_WRITE"
    CALL_FUNCTION = "CALL_FUNCTION"
    WRITE_BYTES = "WRITE_BYTES"
    WRITE_FUNCTION_BLOB = "WRITE_FUNCTION_BLOB"
    HAMMER_SEARCH = "HAMMER_SEARCH"
    HAMMER_TARGET = "HAMMER_TARGET"
    EVICT_TLB_SET = "EVICT_TLB_SET"
    SLEEP = "SLEEP"
    PRINT_READ = "PRINT_READ"
    PRINT = "PRINT"
    GBHAMMER = "GBHAMMER"


# Actions that need a va or a segment name.
_ADDRESSED = {
    Action.TOUCH_READ,
    Action.TOUCH_WRITE,
    Action.CALL_FUNCTION,
    Action.WRITE_BYTES,
    Action.WRITE_FUNCTION_BLOB,
    Action.EVICT_TLB_SET,
    Action.PRINT_READ,
}
_REQUIRED = {
    Action.WRITE_BYTES: ("text",),
    Action.WRITE_FUNCTION_BLOB: ("value",),
    Action.SLEEP: ("duration",),
    Action.PRINT: ("text",),
    Action.HAMMER_SEARCH: ("va",),
    Action.GBHAMMER: ("va",),
}


@dataclass(frozen=True)
class DramSettings:
    """Physical memory geometry, hammer model and vulnerable-bit map."""

    row_size_bytes: int = 8192
    row_count: int = 1024
    refresh_window_ticks: int = 1
    threshold: int = DEFAULT_THRESHOLD
    blast_radius: int = 1
    density: float = 0.02
    target_bit_stride_rows: int = 16


@dataclass(frozen=True)
class TlbSettings:
    """TLB capacity per kind, replacement, PGE analog and tagging."""

    entries: int = 64
    replacement: Replacement = Replacement.LRU
    honor_global: bool = True
    tagging: Tagging = Tagging.VPN


@dataclass(frozen=True)
class OsSettings:
    """Kernel mitigation switches."""

    respect_mmap_hint: bool = True
    allow_fixed_static_load: bool = True
    pic_relocation: bool = False
    aslr_seed: Optional[int] = None
    mmap_base: int = 0x1000_0000


@dataclass(frozen=True)
class SegmentDoc:
    """A static segment; content is a function blob, text or zeros."""

    name: str
    va: int
    size: int = PAGE_SIZE
    blob: Optional[int] = None
    text: Optional[str] = None


@dataclass(frozen=True)
class StepDoc:
    """One scripted step. Which optional fields matter depends on action."""

    tick: int
    action: Action
    va: Optional[int] = None
    segment: Optional[str] = None
    length: Optional[int] = None
    populate: bool = False
    name: Optional[str] = None
    target: bool = False
    value: Optional[int] = None
    text: Optional[str] = None
    format: Optional[str] = None
    kind: Optional[TlbKind] = None
    duration: Optional[int] = None
    level: Optional[int] = None
    region_pages: Optional[int] = None
    activations: Optional[int] = None


@dataclass(frozen=True)
class ProcessDoc:
    """A process: its static segments and its script."""

    name: str
    role: str
    segments: Tuple[SegmentDoc, ...] = ()
    script: Tuple[StepDoc, ...] = ()


@dataclass(frozen=True)
class VerdictRule:
    """
    One expected-output rule.

    Exactly one form is used: {actor, line} (an output line equals the
    text), {actor, contains} (some line contains it) or
    {metric, at_least}.
    """

    actor: Optional[str] = None
    line: Optional[str] = None
    contains: Optional[str] = None
    metric: Optional[str] = None
    at_least: Optional[int] = None

    def describe(self) -> str:
        """Short human-readable form used in reports."""
        if self.metric is not None:
            return f"{self.metric} >= {self.at_least}"
        if self.line is not None:
            return f"{self.actor} printed {self.line!r}"
        return f"{self.actor} printed a line containing {self.contains!r}"


@dataclass(frozen=True)
class ScenarioConfig:
    """A complete, validated scenario."""

    name: str
    isa: Isa = Isa.X86_64
    seed: int = 1
    description: str = ""
    format_version: int = FORMAT_VERSION
    dram: DramSettings = field(default_factory=DramSettings)
    tlb: TlbSettings = field(default_factory=TlbSettings)
    os: OsSettings = field(default_factory=OsSettings)
    processes: Tuple[ProcessDoc, ...] = ()
    verdict: Tuple[VerdictRule, ...] = ()

    @property
    def aslr_seed(self) -> int:
        """Relocation seed, falling back to the scenario seed."""
        if self.os.aslr_seed is None:
            return self.seed
        return self.os.aslr_seed

    def process(self, name: str) -> ProcessDoc:
        """Process document by name."""
        for proc in self.processes:
            if proc.name == name:
                return proc
        raise KeyError(name)


# Parsing


def _as_int(value: Any, path: str) -> int:
    if isinstance(value, bool):
        raise ScenarioConfigError(path, f"expected an integer, got {value}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            pass
        try:
            number = float(value)
        except ValueError:
            number = None
        if number is not None and number.is_integer():
            return int(number)
    raise ScenarioConfigError(path, f"expected an integer, got {value!r}")


def _coerce(value: Any, type_: Any, path: str) -> Any:
    if typing.get_origin(type_) is Union:
        if value is None:
            return None
        (inner,) = [t for t in typing.get_args(type_) if t is not type(None)]
        return _coerce(value, inner, path)
    if isinstance(type_, type) and issubclass(type_, Enum):
        for member in type_:
            if value in (member, member.value, member.name):
                return member
            if isinstance(value, str) and value.upper() in (
                str(member.value).upper(),
                member.name,
            ):
                return member
        valid = ", ".join(str(m.value) for m in type_)
        raise ScenarioConfigError(
            path, f"invalid value {value!r}, expected one of {valid}"
        )
    if type_ is bool:
        if not isinstance(value, bool):
            raise ScenarioConfigError(
                path, f"expected true/false, got {value!r}"
            )
        return value
    if type_ is int:
        return _as_int(value, path)
    if type_ is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ScenarioConfigError(path, f"expected a number, got {value!r}")
    if type_ is str:
        if not isinstance(value, str):
            raise ScenarioConfigError(path, f"expected text, got {value!r}")
        return value
    raise TypeError(f"Unsupported field type {type_!r}")


def _join(path: str, key: Any) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


def _build(cls, data: Any, path: str, nested: Optional[dict] = None):
    """
    Build dataclass cls from a mapping, checking keys and scalar types.

    Args:
        cls: Target dataclass.
        data (Any): Parsed YAML mapping (None means all defaults).
        path (str): Dotted key path of data, for diagnostics.
        nested (dict | None): Field name -> callable(value, path) for
            fields that are not scalars.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioConfigError(path or "<root>", "expected a mapping")
    nested = nested or {}
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ScenarioConfigError(_join(path, key), "unknown key")
    kwargs = {}
    for name, spec in known.items():
        key_path = _join(path, name)
        if name not in data:
            no_default = (
                spec.default is dataclasses.MISSING
                and spec.default_factory is dataclasses.MISSING
            )
            if no_default:
                raise ScenarioConfigError(key_path, "required key missing")
            continue
        if name in nested:
            kwargs[name] = nested[name](data[name], key_path)
        else:
            kwargs[name] = _coerce(data[name], hints[name], key_path)
    try:
        return cls(**kwargs)
    except ValueError as error:
        raise ScenarioConfigError(path or "<root>", str(error)) from error


def _items(value: Any, path: str) -> List[Tuple[str, Any]]:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ScenarioConfigError(path, "expected a list")
    return [(_join(path, i), item) for i, item in enumerate(value)]


def _positive(value: int, path: str) -> None:
    if value <= 0:
        raise ScenarioConfigError(path, f"must be positive, got {value}")


def _parse_dram(data: Any, path: str) -> DramSettings:
    dram = _build(DramSettings, data, path)
    for name in ("row_size_bytes", "row_count", "refresh_window_ticks"):
        _positive(getattr(dram, name), _join(path, name))
    _positive(dram.threshold, _join(path, "threshold"))
    size = dram.row_size_bytes
    if size & (size - 1) or size % PAGE_SIZE:
        raise ScenarioConfigError(
            _join(path, "row_size_bytes"),
            f"must be a power of two multiple of {PAGE_SIZE}",
        )
    if dram.blast_radius < 0:
        raise ScenarioConfigError(_join(path, "blast_radius"), "negative")
    if not 0.0 <= dram.density <= 1.0:
        raise ScenarioConfigError(_join(path, "density"), "must be in [0, 1]")
    if dram.target_bit_stride_rows < 0:
        raise ScenarioConfigError(
            _join(path, "target_bit_stride_rows"), "negative"
        )
    return dram


def _parse_tlb(data: Any, path: str) -> TlbSettings:
    tlb = _build(TlbSettings, data, path)
    _positive(tlb.entries, _join(path, "entries"))
    return tlb


def _parse_os(data: Any, path: str) -> OsSettings:
    settings = _build(OsSettings, data, path)
    if settings.mmap_base % PAGE_SIZE or settings.mmap_base <= 0:
        raise ScenarioConfigError(
            _join(path, "mmap_base"), "must be a positive page-aligned va"
        )
    return settings


def _parse_segment(data: Any, path: str) -> SegmentDoc:
    segment = _build(SegmentDoc, data, path)
    if segment.va % PAGE_SIZE:
        raise ScenarioConfigError(_join(path, "va"), "not page-aligned")
    _positive(segment.size, _join(path, "size"))
    if segment.blob is not None and segment.text is not None:
        raise ScenarioConfigError(path, "blob and text are exclusive")
    return segment


def _parse_step(data: Any, path: str) -> StepDoc:
    step = _build(StepDoc, data, path)
    if step.tick < 0:
        raise ScenarioConfigError(_join(path, "tick"), "negative tick")
    has_address = step.va is not None or step.segment is not None
    if step.va is not None and step.segment is not None:
        raise ScenarioConfigError(path, "va and segment are exclusive")
    if step.action in _ADDRESSED and not has_address:
        raise ScenarioConfigError(
            path, f"{step.action.value} needs a va or a segment"
        )
    if step.action is Action.MUNMAP and not (has_address or step.target):
        raise ScenarioConfigError(
            path, "MUNMAP needs a va, a segment or target: true"
        )
    for name in _REQUIRED.get(step.action, ()):
        if getattr(step, name) is None:
            raise ScenarioConfigError(
                _join(path, name), f"required by {step.action.value}"
            )
    for name in ("length", "duration", "region_pages", "activations"):
        if getattr(step, name) is not None:
            _positive(getattr(step, name), _join(path, name))
    if step.format is not None:
        try:
            step.format.format(value=0, text="")
        except (KeyError, IndexError, ValueError) as error:
            raise ScenarioConfigError(
                _join(path, "format"),
                "only {value} and {text} placeholders are allowed",
            ) from error
    return step


def _parse_process(data: Any, path: str) -> ProcessDoc:
    proc = _build(
        ProcessDoc,
        data,
        path,
        nested={
            "segments": lambda v, p: tuple(
                _parse_segment(item, ip) for ip, item in _items(v, p)
            ),
            "script": lambda v, p: tuple(
                _parse_step(item, ip) for ip, item in _items(v, p)
            ),
        },
    )
    if proc.role not in ROLES:
        raise ScenarioConfigError(
            _join(path, "role"), f"expected one of {', '.join(ROLES)}"
        )
    known = {segment.name for segment in proc.segments}
    previous = None
    for index, step in enumerate(proc.script):
        step_path = _join(_join(path, "script"), index)
        if previous is not None:
            earliest = previous.tick + 1
            if previous.action is Action.SLEEP:
                earliest = previous.tick + previous.duration
            if step.tick < earliest:
                raise ScenarioConfigError(
                    _join(step_path, "tick"),
                    f"tick {step.tick} must be at least {earliest}",
                )
        if step.segment is not None and step.segment not in known:
            raise ScenarioConfigError(
                _join(step_path, "segment"),
                f"unknown segment or mapping '{step.segment}'",
            )
        if step.action is Action.MMAP and step.name:
            known.add(step.name)
        previous = step
    return proc


def _parse_rule(data: Any, path: str) -> VerdictRule:
    rule = _build(VerdictRule, data, path)
    if rule.metric is not None:
        if rule.metric not in METRICS:
            raise ScenarioConfigError(
                _join(path, "metric"),
                f"expected one of {', '.join(METRICS)}",
            )
        if rule.at_least is None or rule.actor or rule.line or rule.contains:
            raise ScenarioConfigError(
                path, "a metric rule takes exactly metric and at_least"
            )
        return rule
    texts = [t for t in (rule.line, rule.contains) if t is not None]
    if rule.actor is None or len(texts) != 1 or rule.at_least is not None:
        raise ScenarioConfigError(
            path, "an output rule takes actor plus one of line/contains"
        )
    return rule


def parse_scenario(data: Any) -> ScenarioConfig:
    """
    Validate a parsed YAML document and build the scenario.

    Args:
        data (Any): Result of yaml.safe_load().

    Returns:
        ScenarioConfig: The validated scenario.

    Raises:
        ScenarioConfigError: naming the offending key path.
    """
    config = _build(
        ScenarioConfig,
        data,
        "",
        nested={
            "dram": _parse_dram,
            "tlb": _parse_tlb,
            "os": _parse_os,
            "processes": lambda v, p: tuple(
                _parse_process(item, ip) for ip, item in _items(v, p)
            ),
            "verdict": lambda v, p: tuple(
                _parse_rule(item, ip) for ip, item in _items(v, p)
            ),
        },
    )
    if config.format_version != FORMAT_VERSION:
        raise ScenarioConfigError(
            "format_version",
            f"unsupported version {config.format_version}, "
            f"expected {FORMAT_VERSION}",
        )
    if not config.processes:
        raise ScenarioConfigError("processes", "at least one process needed")
    _check_schedule(config)
    names = [proc.name for proc in config.processes]
    for index, rule in enumerate(config.verdict):
        if rule.actor is not None and rule.actor not in names:
            raise ScenarioConfigError(
                f"verdict[{index}].actor", f"no process named '{rule.actor}'"
            )
    return config


def _check_schedule(config: ScenarioConfig) -> None:
    seen: Dict[str, str] = {}
    owner: Dict[int, str] = {}
    for p_index, proc in enumerate(config.processes):
        if proc.name in seen:
            raise ScenarioConfigError(
                f"processes[{p_index}].name", f"duplicate name '{proc.name}'"
            )
        seen[proc.name] = proc.role
        for s_index, step in enumerate(proc.script):
            if step.tick in owner:
                raise ScenarioConfigError(
                    f"processes[{p_index}].script[{s_index}].tick",
                    f"tick {step.tick} already used by '{owner[step.tick]}'",
                )
            owner[step.tick] = proc.name


def load_scenario(
    path: str | os.PathLike, overrides: Iterable[str] = ()
) -> ScenarioConfig:
    """
    Read a YAML scenario file, apply --set overrides and validate.

    Raises:
        ScenarioConfigError: for a missing file, broken YAML or an
            invalid document.
    """
    try:
        with Path(path).open(encoding="utf-8") as fr:
            data = yaml.safe_load(fr)
    except FileNotFoundError as error:
        raise ScenarioConfigError(str(path), "file not found") from error
    except yaml.YAMLError as error:
        raise ScenarioConfigError(
            str(path), f"invalid YAML: {error}"
        ) from error
    return parse_scenario(apply_overrides(data, overrides))


# Serializing and overrides


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if dataclasses.is_dataclass(value):
        return {
            f.name: _plain(getattr(value, f.name))
            for f in dataclasses.fields(value)
        }
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def _drop_unset_step_fields(step: Dict[str, Any]) -> Dict[str, Any]:
    defaults = {
        f.name: f.default
        for f in dataclasses.fields(StepDoc)
        if f.default is not dataclasses.MISSING
    }
    return {
        key: value
        for key, value in step.items()
        if key not in defaults or value != defaults[key]
    }


def to_dict(config: ScenarioConfig) -> Dict[str, Any]:
    """Effective configuration as plain data, defaults included."""
    data = _plain(config)
    for proc in data["processes"]:
        proc["segments"] = [
            {k: v for k, v in seg.items() if v is not None}
            for seg in proc["segments"]
        ]
        proc["script"] = [
            _drop_unset_step_fields(step) for step in proc["script"]
        ]
    data["verdict"] = [
        {k: v for k, v in rule.items() if v is not None}
        for rule in data["verdict"]
    ]
    return data


def dump_scenario(config: ScenarioConfig) -> str:
    """Serialize to YAML text."""
    return yaml.safe_dump(to_dict(config), sort_keys=False)


def apply_overrides(data: Any, overrides: Iterable[str]) -> Any:
    """
    Apply key=value overrides to a raw document.

    Keys are dotted paths; list items are addressed by number
    (processes.0.script.1.tick). Values are parsed as YAML scalars.

    Returns:
        Any: A modified deep copy of data.

    Raises:
        ScenarioConfigError: on a malformed override or a path through a
            non-container.
    """
    data = copy.deepcopy(data) if data is not None else {}
    for override in overrides:
        key, sep, raw = override.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ScenarioConfigError(
                override, "override must look like key=value"
            )
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as error:
            raise ScenarioConfigError(key, f"bad value {raw!r}") from error
        parts = key.split(".")
        node = data
        for depth, part in enumerate(parts[:-1]):
            node = _descend(node, part, ".".join(parts[: depth + 1]))
        last = parts[-1]
        if isinstance(node, list):
            node[_list_index(node, last, key)] = value
        elif isinstance(node, dict):
            node[last] = value
        else:
            raise ScenarioConfigError(key, "path leads through a scalar")
    return data


def _list_index(node: list, part: str, path: str) -> int:
    if not part.isdigit() or int(part) >= len(node):
        raise ScenarioConfigError(path, f"no list item {part}")
    return int(part)


def _descend(node: Any, part: str, path: str) -> Any:
    if isinstance(node, list):
        return node[_list_index(node, part, path)]
    if not isinstance(node, dict):
        raise ScenarioConfigError(path, "path leads through a scalar")
    if node.get(part) is None:
        node[part] = {}
    return node[part]
