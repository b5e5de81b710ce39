"""
Deterministic scenario engine.

Processes are spawned at tick 0, then every script step runs at its tick
on the single simulated core. Each state change is written to the trace as
one `tick=<n> actor=<pid> event=<KIND> key=value ...` line.
"""
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Set, Tuple

from loguru import logger

from ..custom_exceptions import (
    GbHammerStateError,
    GeometryError,
    ScenarioConfigError,
    SimulationFault,
)
from ..dram.physmem import (
    PAGE_SIZE,
    DramGeometry,
    HammerState,
    PhysMem,
    plant_target_bits,
    seed_vulnerable_bits,
)
from ..oskernel.kernel import (
    AccessKind,
    Kernel,
    KernelPolicy,
    Process,
    Segment,
    Translation,
)
from ..paging.profiles import get_profile
from ..paging.target import global_bit_offset
from ..tlb.tlb import (
    Tlb,
    TlbConfig,
    TlbKind,
    access_sequence_to_evict,
    eviction_set_size,
)
from .blob import BLOB_SIZE, decode_blob, encode_blob
from .config import Action, ProcessDoc, ScenarioConfig, SegmentDoc, StepDoc
from .gbhammer import (
    DEFAULT_REGION_PAGES,
    GbHammer,
    GbHammerReport,
    gbhammer_procedure,
)
from .verdict import Verdict, evaluate

DEFAULT_READ_LENGTH = 64


@dataclass(frozen=True)
class RunResult:
    """Everything a run produced."""

    config: ScenarioConfig
    verdict: Verdict
    outputs: Dict[str, Tuple[str, ...]]
    metrics: dict
    gbhammer: Tuple[dict, ...]
    trace: Tuple[str, ...]


def _field(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return str(value)


def segment_bytes(doc: SegmentDoc) -> bytes:
    """Initial content of a declared segment."""
    if doc.blob is not None:
        return encode_blob(doc.blob)
    if doc.text is not None:
        return doc.text.encode() + b"\0"
    return b""


def merged_span(intervals: Set[Tuple[int, int]]) -> int:
    """Total length of the union of [start, end) intervals."""
    total, reach = 0, None
    for start, end in sorted(intervals):
        if reach is None or start >= reach:
            total += end - start
            reach = end
        elif end > reach:
            total += end - reach
            reach = end
    return total


class Simulation:
    """
    One machine built from a scenario: DRAM, TLB, kernel and processes.

    Args:
        config (ScenarioConfig): Validated scenario.

    Raises:
        ScenarioConfigError: if a GbHammer step targets a level without a
            global bit.
    """

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.profile = get_profile(config.isa)
        dram = config.dram
        geometry = DramGeometry(
            dram.row_size_bytes, dram.row_count, dram.refresh_window_ticks
        )
        self.mem = PhysMem(
            geometry,
            HammerState(dram.threshold, dram.blast_radius),
            seed_vulnerable_bits(geometry, config.seed, dram.density),
        )
        self.mem.add_vulnerable_bits(self._planted_bits(geometry))
        self.tlb = Tlb(
            TlbConfig(
                entries_per_kind=config.tlb.entries,
                replacement=config.tlb.replacement,
                honor_global=config.tlb.honor_global,
                tagging=config.tlb.tagging,
            )
        )
        self.kernel = Kernel(
            self.profile,
            self.mem,
            self.tlb,
            KernelPolicy(
                respect_mmap_hint=config.os.respect_mmap_hint,
                allow_fixed_static_load=config.os.allow_fixed_static_load,
                pic_relocation=config.os.pic_relocation,
                aslr_seed=config.aslr_seed,
                mmap_base=config.os.mmap_base,
            ),
        )
        self.trace: List[str] = []
        self.outputs: Dict[str, List[str]] = {
            doc.name: [] for doc in config.processes
        }
        self.procs: Dict[str, Process] = {}
        self.attacks: Dict[int, GbHammer] = {}
        self.reports: List[GbHammerReport] = []
        self.misdirected: List[Translation] = []
        self._victim_pids: Set[int] = set()
        self._eviction_buffers: Dict[int, int] = {}
        self._tick = 0
        self._window = 0
        self._flips_seen = 0

    def _planted_bits(self, geometry: DramGeometry):
        dram = self.config.dram
        planted = set()
        for p_index, doc in enumerate(self.config.processes):
            for s_index, step in enumerate(doc.script):
                if step.action not in (Action.GBHAMMER, Action.HAMMER_SEARCH):
                    continue
                level = self._level(step)
                try:
                    if level < 1:
                        raise GeometryError("level 0 cannot be targeted")
                    offset = global_bit_offset(self.profile, level, step.va)
                except GeometryError as error:
                    raise ScenarioConfigError(
                        f"processes[{p_index}].script[{s_index}].level",
                        str(error),
                    ) from error
                planted |= plant_target_bits(
                    geometry,
                    self.config.seed,
                    offset,
                    self.profile.global_flip_to(),
                    dram.target_bit_stride_rows,
                )
        return planted

    def _level(self, step: StepDoc) -> int:
        if step.level is None:
            return self.profile.leaf_level
        return step.level

    # Trace

    def _emit(self, pid: int, event: str, fields: Optional[dict] = None):
        parts = [f"tick={self._tick}", f"actor={pid}", f"event={event}"]
        for key, value in (fields or {}).items():
            parts.append(f"{key}={_field(value)}")
        self.trace.append(" ".join(parts))

    def _observe(self, proc: Process, translation: Translation) -> None:
        entry = translation.entry
        self._emit(
            proc.pid,
            "TLB",
            {
                "kind": translation.kind.value,
                "vpn": hex(translation.va // PAGE_SIZE),
                "asid": proc.asid,
                "result": "HIT" if translation.hit else "MISS",
                "serving_asid": entry.asid,
                "global": self.tlb.is_global(entry),
                "pa": hex(translation.pa),
                "misdirected": translation.misdirected,
            },
        )
        if translation.evicted is not None:
            evicted = translation.evicted
            self._emit(
                proc.pid,
                "TLB_EVICT",
                {
                    "kind": evicted.kind.value,
                    "vpn": hex(evicted.vpn),
                    "asid": evicted.asid,
                    "global": self.tlb.is_global(evicted),
                },
            )
        if translation.misdirected and proc.pid in self._victim_pids:
            self.misdirected.append(translation)

    def _observer(self, proc: Process):
        return lambda translation: self._observe(proc, translation)

    def _output(self, proc: Process, line: str) -> None:
        self.outputs[proc.name].append(line)
        self._emit(proc.pid, "OUTPUT", {"text": json.dumps(line)})
        logger.debug(f"[{proc.name}] {line}")

    def _emit_flips(self, proc: Process) -> None:
        for event in self.mem.flip_log[self._flips_seen :]:
            self._emit(
                proc.pid,
                "FLIP",
                {
                    "row": event.row,
                    "bit": event.bit_offset_in_row,
                    "pa": hex(event.pa),
                    "flip_to": event.flip_to,
                    "aggressor": event.aggressor,
                },
            )
        self._flips_seen = len(self.mem.flip_log)

    # Run

    def _spawn(self, doc: ProcessDoc) -> Process:
        proc = self.kernel.spawn(
            program=list(doc.script), name=doc.name, role=doc.role
        )
        if doc.role == "victim":
            self._victim_pids.add(proc.pid)
        self.procs[doc.name] = proc
        self._emit(
            proc.pid,
            "SPAWN",
            {
                "name": doc.name,
                "role": doc.role,
                "asid": proc.asid,
                "root": hex(proc.root_table_pa),
            },
        )
        for segment in doc.segments:
            va = self.kernel.load_segment(
                proc,
                Segment(
                    segment.name,
                    segment.va,
                    segment_bytes(segment),
                    segment.size,
                ),
            )
            self._emit(
                proc.pid,
                "LOAD",
                {
                    "segment": segment.name,
                    "stated": hex(segment.va),
                    "va": hex(va),
                },
            )
        return proc

    def _advance(self, tick: int) -> None:
        self._tick = tick
        window = tick // self.mem.geometry.refresh_window_ticks
        if window != self._window:
            self._window = window
            self.mem.refresh()

    def run(self) -> RunResult:
        """
        Execute the scenario.

        A SimulationFault raised by a step is written as a FAULT line and
        the run goes on.

        Returns:
            RunResult: Verdict, metrics and trace.
        """
        config = self.config
        logger.info(
            f"Running scenario '{config.name}' ({config.isa.value}, "
            f"seed {config.seed})"
        )
        for doc in config.processes:
            self._spawn(doc)
        schedule = sorted(
            (step.tick, doc.name, step)
            for doc in config.processes
            for step in doc.script
        )
        for tick, name, step in schedule:
            self._advance(tick)
            proc = self.procs[name]
            try:
                self._execute(proc, step)
            except SimulationFault as error:
                logger.warning(
                    f"tick {tick} {name} {step.action.value}: {error}"
                )
                self._emit(
                    proc.pid,
                    "FAULT",
                    {
                        "action": step.action.value,
                        "error": json.dumps(str(error)),
                    },
                )
            self._emit_flips(proc)
        result = self._result()
        logger.info(
            f"Scenario '{config.name}' finished, exploit_success="
            f"{result.verdict.exploit_success}"
        )
        return result

    def _result(self) -> RunResult:
        metrics = self.metrics()
        verdict = evaluate(
            self.config,
            self.outputs,
            metrics,
            [r.outcome.value for r in self.reports if r.outcome is not None],
        )
        return RunResult(
            config=self.config,
            verdict=verdict,
            outputs={
                name: tuple(lines) for name, lines in self.outputs.items()
            },
            metrics=metrics,
            gbhammer=tuple(report.as_dict() for report in self.reports),
            trace=tuple(self.trace),
        )

    def metrics(self) -> dict:
        """Counters gathered so far."""
        pages = {t.va // PAGE_SIZE for t in self.misdirected}
        spans = set()
        for translation in self.misdirected:
            span = translation.entry.span_bytes
            start = translation.va - translation.va % span
            spans.add((start, start + span))
        tlb = {}
        for kind in TlbKind:
            stats = self.tlb.stats(kind)
            tlb[kind.value] = {
                "hits": stats.hits,
                "misses": stats.misses,
                "evictions": stats.evictions,
            }
        return {
            "tlb": tlb,
            "misdirection_count": len(self.misdirected),
            "misdirected_pages": len(pages),
            "shared_span_bytes": merged_span(spans),
            "flip_events": len(self.mem.flip_log),
            "flips": [
                {
                    "row": event.row,
                    "bit_offset_in_row": event.bit_offset_in_row,
                    "pa": event.pa,
                    "flip_to": event.flip_to,
                    "aggressor": event.aggressor,
                }
                for event in self.mem.flip_log
            ],
            "refreshes": self.mem.refresh_count,
            "activations": self.mem.total_activations,
        }

    # Steps

    def _address(self, proc: Process, step: StepDoc) -> int:
        if step.va is not None:
            return step.va
        if step.segment not in proc.symbols:
            raise SimulationFault(f"'{step.segment}' is not mapped.")
        return proc.symbols[step.segment]

    def _execute(self, proc: Process, step: StepDoc) -> None:
        handlers = {
            Action.MMAP: self._mmap,
            Action.MUNMAP: self._munmap,
            Action.TOUCH_READ: self._touch,
            Action.TOUCH_WRITE: self._touch,
            Action.CALL_FUNCTION: self._call,
            Action.WRITE_BYTES: self._write_bytes,
            Action.WRITE_FUNCTION_BLOB: self._write_blob,
            Action.HAMMER_SEARCH: self._hammer_search,
            Action.HAMMER_TARGET: self._hammer_target,
            Action.EVICT_TLB_SET: self._evict,
            Action.SLEEP: self._sleep,
            Action.PRINT_READ: self._print_read,
            Action.PRINT: self._print,
            Action.GBHAMMER: self._gbhammer,
        }
        handlers[step.action](proc, step)

    def _mmap(self, proc: Process, step: StepDoc) -> None:
        va = self.kernel.mmap(
            proc,
            step.va,
            step.length or PAGE_SIZE,
            populate=step.populate,
            name=step.name or "",
        )
        if step.name:
            proc.symbols[step.name] = va
        self._emit(
            proc.pid,
            "MMAP",
            {
                "hint": hex(step.va) if step.va is not None else None,
                "va": hex(va),
                "length": step.length or PAGE_SIZE,
                "populate": step.populate,
            },
        )

    def _munmap(self, proc: Process, step: StepDoc) -> None:
        page = None
        if step.target:
            attack = self._attack(proc)
            va = attack.target_slot
            freed = attack.release_target()
            page = hex(attack.report.target_page)
        else:
            va = self._address(proc, step)
            freed = self.kernel.munmap(proc, va, step.length)
            if step.segment:
                del proc.symbols[step.segment]
        self._emit(
            proc.pid,
            "MUNMAP",
            {
                "target": step.target,
                "address": hex(va),
                "page": page,
                "freed": len(freed),
                "last_freed": hex(freed[-1]) if freed else None,
            },
        )

    def _touch(self, proc: Process, step: StepDoc) -> None:
        access = AccessKind.READ
        if step.action is Action.TOUCH_WRITE:
            access = AccessKind.WRITE
        translation = self.kernel.touch(
            proc, self._address(proc, step), access
        )
        self._observe(proc, translation)

    def _call(self, proc: Process, step: StepDoc) -> None:
        va = self._address(proc, step)
        data, translations = self.kernel.read_virtual(
            proc, va, BLOB_SIZE, AccessKind.EXEC
        )
        for translation in translations:
            self._observe(proc, translation)
        value = decode_blob(data, va)
        self._emit(proc.pid, "CALL", {"va": hex(va), "value": value})
        if step.format:
            self._output(proc, step.format.format(value=value))

    def _write(self, proc: Process, va: int, data: bytes) -> None:
        for translation in self.kernel.write_virtual(proc, va, data):
            self._observe(proc, translation)
        self._emit(proc.pid, "WRITE", {"va": hex(va), "bytes": len(data)})

    def _write_bytes(self, proc: Process, step: StepDoc) -> None:
        data = step.text.encode() + b"\0"
        self._write(proc, self._address(proc, step), data)

    def _write_blob(self, proc: Process, step: StepDoc) -> None:
        self._write(proc, self._address(proc, step), encode_blob(step.value))

    def _new_attack(self, proc: Process, step: StepDoc) -> GbHammer:
        attack = GbHammer(
            self.kernel,
            proc,
            step.va,
            level=self._level(step),
            length=step.length or PAGE_SIZE,
            region_pages=step.region_pages or DEFAULT_REGION_PAGES,
            activations=step.activations,
            observer=self._observer(proc),
        )
        self.attacks[proc.pid] = attack
        self.reports.append(attack.report)
        return attack

    def _attack(self, proc: Process) -> GbHammer:
        if proc.pid not in self.attacks:
            raise GbHammerStateError(
                f"pid {proc.pid} has not searched R yet."
            )
        return self.attacks[proc.pid]

    def _hammer_search(self, proc: Process, step: StepDoc) -> None:
        attack = self._new_attack(proc, step)
        page = attack.search()
        self._emit(
            proc.pid,
            "HAMMER_SEARCH",
            {
                "region": hex(attack.report.region_va),
                "observed_bits": attack.report.observed_bits,
                "target_page": hex(page) if page is not None else None,
                "offset": attack.report.global_bit_offset,
            },
        )

    def _report_line(self, proc: Process, report: GbHammerReport) -> None:
        self._emit(
            proc.pid,
            "GBHAMMER",
            {
                "outcome": report.outcome.value,
                "va": hex(report.target_va),
                "level": report.level,
                "offset": report.global_bit_offset,
                "target_page": (
                    hex(report.target_page)
                    if report.target_page is not None
                    else None
                ),
            },
        )

    def _hammer_target(self, proc: Process, step: StepDoc) -> None:
        attack = self._attack(proc)
        attack.report.mapped_va = step.va
        attack.hammer_target()
        self._report_line(proc, attack.report)

    def _gbhammer(self, proc: Process, step: StepDoc) -> None:
        report = gbhammer_procedure(
            self.kernel,
            proc,
            step.va,
            level=self._level(step),
            length=step.length or PAGE_SIZE,
            region_pages=step.region_pages or DEFAULT_REGION_PAGES,
            activations=step.activations,
            observer=self._observer(proc),
        )
        self.reports.append(report)
        self._report_line(proc, report)

    def _eviction_buffer(self, proc: Process) -> int:
        if proc.pid not in self._eviction_buffers:
            pages = eviction_set_size(self.tlb.config)
            self._eviction_buffers[proc.pid] = self.kernel.mmap(
                proc, None, pages * PAGE_SIZE, populate=True, name="evict"
            )
        return self._eviction_buffers[proc.pid]

    def _evict(self, proc: Process, step: StepDoc) -> None:
        kind = step.kind or TlbKind.INSTRUCTION
        access = AccessKind.READ
        if kind is TlbKind.INSTRUCTION:
            access = AccessKind.EXEC
        va = self._address(proc, step)
        base = self._eviction_buffer(proc)
        sequence = access_sequence_to_evict(
            va // PAGE_SIZE, self.tlb.config, base_vpn=base // PAGE_SIZE
        )
        for vpn in sequence:
            self._observe(
                proc, self.kernel.touch(proc, vpn * PAGE_SIZE, access)
            )
        self._emit(
            proc.pid,
            "EVICT_TLB_SET",
            {"kind": kind.value, "pages": len(sequence), "va": hex(va)},
        )
        # Re-create the attacker's own entry for the target page.
        self._observe(proc, self.kernel.touch(proc, va, access))

    def _sleep(self, proc: Process, step: StepDoc) -> None:
        self._emit(
            proc.pid, "SLEEP", {"until": self._tick + step.duration}
        )

    def _print_read(self, proc: Process, step: StepDoc) -> None:
        va = self._address(proc, step)
        data, translations = self.kernel.read_virtual(
            proc, va, step.length or DEFAULT_READ_LENGTH
        )
        for translation in translations:
            self._observe(proc, translation)
        text = data.split(b"\0", 1)[0].decode("utf-8", errors="replace")
        line = (step.format or "{text}").format(text=text)
        self._output(proc, line.rstrip())

    def _print(self, proc: Process, step: StepDoc) -> None:
        self._output(proc, step.text)


def run(config: ScenarioConfig) -> RunResult:
    """Run a scenario on a fresh machine."""
    return Simulation(config).run()
