"""
Minimal OS model: processes with ASIDs, mmap/munmap with address hints,
page-table page allocation, static binary placement and the MMU path
(TLB lookup, walk on miss, insert).
"""
import itertools
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from loguru import logger

from ..custom_exceptions import (
    OutOfMemory,
    PageFault,
    RegionNotFound,
    SpawnError,
)
from ..dram.physmem import PAGE_SIZE, PhysMem
from ..paging.profiles import PagingProfile
from ..paging.pte import encode_pte, leaf_view, table_view
from ..paging.walker import WalkResult, walk
from ..tlb.tlb import Tlb, TlbEntry, TlbKind
from .frames import FrameAllocator


class AccessKind(str, Enum):
    """Kind of memory access issued by a process."""

    READ = "READ"
    WRITE = "WRITE"
    EXEC = "EXEC"

    @property
    def tlb_kind(self) -> TlbKind:
        """Which TLB serves this access."""
        if self is AccessKind.EXEC:
            return TlbKind.INSTRUCTION
        return TlbKind.DATA


@dataclass(frozen=True)
class KernelPolicy:
    """Mitigation switches, constant for a scenario run."""

    respect_mmap_hint: bool = True
    allow_fixed_static_load: bool = True
    pic_relocation: bool = False
    aslr_seed: int = 0
    mmap_base: int = 0x1000_0000


@dataclass(frozen=True)
class Segment:
    """A statically placed piece of a binary (function or global data)."""

    name: str
    va: int
    data: bytes = b""
    size: int = 0

    @property
    def length(self) -> int:
        """Mapped size rounded up to whole pages."""
        return _round_up(max(self.size, len(self.data), 1))


@dataclass
class Region:
    """A mapped virtual range of one process."""

    va_start: int
    length: int
    populated: bool
    name: str = ""
    static: bool = False

    @property
    def end(self) -> int:
        """First address past the region."""
        return self.va_start + self.length

    def contains(self, va: int) -> bool:
        """True if va falls in the region."""
        return self.va_start <= va < self.end


@dataclass
class Process:
    """A simulated user process and the kernel's bookkeeping for it."""

    pid: int
    asid: int
    root_table_pa: int
    name: str = ""
    role: str = ""
    regions: List[Region] = field(default_factory=list)
    program: list = field(default_factory=list)
    symbols: Dict[str, int] = field(default_factory=dict)
    page_frames: Dict[int, int] = field(default_factory=dict)
    tables: Dict[Tuple[int, int], int] = field(default_factory=dict)
    table_use: Dict[int, int] = field(default_factory=dict)
    root_frames: List[int] = field(default_factory=list)
    mmap_cursor: int = 0
    pic_offset: Optional[int] = None

    def region_at(self, va: int) -> Optional[Region]:
        """Region containing va, if any."""
        for region in self.regions:
            if region.contains(va):
                return region
        return None

    def region_named(self, name: str) -> Optional[Region]:
        """Region with the given name, if any."""
        for region in self.regions:
            if region.name == name:
                return region
        return None

    def overlaps(self, va: int, length: int) -> bool:
        """True if [va, va + length) intersects a mapped region."""
        end = va + length
        return any(r.va_start < end and va < r.end for r in self.regions)

    def frames_of(self, va: int, length: int) -> List[int]:
        """Frames backing the populated pages of a range, in va order."""
        first = va // PAGE_SIZE
        last = (va + length - 1) // PAGE_SIZE
        return [
            self.page_frames[vpn]
            for vpn in range(first, last + 1)
            if vpn in self.page_frames
        ]


@dataclass(frozen=True)
class Translation:
    """Result of one MMU access."""

    va: int
    pa: int
    kind: TlbKind
    hit: bool
    entry: TlbEntry
    misdirected: bool
    walked: Optional[WalkResult] = None
    evicted: Optional[TlbEntry] = None


def _round_up(length: int) -> int:
    return -(-length // PAGE_SIZE) * PAGE_SIZE


class Kernel:
    """
    The OS of one simulated single-core machine.

    Args:
        profile (PagingProfile): Page table format.
        mem (PhysMem): Physical memory; page tables live in it.
        tlb (Tlb): The core's TLB.
        policy (KernelPolicy): Mitigation switches.
    """

    def __init__(
        self,
        profile: PagingProfile,
        mem: PhysMem,
        tlb: Tlb,
        policy: KernelPolicy = KernelPolicy(),
    ):
        self.profile = profile
        self.mem = mem
        self.tlb = tlb
        self.policy = policy
        self.frames = FrameAllocator(mem.capacity // PAGE_SIZE)
        self.processes: Dict[int, Process] = {}
        self._pids = itertools.count(1)
        self._asids = itertools.count(1)

    # Processes

    def spawn(
        self,
        program: Optional[list] = None,
        static_segments: Sequence[Segment] = (),
        name: str = "",
        role: str = "",
    ) -> Process:
        """
        Create a process and load its static segments.

        Args:
            program (list | None): Scripted steps, kept for the scenario.
            static_segments (Sequence[Segment]): Segments to place.
            name (str): Process name.
            role (str): Scenario role (attacker/victim).

        Returns:
            Process: The new process with a fresh ASID.

        Raises:
            SpawnError: on misaligned or colliding segments.
        """
        for segment in static_segments:
            if segment.va % PAGE_SIZE:
                raise SpawnError(
                    f"Segment '{segment.name}' va {segment.va:#x} is not "
                    "page-aligned."
                )
        ranges = sorted((s.va, s.va + s.length) for s in static_segments)
        for (_, end), (start, _) in zip(ranges, ranges[1:]):
            if start < end:
                raise SpawnError(f"Static segments collide at va {start:#x}.")
        root_pages = _round_up(self.profile.root_table_bytes) // PAGE_SIZE
        if root_pages == 1:
            root_frames = [self.frames.allocate()]
        else:
            root_frames = self.frames.allocate_contiguous(
                root_pages,
                align=self.profile.root_align // PAGE_SIZE,
                high=False,
                strict=True,
            )
        root_pa = root_frames[0] * PAGE_SIZE
        self.mem.fill(root_pa, root_pages * PAGE_SIZE)
        proc = Process(
            pid=next(self._pids),
            asid=next(self._asids),
            root_table_pa=root_pa,
            name=name,
            role=role,
            program=list(program or []),
            root_frames=root_frames,
            mmap_cursor=self.policy.mmap_base,
        )
        proc.tables[(0, 0)] = root_frames[0]
        proc.table_use[root_frames[0]] = 0
        self.processes[proc.pid] = proc
        logger.debug(
            f"Spawned pid {proc.pid} ({name or 'unnamed'}) asid {proc.asid} "
            f"root {root_pa:#x}"
        )
        for segment in static_segments:
            self.load_segment(proc, segment)
        return proc

    def _pic_offset(self, proc: Process) -> int:
        if proc.pic_offset is None:
            rng = random.Random(self.policy.aslr_seed * 1_000_003 + proc.pid)
            proc.pic_offset = rng.randrange(1, 1 << 12) << 16
        return proc.pic_offset

    def load_segment(self, proc: Process, segment: Segment) -> int:
        """
        Map and populate a static segment.

        The stated va is used only when fixed static loads are allowed and
        PIC relocation is off; PIC relocation shifts every segment of a
        process by one seeded offset; otherwise the kernel picks the va.

        Returns:
            int: The va the segment was placed at.

        Raises:
            SpawnError: if the placement collides with a mapped region.
            OutOfMemory: if the segment and its tables do not fit.
        """
        length = segment.length
        if self.policy.pic_relocation:
            va = segment.va + self._pic_offset(proc)
        elif self.policy.allow_fixed_static_load:
            va = segment.va
        else:
            va = self._kernel_chosen_va(proc, length)
        if proc.overlaps(va, length):
            raise SpawnError(
                f"Segment '{segment.name}' collides at va {va:#x} "
                f"in pid {proc.pid}."
            )
        self._reserve(proc, va, length)
        self._add_region(
            proc, Region(va, length, True, segment.name, static=True)
        )
        self._populate(proc, va, length, segment.data)
        if segment.name:
            proc.symbols[segment.name] = va
        logger.debug(
            f"pid {proc.pid}: segment '{segment.name}' at {va:#x} "
            f"({length:#x} bytes)"
        )
        return va

    # Mappings

    def mmap(
        self,
        proc: Process,
        hint_va: Optional[int],
        length: int,
        populate: bool = False,
        name: str = "",
    ) -> int:
        """
        Create an anonymous mapping.

        Args:
            proc (Process): Caller.
            hint_va (int | None): Requested start, honoured when the policy
                respects hints and the range is free.
            length (int): Bytes, rounded up to pages.
            populate (bool): Install PTEs now (MAP_POPULATE) instead of on
                first access.
            name (str): Optional region label.

        Returns:
            int: Start of the mapping.

        Raises:
            OutOfMemory: if populate needs more frames than are free.
        """
        if length <= 0:
            raise ValueError("mmap length must be positive")
        if hint_va is not None and hint_va % PAGE_SIZE:
            raise ValueError(f"mmap hint {hint_va:#x} is not page-aligned")
        length = _round_up(length)
        if (
            hint_va is not None
            and self.policy.respect_mmap_hint
            and not proc.overlaps(hint_va, length)
        ):
            va = hint_va
        else:
            va = self._kernel_chosen_va(proc, length)
        if populate:
            self._reserve(proc, va, length)
        self._add_region(proc, Region(va, length, populate, name))
        if populate:
            self._populate(proc, va, length)
        logger.debug(
            f"pid {proc.pid}: mmap hint={_hex(hint_va)} -> {va:#x} "
            f"len {length:#x} populate={populate}"
        )
        return va

    def munmap(
        self, proc: Process, va_start: int, length: Optional[int] = None
    ) -> List[int]:
        """
        Remove a mapping, or a page range inside one.

        Leaf frames are pushed on the free list first, then table pages
        that became empty, so the last freed frame is reused first.

        Args:
            proc (Process): Caller.
            va_start (int): Region start, or start of the range.
            length (int | None): Range length; the whole region if None.

        Returns:
            List[int]: Freed frames in push order.

        Raises:
            RegionNotFound: if no region matches.
        """
        if length is None:
            region = next(
                (r for r in proc.regions if r.va_start == va_start), None
            )
            if region is None:
                raise RegionNotFound(va_start)
            length = region.length
        else:
            length = _round_up(length)
            region = proc.region_at(va_start)
            if (
                region is None
                or va_start % PAGE_SIZE
                or va_start + length > region.end
            ):
                raise RegionNotFound(va_start)
        freed_data, emptied = [], []
        for va in range(va_start, va_start + length, PAGE_SIZE):
            vpn = va // PAGE_SIZE
            if vpn in proc.page_frames:
                freed_data.append(proc.page_frames.pop(vpn))
                emptied.extend(self._clear_leaf(proc, va))
            self.tlb.flush_page(vpn, proc.asid)
        self._split_region(proc, region, va_start, length)
        freed = freed_data + emptied
        self.frames.free(freed)
        logger.debug(
            f"pid {proc.pid}: munmap {va_start:#x} len {length:#x}, "
            f"freed {len(freed_data)} frames + {len(emptied)} tables"
        )
        return freed

    def _reserve(self, proc: Process, va: int, length: int) -> None:
        """
        Check that populating [va, va + length) cannot run out of frames.

        Raises:
            OutOfMemory: if the data pages plus the missing table pages
                exceed the free frames.
        """
        leaf = self.profile.leaf_level
        missing = set()
        for page in range(va, va + length, PAGE_SIZE):
            for level in range(1, leaf + 1):
                key = self._table_key(level, page)
                if key not in proc.tables:
                    missing.add(key)
        needed = length // PAGE_SIZE + len(missing)
        if needed > self.frames.free_count:
            raise OutOfMemory(
                f"Need {needed} frames ({len(missing)} for tables), only "
                f"{self.frames.free_count} free."
            )

    def _add_region(self, proc: Process, region: Region) -> None:
        proc.regions.append(region)
        proc.regions.sort(key=lambda r: r.va_start)

    def _split_region(
        self, proc: Process, region: Region, va: int, length: int
    ) -> None:
        proc.regions.remove(region)
        if region.va_start < va:
            self._add_region(
                proc,
                Region(
                    region.va_start,
                    va - region.va_start,
                    region.populated,
                    region.name,
                    region.static,
                ),
            )
        if va + length < region.end:
            self._add_region(
                proc,
                Region(
                    va + length,
                    region.end - va - length,
                    region.populated,
                    region.name,
                    region.static,
                ),
            )

    def _kernel_chosen_va(self, proc: Process, length: int) -> int:
        va = proc.mmap_cursor
        while True:
            blocking = [
                r
                for r in proc.regions
                if r.va_start < va + length and va < r.end
            ]
            if not blocking:
                break
            va = _round_up(max(r.end for r in blocking))
        proc.mmap_cursor = va + length
        return va

    # Page tables

    def _table_key(self, level: int, va: int) -> Tuple[int, int]:
        # The table of `level` is selected by the parent's index field.
        parent = self.profile.levels[level - 1]
        return level, va >> parent.va_index_bit_range[0]

    def _ensure_tables(self, proc: Process, va: int) -> int:
        table_frame = proc.tables[(0, 0)]
        for level in range(1, len(self.profile.levels)):
            key = self._table_key(level, va)
            if key not in proc.tables:
                frame = self.frames.allocate()
                self.mem.fill(frame * PAGE_SIZE, PAGE_SIZE)
                self._write_entry(
                    level - 1,
                    table_frame,
                    va,
                    encode_pte(
                        self.profile,
                        level - 1,
                        table_view(self.profile, level - 1, frame),
                    ).raw,
                )
                proc.table_use[table_frame] += 1
                proc.tables[key] = frame
                proc.table_use[frame] = 0
                logger.debug(
                    f"pid {proc.pid}: level {level} table for {va:#x} "
                    f"in frame {frame:#x}"
                )
            table_frame = proc.tables[key]
        return table_frame

    def _write_entry(
        self, level: int, table_frame: int, va: int, raw: int
    ) -> None:
        spec = self.profile.levels[level]
        entry_pa = table_frame * PAGE_SIZE + spec.index(va) * spec.entry_bytes
        self.mem.write_int(entry_pa, raw, spec.entry_bytes)

    def _populate(
        self, proc: Process, va: int, length: int, data: bytes = b""
    ) -> None:
        pages = list(range(va, va + length, PAGE_SIZE))
        leaf_tables = [self._ensure_tables(proc, page) for page in pages]
        if len(pages) > 1:
            frames = self.frames.allocate_contiguous(len(pages))
        else:
            frames = [self.frames.allocate()]
        leaf = self.profile.leaf_level
        for page, table_frame, frame in zip(pages, leaf_tables, frames):
            offset = page - va
            chunk = data[offset : offset + PAGE_SIZE]
            self.mem.fill(frame * PAGE_SIZE, PAGE_SIZE)
            if chunk:
                self.mem.write(frame * PAGE_SIZE, chunk)
            raw = encode_pte(self.profile, leaf, leaf_view(frame)).raw
            self._write_entry(leaf, table_frame, page, raw)
            proc.table_use[table_frame] += 1
            proc.page_frames[page // PAGE_SIZE] = frame

    def _clear_leaf(self, proc: Process, va: int) -> List[int]:
        """Clear the leaf entry of va; return table frames that emptied."""
        emptied = []
        for level in range(self.profile.leaf_level, 0, -1):
            key = self._table_key(level, va)
            table_frame = proc.tables[key]
            if level == self.profile.leaf_level:
                self._write_entry(level, table_frame, va, 0)
                proc.table_use[table_frame] -= 1
            # Table still in use, nothing above it changes.
            if proc.table_use[table_frame]:
                break
            # Empty table: unlink it from its parent and free it.
            parent = proc.tables[
                (0, 0) if level == 1 else self._table_key(level - 1, va)
            ]
            self._write_entry(level - 1, parent, va, 0)
            proc.table_use[parent] -= 1
            del proc.tables[key]
            del proc.table_use[table_frame]
            emptied.append(table_frame)
        return emptied

    def table_frame(self, proc: Process, level: int, va: int) -> Optional[int]:
        """Frame of the table at level on va's path, per kernel records."""
        key = (0, 0) if level == 0 else self._table_key(level, va)
        return proc.tables.get(key)

    def owned_frames(self) -> List[int]:
        """Every frame in use by some process (data, tables, roots)."""
        owned = []
        for proc in self.processes.values():
            owned.extend(proc.page_frames.values())
            owned.extend(f for (level, _), f in proc.tables.items() if level)
            owned.extend(proc.root_frames)
        return owned

    # MMU path

    def translate(self, proc: Process, va: int) -> int:
        """Translate by walking alone, bypassing the TLB."""
        return walk(self.profile, proc.root_table_pa, va, self.mem).pa

    def touch(
        self, proc: Process, va: int, access: AccessKind = AccessKind.READ
    ) -> Translation:
        """
        Translate va for proc the way the core does.

        TLB lookup first; on a miss walk the current tables (demand-paging
        a region page that has no PTE yet) and insert an entry carrying the
        walked global flag.

        Returns:
            Translation: pa plus how it was obtained.

        Raises:
            PageFault: for a va outside every region.
        """
        kind = access.tlb_kind
        vpn, offset = divmod(va, PAGE_SIZE)
        entry = self.tlb.lookup(kind, vpn, proc.asid)
        if entry is not None:
            return Translation(
                va=va,
                pa=entry.ppn * PAGE_SIZE + offset,
                kind=kind,
                hit=True,
                entry=entry,
                misdirected=entry.asid != proc.asid,
            )
        try:
            result = walk(self.profile, proc.root_table_pa, va, self.mem)
        except PageFault:
            region = proc.region_at(va)
            if region is None or vpn in proc.page_frames:
                raise
            logger.debug(f"pid {proc.pid}: demand fault at {va:#x}")
            self._populate(proc, vpn * PAGE_SIZE, PAGE_SIZE)
            result = walk(self.profile, proc.root_table_pa, va, self.mem)
        entry = TlbEntry(
            vpn=vpn,
            ppn=result.frame,
            asid=proc.asid,
            global_=result.global_,
            kind=kind,
            span_bytes=result.span_bytes,
        )
        evicted = self.tlb.insert(kind, entry)
        return Translation(
            va=va,
            pa=result.pa,
            kind=kind,
            hit=False,
            entry=entry,
            misdirected=False,
            walked=result,
            evicted=evicted,
        )

    def read_virtual(
        self,
        proc: Process,
        va: int,
        length: int,
        access: AccessKind = AccessKind.READ,
    ) -> Tuple[bytes, List[Translation]]:
        """Read bytes through the MMU, page by page."""
        data, translations = bytearray(), []
        while length > 0:
            chunk = min(length, PAGE_SIZE - va % PAGE_SIZE)
            translation = self.touch(proc, va, access)
            translations.append(translation)
            data += self.mem.read(translation.pa, chunk)
            va += chunk
            length -= chunk
        return bytes(data), translations

    def write_virtual(
        self, proc: Process, va: int, data: bytes
    ) -> List[Translation]:
        """Write bytes through the MMU, page by page."""
        translations = []
        while data:
            chunk = min(len(data), PAGE_SIZE - va % PAGE_SIZE)
            translation = self.touch(proc, va, AccessKind.WRITE)
            translations.append(translation)
            self.mem.write(translation.pa, data[:chunk])
            va += chunk
            data = data[chunk:]
        return translations


def _hex(value: Optional[int]) -> str:
    return "none" if value is None else f"{value:#x}"
