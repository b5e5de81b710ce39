"""Multi-level page table walks against simulated physical memory."""
from dataclasses import dataclass
from typing import Optional, Tuple

from ..custom_exceptions import PageFault, WalkError
from ..dram.physmem import PAGE_SIZE, PhysMem
from .profiles import PagingProfile
from .pte import PteView, decode_pte


@dataclass(frozen=True)
class PteLocation:
    """One entry consulted during a walk."""

    level: int
    table_pa: int
    index: int
    entry_pa: int
    raw: int
    global_bit: Optional[int]

    @property
    def global_physical_bit(self) -> Optional[int]:
        """Absolute bit address of this entry's G/nG bit."""
        if self.global_bit is None:
            return None
        return self.entry_pa * 8 + self.global_bit


@dataclass(frozen=True)
class WalkResult:
    """Outcome of a successful walk."""

    pa: int
    global_: bool
    level_hit: int
    pte_locations: Tuple[PteLocation, ...]
    global_level: Optional[int]
    span_bytes: int
    leaf: PteView

    @property
    def frame(self) -> int:
        """Physical frame number of the translation."""
        return self.pa // PAGE_SIZE


def walk(
    profile: PagingProfile, root_pa: int, va: int, mem: PhysMem
) -> WalkResult:
    """
    Translate va by walking the tables rooted at root_pa.

    One entry is read per level. For profiles whose non-leaf global bit
    propagates (RV39) the result is global if any consulted entry is.

    Args:
        profile (PagingProfile): ISA profile.
        root_pa (int): Physical address of the root table.
        va (int): Virtual address.
        mem (PhysMem): Memory holding the tables.

    Returns:
        WalkResult: Translation and the consulted entries.

    Raises:
        WalkError: if root_pa is not table-aligned.
        PageFault: if an entry on the path is not present.
        PhysMemFault: if an entry points outside physical memory.
    """
    if root_pa % profile.root_align:
        raise WalkError(
            f"Root table {root_pa:#x} is not aligned to "
            f"{profile.root_align:#x}."
        )
    table_pa = root_pa
    locations = []
    global_level = None
    for level, spec in enumerate(profile.levels):
        index = spec.index(va)
        entry_pa = table_pa + index * spec.entry_bytes
        raw = mem.read_int(entry_pa, spec.entry_bytes)
        locations.append(
            PteLocation(level, table_pa, index, entry_pa, raw, spec.global_bit)
        )
        view = decode_pte(profile, level, raw)
        if not view.present:
            raise PageFault(va, level)
        is_leaf = level == profile.leaf_level
        counts = is_leaf or profile.nonleaf_global_propagates
        if counts and view.global_effective and global_level is None:
            global_level = level
        if is_leaf:
            span = (
                profile.levels[global_level].page_span_bytes
                if global_level is not None
                else spec.page_span_bytes
            )
            return WalkResult(
                pa=view.frame * PAGE_SIZE + va % PAGE_SIZE,
                global_=global_level is not None,
                level_hit=level,
                pte_locations=tuple(locations),
                global_level=global_level,
                span_bytes=span,
                leaf=view,
            )
        table_pa = view.frame * PAGE_SIZE
    raise WalkError("Profile has no levels.")
