"""Global-bit geometry: where an attacker has to flip, and on which page."""
from typing import Iterable, List, Optional, Sequence, Tuple

from ..custom_exceptions import GeometryError
from ..dram.physmem import PAGE_SIZE, DramGeometry, VulnerableBit
from .profiles import PagingProfile


def va_indices(profile: PagingProfile, va: int) -> List[int]:
    """Entry index of va at every level, root first."""
    return [spec.index(va) for spec in profile.levels]


def global_bit_offset(profile: PagingProfile, level: int, va: int) -> int:
    """
    Bit offset, inside a table page of the given level, of the G/nG bit
    of the entry that translates va.

    Args:
        profile (PagingProfile): ISA profile.
        level (int): Level index, 0 is the root.
        va (int): Virtual address.

    Returns:
        int: entry_width_bits * index + global_bit.

    Raises:
        GeometryError: if entries of that level have no global bit.
    """
    if not 0 <= level < len(profile.levels):
        raise GeometryError(
            f"{profile.isa.value} has no level {level} "
            f"(levels 0..{profile.leaf_level})."
        )
    spec = profile.levels[level]
    if spec.global_bit is None:
        raise GeometryError(
            f"{profile.isa.value} level {level} entries have no global bit."
        )
    return spec.entry_width_bits * spec.index(va) + spec.global_bit


def in_page_bit(
    geometry: DramGeometry, bit: VulnerableBit
) -> Tuple[int, int]:
    """Return (page physical address, bit offset inside that page)."""
    physical_bit = bit.physical_bit(geometry)
    page_pa = (physical_bit // 8) // PAGE_SIZE * PAGE_SIZE
    return page_pa, physical_bit - page_pa * 8


def find_target_page(
    profile: PagingProfile,
    level: int,
    va: int,
    vuln_map: Iterable[VulnerableBit],
    region: Sequence[int],
    geometry: DramGeometry = DramGeometry(),
) -> Optional[int]:
    """
    Find a page that would become a global entry for va once reused as a
    table page of the given level.

    Args:
        profile (PagingProfile): ISA profile.
        level (int): Level whose table page the candidate would become.
        va (int): Target virtual address.
        vuln_map (Iterable[VulnerableBit]): Known vulnerable cells.
        region (Sequence[int]): Candidate page-aligned physical pages.
        geometry (DramGeometry): Row layout used to place the cells.

    Returns:
        Optional[int]: First matching page of region, or None.
    """
    for page in region:
        if page % PAGE_SIZE:
            raise ValueError(f"Candidate page {page:#x} is not page-aligned")
    offset = global_bit_offset(profile, level, va)
    wanted = profile.global_flip_to()
    matching = set()
    for bit in vuln_map:
        if bit.flip_to != wanted:
            continue
        page_pa, bit_in_page = in_page_bit(geometry, bit)
        if bit_in_page == offset:
            matching.add(page_pa)
    for page in region:
        if page in matching:
            return page
    return None
