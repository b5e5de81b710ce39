"""
The attacker side of the global-bit attack.

The attacker maps a large populated region R, hammers it to learn which of
its pages hold a cell at the global-bit offset of the target entry, gives
that page back, maps the target va so the page is reused as a table page,
and hammers the page's neighbours until the global bit flips.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional

from loguru import logger

from ..custom_exceptions import GbHammerStateError, GeometryError
from ..dram.physmem import (
    DEFAULT_THRESHOLD,
    PAGE_SIZE,
    FlipEvent,
    VulnerableBit,
)
from ..oskernel.kernel import Kernel, Process, Segment, Translation
from ..paging.target import find_target_page, global_bit_offset
from ..paging.walker import walk

DEFAULT_REGION_PAGES = 64
# Activations per hammered row, independent of the DRAM threshold.
DEFAULT_ACTIVATIONS = DEFAULT_THRESHOLD

Observer = Callable[[Translation], None]


class Outcome(str, Enum):
    """How a GbHammer attempt ended."""

    SUCCESS = "SUCCESS"
    NO_TARGET_PAGE = "NO_TARGET_PAGE"
    HINT_REFUSED = "HINT_REFUSED"
    REUSE_MISSED = "REUSE_MISSED"
    FLIP_FAILED = "FLIP_FAILED"


@dataclass
class GbHammerReport:
    """What one attempt did and found."""

    target_va: int
    level: int
    global_bit_offset: int
    outcome: Optional[Outcome] = None
    region_va: Optional[int] = None
    target_page: Optional[int] = None
    mapped_va: Optional[int] = None
    observed_bits: int = 0
    flips: List[FlipEvent] = field(default_factory=list)

    def as_dict(self) -> dict:
        """Plain form for reports."""
        return {
            "target_va": self.target_va,
            "level": self.level,
            "global_bit_offset": self.global_bit_offset,
            "outcome": self.outcome.value if self.outcome else None,
            "region_va": self.region_va,
            "target_page": self.target_page,
            "mapped_va": self.mapped_va,
            "observed_bits": self.observed_bits,
            "flip_count": len(self.flips),
        }


def region_hint(kernel: Kernel, level: int, target_va: int) -> int:
    """
    Start of R: shares target_va's tables down to the parent of level and
    takes the neighbouring entry in that parent, so mapping target_va
    later needs exactly one new table at level.
    """
    span = kernel.profile.levels[level - 1].page_span_bytes
    return (target_va - target_va % span) ^ span


class GbHammer:
    """
    One GbHammer attempt, split into the steps a script can drive.

    Args:
        kernel (Kernel): The simulated OS.
        attacker (Process): Attacking process.
        target_va (int): N, the va shared with the victim.
        level (int | None): Level whose entry gets the global bit; the
            leaf level if None.
        length (int): Bytes mapped at target_va.
        region_pages (int): Size of R in pages.
        activations (int | None): Activations per hammered row;
            DEFAULT_ACTIVATIONS if None.
        observer (Observer | None): Called with every MMU translation the
            attacker performs.

    Raises:
        GeometryError: if the level is the root or has no global bit.
    """

    def __init__(
        self,
        kernel: Kernel,
        attacker: Process,
        target_va: int,
        level: Optional[int] = None,
        length: int = PAGE_SIZE,
        region_pages: int = DEFAULT_REGION_PAGES,
        activations: Optional[int] = None,
        observer: Optional[Observer] = None,
    ):
        profile = kernel.profile
        level = profile.leaf_level if level is None else level
        if level < 1:
            raise GeometryError("The root table page is never reallocated.")
        self.kernel = kernel
        self.attacker = attacker
        self.length = length
        self.region_pages = region_pages
        self.activations = activations or DEFAULT_ACTIVATIONS
        self.observer = observer
        self.report = GbHammerReport(
            target_va=target_va,
            level=level,
            global_bit_offset=global_bit_offset(profile, level, target_va),
        )
        self.pages: List[int] = []

    @property
    def pattern(self) -> int:
        """Fill byte of R: the complement of the wanted flip direction."""
        return 0x00 if self.kernel.profile.global_flip_to() else 0xFF

    def _observe(self, translations: List[Translation]) -> None:
        if self.observer:
            for translation in translations:
                self.observer(translation)

    def _hammer(self, row: int) -> None:
        self.report.flips.extend(
            self.kernel.mem.hammer_row(row, self.activations)
        )

    def _finish(self, outcome: Outcome) -> Outcome:
        self.report.outcome = outcome
        logger.info(
            f"GbHammer pid {self.attacker.pid} va "
            f"{self.report.target_va:#x}: {outcome.value}"
        )
        return outcome

    def search(self) -> Optional[int]:
        """
        Map and populate R, hammer all its rows and pick the target page.

        Returns:
            Optional[int]: Physical address of the target page, or None
                (outcome NO_TARGET_PAGE).
        """
        kernel, report = self.kernel, self.report
        length = self.region_pages * PAGE_SIZE
        # Populated R, next to N under the parent of the targeted level.
        report.region_va = kernel.mmap(
            self.attacker,
            region_hint(kernel, report.level, report.target_va),
            length,
            populate=True,
            name="gbhammer-region",
        )
        translations = kernel.write_virtual(
            self.attacker, report.region_va, bytes([self.pattern]) * length
        )
        self._observe(translations)
        self.pages = [t.pa - t.pa % PAGE_SIZE for t in translations]
        geometry = kernel.mem.geometry
        # Hammer every row R touches, then read R back for flipped bits.
        for row in sorted({geometry.row_of(page) for page in self.pages}):
            self._hammer(row)
        data, translations = kernel.read_virtual(
            self.attacker, report.region_va, length
        )
        self._observe(translations)
        observed = self._flipped_bits(data)
        report.observed_bits = len(observed)
        # Only a page with a usable cell at the global-bit offset counts.
        report.target_page = find_target_page(
            kernel.profile,
            report.level,
            report.target_va,
            observed,
            self.pages,
            geometry,
        )
        logger.debug(
            f"GbHammer observed {len(observed)} flips in R, target page "
            f"{report.target_page}"
        )
        if report.target_page is None:
            self._finish(Outcome.NO_TARGET_PAGE)
        return report.target_page

    def _flipped_bits(self, data: bytes) -> List[VulnerableBit]:
        row_bits = self.kernel.mem.geometry.row_bits
        expected = bytes([self.pattern]) * PAGE_SIZE
        found = []
        for index, page in enumerate(self.pages):
            chunk = data[index * PAGE_SIZE : (index + 1) * PAGE_SIZE]
            if chunk == expected:
                continue
            for offset, byte in enumerate(chunk):
                diff = byte ^ self.pattern
                for bit in range(8):
                    if not diff >> bit & 1:
                        continue
                    physical_bit = (page + offset) * 8 + bit
                    row, in_row = divmod(physical_bit, row_bits)
                    found.append(VulnerableBit(row, in_row, byte >> bit & 1))
        return found

    def release_target(self) -> List[int]:
        """
        Return the target page to the kernel; returns the freed frames.

        Raises:
            GbHammerStateError: if the search found no target page.
        """
        return self.kernel.munmap(self.attacker, self.target_slot, PAGE_SIZE)

    @property
    def target_slot(self) -> int:
        """
        Va inside R that maps the target page.

        Raises:
            GbHammerStateError: if the search found no target page.
        """
        page = self.report.target_page
        if page is None:
            raise GbHammerStateError("The search found no target page.")
        return self.report.region_va + self.pages.index(page) * PAGE_SIZE

    def map_target(self) -> bool:
        """
        Map target_va with populate, falling back to a static load when
        the hint is ignored.

        Returns:
            bool: False when target_va could not be obtained
                (outcome HINT_REFUSED).
        """
        kernel, report = self.kernel, self.report
        target_va = report.target_va
        if self.attacker.overlaps(target_va, self.length):
            logger.warning(f"pid {self.attacker.pid} already maps N")
            self._finish(Outcome.HINT_REFUSED)
            return False
        va = kernel.mmap(
            self.attacker,
            target_va,
            self.length,
            populate=True,
            name="gbhammer-target",
        )
        if va != target_va:
            kernel.munmap(self.attacker, va)
            policy = kernel.policy
            if not policy.allow_fixed_static_load or policy.pic_relocation:
                self._finish(Outcome.HINT_REFUSED)
                return False
            logger.debug("mmap hint ignored, loading N as a static segment")
            va = kernel.load_segment(
                self.attacker,
                Segment("gbhammer-target", target_va, size=self.length),
            )
        report.mapped_va = va
        return True

    def hammer_target(self) -> Outcome:
        """
        Hammer the rows next to the target page, now a table page.

        Returns:
            Outcome: SUCCESS, REUSE_MISSED or FLIP_FAILED; an outcome
                decided by an earlier step is returned unchanged.
        """
        kernel, report = self.kernel, self.report
        profile, mem = kernel.profile, kernel.mem
        root = self.attacker.root_table_pa
        if report.outcome is not None:
            return report.outcome
        if report.target_page is None:
            raise GbHammerStateError("hammer_target() needs a search first.")
        result = walk(profile, root, report.target_va, mem)
        if result.pte_locations[report.level].table_pa != report.target_page:
            return self._finish(Outcome.REUSE_MISSED)
        geometry = mem.geometry
        target_row = geometry.row_of(report.target_page)
        region = self.attacker.frames_of(
            report.region_va, len(self.pages) * PAGE_SIZE
        )
        own_rows = {geometry.row_of(frame * PAGE_SIZE) for frame in region}
        radius = mem.hammer.blast_radius
        aggressors = [
            row
            for distance in range(1, radius + 1)
            for row in (target_row - distance, target_row + distance)
            if row in own_rows
        ]
        for row in aggressors:
            self._hammer(row)
        result = walk(profile, root, report.target_va, mem)
        if result.global_:
            return self._finish(Outcome.SUCCESS)
        return self._finish(Outcome.FLIP_FAILED)

    def run(self) -> GbHammerReport:
        """Perform every step in order and return the report."""
        if self.search() is None:
            return self.report
        self.release_target()
        if self.map_target():
            self.hammer_target()
        return self.report


def gbhammer_procedure(
    kernel: Kernel,
    attacker: Process,
    target_va: int,
    level: Optional[int] = None,
    length: int = PAGE_SIZE,
    region_pages: int = DEFAULT_REGION_PAGES,
    activations: Optional[int] = None,
    observer: Optional[Observer] = None,
) -> GbHammerReport:
    """
    Run a complete GbHammer attempt against target_va.

    Returns:
        GbHammerReport: outcome is one of Outcome.
    """
    return GbHammer(
        kernel,
        attacker,
        target_va,
        level=level,
        length=length,
        region_pages=region_pages,
        activations=activations,
        observer=observer,
    ).run()
