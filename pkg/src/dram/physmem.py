"""
This module models physical memory as DRAM rows and implements a
threshold-based RowHammer bit-flip injector.
"""
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Set

from loguru import logger

from ..custom_exceptions import PhysMemFault

PAGE_SIZE = 4096
DEFAULT_THRESHOLD = 50_000
# Keeps planted bits independent from the random vulnerable-bit stream.
_PLANT_SALT = 0x6762_6861_6D6D_6572


@dataclass(frozen=True)
class DramGeometry:
    """Row layout of the simulated DRAM."""

    row_size_bytes: int = 8192
    row_count: int = 1024
    refresh_window_ticks: int = 1

    def __post_init__(self):
        size = self.row_size_bytes
        if size <= 0 or size & (size - 1):
            raise ValueError(
                f"row_size_bytes must be a power of two, got {size}"
            )
        if size % PAGE_SIZE:
            raise ValueError(
                f"row_size_bytes must be a multiple of {PAGE_SIZE}"
            )
        if self.row_count <= 0:
            raise ValueError("row_count must be positive")
        if self.refresh_window_ticks <= 0:
            raise ValueError("refresh_window_ticks must be positive")

    @property
    def capacity(self) -> int:
        """Total number of bytes."""
        return self.row_size_bytes * self.row_count

    @property
    def row_bits(self) -> int:
        """Number of bits in one row."""
        return self.row_size_bytes * 8

    @property
    def pages_per_row(self) -> int:
        """Number of 4 KiB pages sharing one row."""
        return self.row_size_bytes // PAGE_SIZE

    def row_of(self, pa: int) -> int:
        """Return the row holding physical address pa."""
        return pa // self.row_size_bytes


@dataclass(frozen=True, order=True)
class VulnerableBit:
    """A cell that flips to flip_to once a neighbouring row is hammered."""

    row: int
    bit_offset_in_row: int
    flip_to: int

    def physical_bit(self, geometry: DramGeometry) -> int:
        """Absolute bit address of this cell."""
        return self.row * geometry.row_bits + self.bit_offset_in_row


@dataclass(frozen=True)
class FlipEvent:
    """One bit that changed value because of hammering."""

    aggressor: int
    row: int
    bit_offset_in_row: int
    flip_to: int
    physical_bit: int

    @property
    def pa(self) -> int:
        """Physical byte address holding the flipped bit."""
        return self.physical_bit // 8


@dataclass
class HammerState:
    """Activation counters since the last refresh."""

    threshold: int = DEFAULT_THRESHOLD
    blast_radius: int = 1
    activations: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.blast_radius < 0:
            raise ValueError("blast_radius must not be negative")


def seed_vulnerable_bits(
    geometry: DramGeometry, seed: int, density: float
) -> Set[VulnerableBit]:
    """
    Generate the seeded vulnerable-bit map.

    Every row is independently vulnerable with probability density and
    then gets one bit with a uniformly chosen offset and direction.

    Args:
        geometry (DramGeometry): Row layout.
        seed (int): Seed of the map.
        density (float): Probability per row, in [0, 1].

    Returns:
        Set[VulnerableBit]: The same set for the same arguments.
    """
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must be in [0, 1], got {density}")
    rng = random.Random(seed)
    bits = set()
    for row in range(geometry.row_count):
        # Draw unconditionally so one row's outcome never shifts the next.
        roll = rng.random()
        offset = rng.randrange(geometry.row_bits)
        flip_to = rng.randrange(2)
        if roll < density:
            bits.add(VulnerableBit(row, offset, flip_to))
    return bits


def plant_target_bits(
    geometry: DramGeometry,
    seed: int,
    bit_offset_in_page: int,
    flip_to: int,
    stride_rows: int,
) -> Set[VulnerableBit]:
    """
    Place one usable bit every stride_rows rows.

    Any contiguous region spanning at least 2 * stride_rows rows is then
    guaranteed to hold a page whose bit at bit_offset_in_page can flip
    toward flip_to. The phase and the page inside each row are seeded.

    Args:
        geometry (DramGeometry): Row layout.
        seed (int): Scenario seed.
        bit_offset_in_page (int): In-page bit offset to plant.
        flip_to (int): Direction of the planted bits.
        stride_rows (int): Distance between planted rows, 0 disables.

    Returns:
        Set[VulnerableBit]: Planted bits.
    """
    if stride_rows <= 0:
        return set()
    if not 0 <= bit_offset_in_page < PAGE_SIZE * 8:
        raise ValueError(f"bit offset {bit_offset_in_page} outside a page")
    rng = random.Random(seed ^ _PLANT_SALT)
    phase = rng.randrange(stride_rows)
    bits = set()
    for row in range(phase, geometry.row_count, stride_rows):
        page = rng.randrange(geometry.pages_per_row)
        offset = page * PAGE_SIZE * 8 + bit_offset_in_page
        bits.add(VulnerableBit(row, offset, flip_to))
    return bits


class PhysMem:
    """
    Byte-addressable, zero-initialised physical memory with a RowHammer
    disturbance model.

    Args:
        geometry (DramGeometry): Row layout.
        hammer (HammerState): Threshold and blast radius.
        vuln_map (Iterable[VulnerableBit]): Cells that can flip.

    Attributes:
        flip_log (List[FlipEvent]): Every flip in the order it happened.
        total_activations (int): Activations since creation.
        refresh_count (int): Number of refresh() calls.
    """

    def __init__(
        self,
        geometry: DramGeometry,
        hammer: HammerState | None = None,
        vuln_map: Iterable[VulnerableBit] = (),
    ):
        self.geometry = geometry
        self.hammer = hammer or HammerState()
        self._bytes = bytearray(geometry.capacity)
        self.vuln_map: Set[VulnerableBit] = set()
        self._vuln_by_row: Dict[int, List[VulnerableBit]] = defaultdict(list)
        self.flip_log: List[FlipEvent] = []
        self.total_activations = 0
        self.refresh_count = 0
        self.add_vulnerable_bits(vuln_map)

    @property
    def capacity(self) -> int:
        """Size in bytes."""
        return self.geometry.capacity

    def add_vulnerable_bits(self, bits: Iterable[VulnerableBit]) -> None:
        """Merge cells into the vulnerable-bit map."""
        for bit in bits:
            if not 0 <= bit.row < self.geometry.row_count:
                raise PhysMemFault(f"Vulnerable bit row {bit.row} invalid.")
            if not 0 <= bit.bit_offset_in_row < self.geometry.row_bits:
                raise PhysMemFault(
                    f"Vulnerable bit offset {bit.bit_offset_in_row} invalid."
                )
            if bit.flip_to not in (0, 1):
                raise PhysMemFault(f"flip_to must be 0 or 1: {bit}")
            if bit in self.vuln_map:
                continue
            self.vuln_map.add(bit)
            self._vuln_by_row[bit.row].append(bit)
        for row_bits in self._vuln_by_row.values():
            row_bits.sort()

    def _check_range(self, pa: int, length: int) -> None:
        if pa < 0 or length < 0 or pa + length > self.capacity:
            raise PhysMemFault(
                f"Access [{pa:#x}, {pa + length:#x}) outside "
                f"{self.capacity:#x} bytes."
            )

    def read(self, pa: int, length: int) -> bytes:
        """
        Read length bytes starting at pa.

        Raises:
            PhysMemFault: if the range leaves physical memory.
        """
        self._check_range(pa, length)
        return bytes(self._bytes[pa : pa + length])

    def write(self, pa: int, data: bytes) -> None:
        """
        Write data starting at pa.

        Raises:
            PhysMemFault: if the range leaves physical memory.
        """
        self._check_range(pa, len(data))
        self._bytes[pa : pa + len(data)] = data

    def fill(self, pa: int, length: int, value: int = 0) -> None:
        """Set length bytes to value."""
        self._check_range(pa, length)
        self._bytes[pa : pa + length] = bytes([value]) * length

    def read_int(self, pa: int, width_bytes: int) -> int:
        """Read a little-endian unsigned integer."""
        return int.from_bytes(self.read(pa, width_bytes), "little")

    def write_int(self, pa: int, value: int, width_bytes: int) -> None:
        """Write a little-endian unsigned integer."""
        self.write(pa, value.to_bytes(width_bytes, "little"))

    def read_bit(self, physical_bit: int) -> int:
        """Return the value of one bit, addressed from bit 0 of byte 0."""
        byte = self.read(physical_bit // 8, 1)[0]
        return (byte >> (physical_bit % 8)) & 1

    def flip_bit(self, physical_bit: int) -> None:
        """Invert one bit (used by tests and fault-injection tools)."""
        pa = physical_bit // 8
        self._check_range(pa, 1)
        self._bytes[pa] ^= 1 << (physical_bit % 8)

    def activate_row(self, row: int) -> List[FlipEvent]:
        """
        Activate one row once.

        Args:
            row (int): Aggressor row index.

        Returns:
            List[FlipEvent]: Bits flipped by this activation.

        Raises:
            PhysMemFault: if row is out of range.
        """
        return self.hammer_row(row, 1)

    def hammer_row(self, row: int, activations: int) -> List[FlipEvent]:
        """
        Activate row the given number of times.

        Equivalent to calling activate_row() repeatedly: the counter
        saturates at the threshold and, once there, every activation
        disturbs the neighbours.

        Args:
            row (int): Aggressor row index.
            activations (int): Number of activations.

        Returns:
            List[FlipEvent]: Bits flipped during the burst.

        Raises:
            PhysMemFault: if row is out of range.
        """
        if not 0 <= row < self.geometry.row_count:
            raise PhysMemFault(
                f"Row {row} outside 0..{self.geometry.row_count - 1}."
            )
        if activations <= 0:
            return []
        self.total_activations += activations
        threshold = self.hammer.threshold
        counter = self.hammer.activations.get(row, 0)
        reached = counter + activations >= threshold
        self.hammer.activations[row] = min(counter + activations, threshold)
        if not reached:
            return []
        if counter < threshold:
            logger.debug(f"Row {row} reached hammer threshold {threshold}")
        return self._disturb_neighbours(row)

    def _disturb_neighbours(self, aggressor: int) -> List[FlipEvent]:
        events = []
        radius = self.hammer.blast_radius
        for distance in range(1, radius + 1):
            for row in (aggressor - distance, aggressor + distance):
                if not 0 <= row < self.geometry.row_count:
                    continue
                for bit in self._vuln_by_row.get(row, ()):
                    event = self._apply_flip(aggressor, bit)
                    if event:
                        events.append(event)
        return events

    def _apply_flip(self, aggressor: int, bit: VulnerableBit):
        physical_bit = bit.physical_bit(self.geometry)
        pa, shift = divmod(physical_bit, 8)
        current = (self._bytes[pa] >> shift) & 1
        if current == bit.flip_to:
            return None
        self._bytes[pa] ^= 1 << shift
        event = FlipEvent(
            aggressor=aggressor,
            row=bit.row,
            bit_offset_in_row=bit.bit_offset_in_row,
            flip_to=bit.flip_to,
            physical_bit=physical_bit,
        )
        self.flip_log.append(event)
        logger.debug(
            f"Bit flip: row {bit.row} bit {bit.bit_offset_in_row} "
            f"-> {bit.flip_to} (aggressor {aggressor})"
        )
        return event

    def refresh(self) -> None:
        """Reset every activation counter. Memory contents are kept."""
        self.hammer.activations.clear()
        self.refresh_count += 1
