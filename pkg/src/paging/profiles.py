"""Page table layouts of the three supported ISAs."""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

from ..dram.physmem import PAGE_SIZE


class Isa(str, Enum):
    """Supported instruction set profiles."""

    X86_64 = "x86_64"
    ARMV7 = "armv7"
    RV39 = "rv39"


class GlobalPolarity(Enum):
    """How the global bit encodes "global"."""

    SET_MEANS_GLOBAL = "set"
    CLEAR_MEANS_GLOBAL = "clear"


@dataclass(frozen=True)
class FlagBit:
    """A one-bit permission field; set_means_true=False for NX/XN style."""

    bit: int
    set_means_true: bool = True


@dataclass(frozen=True)
class PagingLevel:
    """
    One level of the translation hierarchy.

    Attributes:
        entry_width_bits (int): Width of one entry.
        entries_per_table (int): Entries in one table of this level.
        va_index_bit_range (Tuple[int, int]): Inclusive (lo, hi) va bits
            selecting the entry.
        page_span_bytes (int): Virtual range covered by one entry.
        table_align (int): Required alignment of a table of this level.
        present_mask (int): Bits checked for presence.
        present_value (int): Value those bits must hold.
        frame_lo (int): Lowest bit of the frame field.
        frame_width (int): Width of the frame field.
        writable (FlagBit | None): Write permission, if encodable.
        user (FlagBit | None): User access, if encodable.
        executable (FlagBit | None): Execute permission, if encodable.
        global_bit (int | None): Position of the G/nG bit, if any.
        always_set (int): Bits every encoded entry carries.
    """

    entry_width_bits: int
    entries_per_table: int
    va_index_bit_range: Tuple[int, int]
    page_span_bytes: int
    table_align: int
    present_mask: int
    present_value: int
    frame_lo: int
    frame_width: int
    writable: Optional[FlagBit] = None
    user: Optional[FlagBit] = None
    executable: Optional[FlagBit] = None
    global_bit: Optional[int] = None
    always_set: int = 0

    @property
    def entry_bytes(self) -> int:
        """Width of one entry in bytes."""
        return self.entry_width_bits // 8

    @property
    def table_bytes(self) -> int:
        """Size of one table of this level."""
        return self.entry_bytes * self.entries_per_table

    def index(self, va: int) -> int:
        """Entry index of va in a table of this level."""
        lo, hi = self.va_index_bit_range
        return (va >> lo) & ((1 << (hi - lo + 1)) - 1)


@dataclass(frozen=True)
class PagingProfile:
    """Per-ISA paging geometry and global-bit rules."""

    isa: Isa
    levels: Tuple[PagingLevel, ...]
    global_polarity: GlobalPolarity
    nonleaf_global_propagates: bool

    @property
    def leaf_level(self) -> int:
        """Index of the last level (level 0 is the root)."""
        return len(self.levels) - 1

    @property
    def root_table_bytes(self) -> int:
        """Size of the root table."""
        return self.levels[0].table_bytes

    @property
    def root_align(self) -> int:
        """Alignment of the root table."""
        return self.levels[0].table_align

    def global_flip_to(self) -> int:
        """Bit value that makes an entry global."""
        if self.global_polarity is GlobalPolarity.SET_MEANS_GLOBAL:
            return 1
        return 0

    def has_global_bit(self, level: int) -> bool:
        """True if entries at level carry a G/nG bit."""
        return self.levels[level].global_bit is not None


def _x86_level(lo: int, span: int, leaf: bool) -> PagingLevel:
    return PagingLevel(
        entry_width_bits=64,
        entries_per_table=512,
        va_index_bit_range=(lo, lo + 8),
        page_span_bytes=span,
        table_align=PAGE_SIZE,
        present_mask=0x1,
        present_value=0x1,
        frame_lo=12,
        frame_width=40,
        writable=FlagBit(1),
        user=FlagBit(2),
        executable=FlagBit(63, set_means_true=False),
        global_bit=8 if leaf else None,
    )


def _rv39_level(lo: int, span: int, leaf: bool) -> PagingLevel:
    # Sv39 non-leaf entries keep R/W/X/U clear; leaves always carry R.
    return PagingLevel(
        entry_width_bits=64,
        entries_per_table=512,
        va_index_bit_range=(lo, lo + 8),
        page_span_bytes=span,
        table_align=PAGE_SIZE,
        present_mask=0x1,
        present_value=0x1,
        frame_lo=10,
        frame_width=44,
        writable=FlagBit(2) if leaf else None,
        user=FlagBit(4) if leaf else None,
        executable=FlagBit(3) if leaf else None,
        global_bit=5,
        always_set=0x2 if leaf else 0,
    )


X86_64 = PagingProfile(
    isa=Isa.X86_64,
    levels=(
        _x86_level(39, 1 << 39, leaf=False),
        _x86_level(30, 1 << 30, leaf=False),
        _x86_level(21, 1 << 21, leaf=False),
        _x86_level(12, 1 << 12, leaf=True),
    ),
    global_polarity=GlobalPolarity.SET_MEANS_GLOBAL,
    nonleaf_global_propagates=False,
)

RV39 = PagingProfile(
    isa=Isa.RV39,
    levels=(
        _rv39_level(30, 1 << 30, leaf=False),
        _rv39_level(21, 1 << 21, leaf=False),
        _rv39_level(12, 1 << 12, leaf=True),
    ),
    global_polarity=GlobalPolarity.SET_MEANS_GLOBAL,
    nonleaf_global_propagates=True,
)

# Short-descriptor format, 4 KiB small pages only.
ARMV7 = PagingProfile(
    isa=Isa.ARMV7,
    levels=(
        PagingLevel(
            entry_width_bits=32,
            entries_per_table=4096,
            va_index_bit_range=(20, 31),
            page_span_bytes=1 << 20,
            table_align=16 * 1024,
            present_mask=0b11,
            present_value=0b01,
            frame_lo=12,
            frame_width=20,
        ),
        PagingLevel(
            entry_width_bits=32,
            entries_per_table=256,
            va_index_bit_range=(12, 19),
            page_span_bytes=PAGE_SIZE,
            table_align=1024,
            present_mask=0b10,
            present_value=0b10,
            frame_lo=12,
            frame_width=20,
            writable=FlagBit(9, set_means_true=False),
            user=FlagBit(5),
            executable=FlagBit(0, set_means_true=False),
            global_bit=11,
            always_set=0x10,
        ),
    ),
    global_polarity=GlobalPolarity.CLEAR_MEANS_GLOBAL,
    nonleaf_global_propagates=False,
)

PROFILES = {profile.isa: profile for profile in (X86_64, ARMV7, RV39)}


def get_profile(isa: str | Isa) -> PagingProfile:
    """
    Return the profile for an ISA name.

    Args:
        isa (str | Isa): One of x86_64, armv7, rv39.

    Raises:
        ValueError: for an unknown ISA name.
    """
    try:
        return PROFILES[Isa(isa)]
    except ValueError as error:
        valid = ", ".join(item.value for item in Isa)
        raise ValueError(f"Unknown isa '{isa}', expected {valid}") from error
