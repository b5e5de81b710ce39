"""Tests for src/paging/target.py."""
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from src.custom_exceptions import GeometryError, PageFault, PhysMemFault
from src.dram.physmem import PAGE_SIZE, DramGeometry, PhysMem, VulnerableBit
from src.paging.profiles import ARMV7, RV39, X86_64
from src.paging.target import (
    find_target_page,
    global_bit_offset,
    in_page_bit,
    va_indices,
)
from src.paging.walker import walk
from src.tests.conftest import write_mapping

# Room for the hand-written tables and the data frame.
SMALL = DramGeometry(row_count=64)


class TestOffsets:
    """global_bit_offset() values."""

    @pytest.mark.parametrize(
        "profile, level, va, offset",
        [
            (X86_64, 3, 0x20000, 2056),
            (RV39, 1, 0x200000, 69),
            (RV39, 2, 0x20000, 64 * 32 + 5),
            (ARMV7, 1, 0x20000, 1035),
            (X86_64, 3, 0x7FFF_FFFF_F000, 64 * 511 + 8),
        ],
    )
    def test_known_offsets(self, profile, level, va, offset):
        """Offsets for the addresses used by the builtin scenarios."""
        assert global_bit_offset(profile, level, va) == offset

    @pytest.mark.parametrize("level", [0, 1, 2])
    def test_x86_upper_levels(self, level):
        """x86_64 upper levels carry no global bit."""
        with pytest.raises(GeometryError):
            global_bit_offset(X86_64, level, 0x20000)

    def test_arm_first_level(self):
        """ARM first-level descriptors carry no nG bit."""
        with pytest.raises(GeometryError):
            global_bit_offset(ARMV7, 0, 0x20000)

    def test_missing_level(self):
        """A level past the leaf is a geometry error."""
        with pytest.raises(GeometryError):
            global_bit_offset(RV39, 3, 0)

    def test_indices(self):
        """Per-level indices, root first."""
        assert va_indices(X86_64, 0x20000) == [0, 0, 0, 32]
        assert va_indices(ARMV7, 0x20000) == [0, 32]
        assert va_indices(RV39, 0x200000) == [0, 1, 0]


class TestFindTargetPage:
    """Target page selection from a vulnerable-bit map."""

    def test_picks_matching_page(self, geometry):
        """Only a bit at the offset and in the right direction counts."""
        # Row 3, second page of the row, bit 2056.
        good = VulnerableBit(3, PAGE_SIZE * 8 + 2056, 1)
        wrong_way = VulnerableBit(5, 2056, 0)
        wrong_offset = VulnerableBit(7, 2057, 1)
        region = [page * PAGE_SIZE for page in range(20)]
        found = find_target_page(
            X86_64,
            3,
            0x20000,
            {good, wrong_way, wrong_offset},
            region,
            geometry,
        )
        assert found == 7 * PAGE_SIZE
        assert in_page_bit(geometry, good) == (7 * PAGE_SIZE, 2056)

    def test_arm_wants_clear(self):
        """ARM needs bits flipping to 0."""
        bits = {VulnerableBit(1, 1035, 0)}
        region = [2 * PAGE_SIZE]
        assert find_target_page(ARMV7, 1, 0x20000, bits, region) == region[0]
        assert find_target_page(X86_64, 3, 0x20000, bits, region) is None

    def test_outside_region(self):
        """Pages outside the region are ignored."""
        bits = {VulnerableBit(3, 2056, 1)}
        assert find_target_page(X86_64, 3, 0x20000, bits, [0]) is None

    def test_empty_map(self):
        """No vulnerable bits, no page."""
        assert find_target_page(X86_64, 3, 0x20000, (), [0]) is None

    def test_unaligned_region(self):
        """Region pages must be page-aligned."""
        with pytest.raises(ValueError):
            find_target_page(X86_64, 3, 0, (), [0x10])


LEVELS_WITH_GLOBAL = [(X86_64, 3), (ARMV7, 1), (RV39, 0), (RV39, 1), (RV39, 2)]
VA_BITS = {X86_64.isa: 47, ARMV7.isa: 32, RV39.isa: 38}


@st.composite
def targets(draw):
    """(profile, level, page-aligned va) triples."""
    profile, level = draw(st.sampled_from(LEVELS_WITH_GLOBAL))
    page = draw(st.integers(0, (1 << (VA_BITS[profile.isa] - 12)) - 1))
    return profile, level, page * PAGE_SIZE


@settings(max_examples=60, suppress_health_check=[HealthCheck.too_slow])
@given(target=targets())
def test_offset_flip_makes_entry_global(target):
    """Flipping the computed bit of a level's table page makes va global
    without moving its translation."""
    profile, level, va = target
    mem = PhysMem(SMALL)
    mapping = write_mapping(profile, mem, va)
    before = walk(profile, 0, va, mem)
    offset = global_bit_offset(profile, level, va)
    mem.flip_bit(mapping.table_pas[level] * 8 + offset)
    after = walk(profile, 0, va, mem)
    assert not before.global_
    assert after.global_
    assert after.global_level == level
    assert after.pa == before.pa


@settings(max_examples=60, suppress_health_check=[HealthCheck.too_slow])
@given(target=targets(), data=st.data())
def test_other_flips_never_make_entry_global(target, data):
    """Any other bit of the same table page leaves va non-global."""
    profile, level, va = target
    offset = global_bit_offset(profile, level, va)
    bit = data.draw(st.integers(0, PAGE_SIZE * 8 - 1))
    assume(bit != offset)
    mem = PhysMem(SMALL)
    mapping = write_mapping(profile, mem, va)
    mem.flip_bit(mapping.table_pas[level] * 8 + bit)
    try:
        result = walk(profile, 0, va, mem)
    except (PageFault, PhysMemFault):
        return
    assert not result.global_
