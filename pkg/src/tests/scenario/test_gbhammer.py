"""Tests for src/scenario/gbhammer.py."""
import pytest
from src.custom_exceptions import GbHammerStateError, GeometryError
from src.dram.physmem import PAGE_SIZE, plant_target_bits
from src.oskernel.kernel import KernelPolicy, Segment
from src.paging.target import global_bit_offset
from src.paging.walker import walk
from src.scenario.gbhammer import (
    GbHammer,
    Outcome,
    gbhammer_procedure,
    region_hint,
)

TARGET_VA = 0x20000
MEGAPAGE = 2 * 1024 * 1024


def plant(kernel, va=TARGET_VA, level=None):
    """Give the kernel's memory usable cells for va's entry at level."""
    profile = kernel.profile
    level = profile.leaf_level if level is None else level
    kernel.mem.add_vulnerable_bits(
        plant_target_bits(
            kernel.mem.geometry,
            1,
            global_bit_offset(profile, level, va),
            profile.global_flip_to(),
            16,
        )
    )
    return kernel


class TestProcedure:
    """Complete attempts."""

    def test_success(self, make_kernel):
        """The attacker's entry for N turns global, the victim's does not."""
        kernel = plant(make_kernel())
        victim = kernel.spawn(static_segments=[Segment("f", TARGET_VA)])
        attacker = kernel.spawn()
        report = gbhammer_procedure(kernel, attacker, TARGET_VA)
        assert report.outcome is Outcome.SUCCESS
        assert report.region_va == 0x200000
        assert report.mapped_va == TARGET_VA
        assert report.global_bit_offset == 2056
        assert report.flips
        table = kernel.table_frame(attacker, 3, TARGET_VA)
        assert table * PAGE_SIZE == report.target_page
        root = attacker.root_table_pa
        assert walk(kernel.profile, root, TARGET_VA, kernel.mem).global_
        victim_walk = walk(
            kernel.profile, victim.root_table_pa, TARGET_VA, kernel.mem
        )
        assert not victim_walk.global_

    @pytest.mark.parametrize(
        "isa, level, va, length",
        [
            ("armv7", None, TARGET_VA, PAGE_SIZE),
            ("rv39", None, TARGET_VA, PAGE_SIZE),
            ("rv39", 1, 0x200000, MEGAPAGE),
        ],
    )
    def test_other_isas(self, make_kernel, isa, level, va, length):
        """Leaf and RV39 non-leaf targets succeed as well."""
        kernel = plant(make_kernel(isa), va, level)
        attacker = kernel.spawn()
        report = gbhammer_procedure(
            kernel, attacker, va, level=level, length=length
        )
        assert report.outcome is Outcome.SUCCESS
        result = walk(kernel.profile, attacker.root_table_pa, va, kernel.mem)
        assert result.global_
        if level == 1:
            assert result.span_bytes == MEGAPAGE

    def test_no_vulnerable_bits(self, make_kernel):
        """Without a usable cell the attempt stops after the search."""
        kernel = make_kernel()
        attacker = kernel.spawn()
        report = gbhammer_procedure(kernel, attacker, TARGET_VA)
        assert report.outcome is Outcome.NO_TARGET_PAGE
        assert report.target_page is None
        assert attacker.region_named("gbhammer-region") is not None
        assert attacker.region_at(TARGET_VA) is None

    def test_unreachable_threshold(self, make_kernel):
        """Rows that never reach the threshold flip nothing."""
        kernel = plant(make_kernel(threshold=10**9))
        report = gbhammer_procedure(kernel, kernel.spawn(), TARGET_VA)
        assert report.outcome is Outcome.NO_TARGET_PAGE
        assert not kernel.mem.flip_log

    def test_hint_refused(self, make_kernel):
        """No hint and no fixed static load means N is out of reach."""
        policy = KernelPolicy(
            respect_mmap_hint=False, allow_fixed_static_load=False
        )
        kernel = plant(make_kernel(policy=policy))
        attacker = kernel.spawn()
        report = gbhammer_procedure(kernel, attacker, TARGET_VA)
        assert report.outcome is Outcome.HINT_REFUSED
        assert attacker.region_at(TARGET_VA) is None
        assert attacker.region_named("gbhammer-target") is None

    def test_static_load_fallback(self, make_kernel):
        """An ignored hint is worked around with a fixed static load."""
        policy = KernelPolicy(respect_mmap_hint=False)
        kernel = plant(make_kernel(policy=policy))
        attacker = kernel.spawn()
        report = gbhammer_procedure(kernel, attacker, TARGET_VA)
        assert report.outcome is Outcome.SUCCESS
        assert attacker.region_at(TARGET_VA).static

    def test_target_already_mapped(self, make_kernel):
        """An attacker already holding N cannot remap it."""
        kernel = plant(make_kernel())
        attacker = kernel.spawn(static_segments=[Segment("n", TARGET_VA)])
        report = gbhammer_procedure(kernel, attacker, TARGET_VA)
        assert report.outcome is Outcome.HINT_REFUSED

    def test_observer_sees_region_accesses(self, make_kernel):
        """Every fill and read-back translation is reported."""
        kernel = plant(make_kernel())
        seen = []
        gbhammer_procedure(
            kernel, kernel.spawn(), TARGET_VA, observer=seen.append
        )
        assert len(seen) == 2 * 64
        assert all(not translation.misdirected for translation in seen)


class TestSteps:
    """The attempt driven one step at a time."""

    def test_reuse_missed(self, make_kernel):
        """If another allocation takes the page first, reuse fails."""
        kernel = plant(make_kernel())
        attack = GbHammer(kernel, kernel.spawn(), TARGET_VA)
        page = attack.search()
        assert page is not None
        attack.release_target()
        assert kernel.frames.allocate() * PAGE_SIZE == page
        assert attack.map_target()
        assert attack.hammer_target() is Outcome.REUSE_MISSED

    def test_release_without_target(self, make_kernel):
        """release_target() needs a successful search."""
        kernel = make_kernel()
        attack = GbHammer(kernel, kernel.spawn(), TARGET_VA)
        assert attack.search() is None
        with pytest.raises(GbHammerStateError):
            attack.release_target()

    def test_hammer_target_keeps_earlier_outcome(self, make_kernel):
        """A search that found nothing is not turned into REUSE_MISSED."""
        kernel = make_kernel()
        attack = GbHammer(kernel, kernel.spawn(), TARGET_VA)
        attack.search()
        assert attack.hammer_target() is Outcome.NO_TARGET_PAGE
        assert attack.report.outcome is Outcome.NO_TARGET_PAGE

    def test_hammer_target_without_search(self, kernel):
        """hammer_target() before search() is out of order."""
        attack = GbHammer(kernel, kernel.spawn(), TARGET_VA)
        with pytest.raises(GbHammerStateError):
            attack.hammer_target()

    @pytest.mark.parametrize("level", [0, 2])
    def test_levels_without_global_bit(self, kernel, level):
        """The root and x86_64 upper levels cannot be targeted."""
        with pytest.raises(GeometryError):
            GbHammer(kernel, kernel.spawn(), TARGET_VA, level=level)

    def test_fill_pattern(self, make_kernel):
        """R is filled against the flip direction."""
        x86 = make_kernel()
        arm = make_kernel("armv7")
        assert GbHammer(x86, x86.spawn(), TARGET_VA).pattern == 0x00
        assert GbHammer(arm, arm.spawn(), TARGET_VA).pattern == 0xFF


def test_region_hint(make_kernel):
    """R sits next to N under the parent of the targeted level."""
    assert region_hint(make_kernel(), 3, TARGET_VA) == 0x200000
    assert region_hint(make_kernel(), 3, 0x205000) == 0
    assert region_hint(make_kernel("rv39"), 1, 0x200000) == 0x4000_0000
