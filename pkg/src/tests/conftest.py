"""Pytest conftest module."""
from dataclasses import dataclass
from typing import Callable, List

import pytest
from src.dram.physmem import PAGE_SIZE, DramGeometry, HammerState, PhysMem
from src.oskernel.kernel import Kernel, KernelPolicy
from src.paging.profiles import PagingProfile, get_profile
from src.paging.pte import encode_pte, leaf_view, table_view
from src.tlb.tlb import Tlb, TlbConfig

# Hand-built tables start here; the root of every profile fits below it.
FIRST_TABLE_FRAME = 4
DATA_FRAME = 100


@dataclass
class HandMapping:
    """Tables written directly into memory for one va."""

    root_pa: int
    table_pas: List[int]
    data_frame: int


def write_mapping(
    profile: PagingProfile,
    mem: PhysMem,
    va: int,
    data_frame: int = DATA_FRAME,
    first_table_frame: int = FIRST_TABLE_FRAME,
) -> HandMapping:
    """Map va to data_frame with one fresh table per level below the root."""
    table_pas = [0]
    for offset in range(profile.leaf_level):
        table_pas.append((first_table_frame + offset) * PAGE_SIZE)
    for level, spec in enumerate(profile.levels):
        entry_pa = table_pas[level] + spec.index(va) * spec.entry_bytes
        if level == profile.leaf_level:
            view = leaf_view(data_frame)
        else:
            next_frame = table_pas[level + 1] // PAGE_SIZE
            view = table_view(profile, level, next_frame)
        raw = encode_pte(profile, level, view).raw
        mem.write_int(entry_pa, raw, spec.entry_bytes)
    return HandMapping(0, table_pas, data_frame)


@pytest.fixture
def geometry() -> DramGeometry:
    """Default 8 MiB geometry."""
    return DramGeometry()


@pytest.fixture
def mem(geometry: DramGeometry) -> PhysMem:
    """Empty physical memory without vulnerable bits."""
    return PhysMem(geometry)


@pytest.fixture
def make_kernel() -> Callable[..., Kernel]:
    """Factory for a kernel on fresh memory and a fresh TLB."""

    def factory(
        isa: str = "x86_64",
        policy: KernelPolicy = KernelPolicy(),
        tlb_config: TlbConfig = TlbConfig(),
        row_count: int = 1024,
        threshold: int = 50_000,
    ) -> Kernel:
        physmem = PhysMem(
            DramGeometry(row_count=row_count), HammerState(threshold)
        )
        return Kernel(get_profile(isa), physmem, Tlb(tlb_config), policy)

    return factory


@pytest.fixture
def kernel(make_kernel: Callable[..., Kernel]) -> Kernel:
    """x86_64 kernel with default policy."""
    return make_kernel()
