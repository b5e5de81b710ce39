"""Tests for src/oskernel/frames.py."""
import pytest
from hypothesis import given
from hypothesis import strategies as st
from src.custom_exceptions import OutOfMemory
from src.oskernel.frames import FrameAllocator


def test_fresh_allocator_starts_low():
    """Single frames come out in ascending order at first."""
    frames = FrameAllocator(8)
    assert [frames.allocate() for _ in range(3)] == [0, 1, 2]
    assert frames.free_count == 5


def test_lifo_reuse():
    """The last freed frame is handed out first."""
    frames = FrameAllocator(16)
    taken = [frames.allocate() for _ in range(10)]
    frames.free([taken[5], taken[9]])
    assert frames.allocate() == 9
    assert frames.allocate() == 5


def test_contiguous_is_high():
    """Contiguous grants come from the top of memory."""
    frames = FrameAllocator(16)
    assert frames.allocate_contiguous(4) == [12, 13, 14, 15]
    assert frames.region_grants == {12: 4}
    assert not frames.is_free(13)
    assert frames.allocate() == 0


def test_contiguous_low_aligned():
    """Low, aligned grants skip used frames."""
    frames = FrameAllocator(16)
    frames.allocate()
    assert frames.allocate_contiguous(4, align=4, high=False) == [4, 5, 6, 7]


def test_contiguous_skips_holes():
    """A run blocked near the top moves down below the blocker."""
    frames = FrameAllocator(16)
    frames.allocate_contiguous(2)
    frames.free([15])
    assert frames.allocate_contiguous(3) == [11, 12, 13]


def test_contiguous_falls_back_to_singles():
    """Without a free run the grant is made of single frames."""
    frames = FrameAllocator(4)
    taken = [frames.allocate() for _ in range(4)]
    frames.free([taken[0], taken[2]])
    assert sorted(frames.allocate_contiguous(2)) == [0, 2]


def test_strict_contiguous_refuses_singles():
    """strict=True raises instead of splitting and leaves the frames free."""
    frames = FrameAllocator(4)
    taken = [frames.allocate() for _ in range(4)]
    frames.free([taken[0], taken[2]])
    with pytest.raises(OutOfMemory):
        frames.allocate_contiguous(2, strict=True)
    assert frames.free_count == 2
    assert frames.is_free(0) and frames.is_free(2)


def test_exhaustion():
    """Allocation beyond capacity raises OutOfMemory."""
    frames = FrameAllocator(2)
    frames.allocate()
    frames.allocate()
    with pytest.raises(OutOfMemory):
        frames.allocate()
    with pytest.raises(OutOfMemory):
        frames.allocate_contiguous(1)


def test_double_free():
    """Freeing a free frame is a bug in the caller."""
    frames = FrameAllocator(4)
    with pytest.raises(ValueError):
        frames.free([1])


OPERATIONS = st.lists(
    st.tuples(
        st.sampled_from(["alloc", "free", "contig"]), st.integers(1, 6)
    ),
    max_size=40,
)


@given(operations=OPERATIONS)
def test_frames_are_conserved(operations):
    """Every frame is either free or held, never both, never lost."""
    total = 32
    frames = FrameAllocator(total)
    held = []
    for operation, amount in operations:
        if operation == "alloc" and frames.free_count:
            held.append(frames.allocate())
        elif operation == "contig" and amount <= frames.free_count:
            held.extend(frames.allocate_contiguous(amount))
        elif operation == "free" and held:
            batch, held = held[-amount:], held[:-amount]
            frames.free(batch)
        assert len(set(held)) == len(held)
        assert len(set(frames.free_list)) == frames.free_count
        assert frames.free_count + len(held) == total
        assert not set(held) & set(frames.free_list)
