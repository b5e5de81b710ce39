"""Physical frame allocator with LIFO reuse."""
from typing import Dict, Iterable, List

from loguru import logger

from ..custom_exceptions import OutOfMemory


class FrameAllocator:
    """
    A LIFO stack of free physical frames.

    Single frames come off the top of the stack, so the most recently
    freed frame is handed out next. Contiguous grants are carved from the
    highest fitting run of free frames and returned in ascending order.

    Args:
        total_frames (int): Number of frames in physical memory.

    Attributes:
        free_list (List[int]): Free frames, top of the stack last.
        region_grants (Dict[int, int]): First frame -> length of every
            contiguous grant handed out.
    """

    def __init__(self, total_frames: int):
        if total_frames <= 0:
            raise ValueError("total_frames must be positive")
        self.total_frames = total_frames
        # Reversed so a fresh allocator hands out frame 0 first.
        self.free_list: List[int] = list(range(total_frames - 1, -1, -1))
        self._free = bytearray(b"\x01") * total_frames
        self.region_grants: Dict[int, int] = {}

    @property
    def free_count(self) -> int:
        """Number of free frames."""
        return len(self.free_list)

    def is_free(self, frame: int) -> bool:
        """True if frame is on the free list."""
        return bool(self._free[frame])

    def allocate(self) -> int:
        """
        Pop the most recently freed frame.

        Raises:
            OutOfMemory: if no frame is free.
        """
        if not self.free_list:
            raise OutOfMemory()
        frame = self.free_list.pop()
        self._free[frame] = 0
        return frame

    def allocate_contiguous(
        self,
        count: int,
        align: int = 1,
        high: bool = True,
        strict: bool = False,
    ) -> List[int]:
        """
        Grant count physically contiguous frames.

        Args:
            count (int): Number of frames.
            align (int): Alignment of the first frame, in frames.
            high (bool): Search from the top of memory when True, from the
                bottom otherwise.
            strict (bool): Refuse rather than fall back to single frames.

        Returns:
            List[int]: Ascending frame numbers. Falls back to single
                frames when no aligned run is free, unless strict.

        Raises:
            OutOfMemory: if fewer than count frames are free, or if strict
                and no aligned run is free.
        """
        if count <= 0:
            raise ValueError("count must be positive")
        if count > self.free_count:
            raise OutOfMemory(
                f"Need {count} frames, only {self.free_count} free."
            )
        start = self._find_run(count, align, high)
        if start is None and strict:
            raise OutOfMemory(
                f"No free run of {count} frames aligned to {align}."
            )
        if start is None:
            logger.debug(f"No contiguous run of {count} frames, splitting")
            return [self.allocate() for _ in range(count)]
        granted = list(range(start, start + count))
        for frame in granted:
            self._free[frame] = 0
        self.free_list = [f for f in self.free_list if self._free[f]]
        self.region_grants[start] = count
        return granted

    def _find_run(self, count: int, align: int, high: bool):
        last_start = (self.total_frames - count) // align * align
        start = last_start if high else 0
        while 0 <= start <= last_start:
            # First used frame in the window, scanning away from the start.
            blocker = None
            window = range(start, start + count)
            for frame in reversed(window) if high else window:
                if not self._free[frame]:
                    blocker = frame
                    break
            if blocker is None:
                return start
            # Jump to the next aligned start that clears the blocker.
            if high:
                start = (blocker - count) // align * align
            else:
                start = -(-(blocker + 1) // align) * align
        return None

    def free(self, frames: Iterable[int]) -> None:
        """
        Push frames onto the stack in the given order.

        The last frame pushed is the first one allocate() returns.
        """
        for frame in frames:
            if self._free[frame]:
                raise ValueError(f"Frame {frame} freed twice")
            self._free[frame] = 1
            self.free_list.append(frame)
            self.region_grants.pop(frame, None)
