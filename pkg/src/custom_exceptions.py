"""A module for custom exceptions shared by the simulator packages."""
from typing import Iterable, Optional


class SimulationFault(RuntimeError):
    """Base class for every fault raised by the simulated hardware or OS."""

    def __init__(self, message: str = "Simulation fault."):
        super().__init__(message)


class PhysMemFault(SimulationFault):
    """Raises on an access outside physical memory or an unknown row."""

    def __init__(self, message: str = "Physical memory access out of range."):
        super().__init__(message)


class PteEncodeError(SimulationFault):
    """Raises if a frame number does not fit the profile's frame field."""

    def __init__(self, message: str = "Frame does not fit the PTE."):
        super().__init__(message)


class WalkError(SimulationFault):
    """Raises on a malformed walk request (for example, misaligned root)."""

    def __init__(self, message: str = "Invalid page table walk."):
        super().__init__(message)


class PageFault(SimulationFault):
    """Raises when a walk meets a not-present entry."""

    def __init__(self, va: int, level: Optional[int] = None):
        self.va = va
        self.level = level
        where = "" if level is None else f" at level {level}"
        super().__init__(f"Page fault for va {va:#x}{where}.")


class GeometryError(SimulationFault):
    """Raises when a level has no global bit to target."""

    def __init__(self, message: str = "Level has no global bit."):
        super().__init__(message)


class SpawnError(SimulationFault):
    """Raises if a process cannot be created."""

    def __init__(self, message: str = "Spawn failed."):
        super().__init__(message)


class OutOfMemory(SimulationFault):
    """Raises when the frame allocator is exhausted."""

    def __init__(self, message: str = "Physical memory exhausted."):
        super().__init__(message)


class RegionNotFound(SimulationFault):
    """Raises if munmap is asked to release an unknown region."""

    def __init__(self, va: int):
        self.va = va
        super().__init__(f"No mapped region at va {va:#x}.")


class CallFault(SimulationFault):
    """Raises when a called page does not hold a valid function blob."""

    def __init__(self, va: int):
        self.va = va
        super().__init__(f"No function blob at va {va:#x}.")


class GbHammerStateError(SimulationFault):
    """Raises when an attack step runs before the step it depends on."""

    def __init__(self, message: str = "GbHammer step out of order."):
        super().__init__(message)


class ScenarioConfigError(ValueError):
    """Raises on an invalid scenario document, naming the key path."""

    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


class UnknownScenario(KeyError):
    """Raises for a builtin scenario name that does not exist."""

    def __init__(self, name: str, valid: Iterable[str]):
        self.name = name
        self.valid = sorted(valid)
        super().__init__(name)

    def __str__(self):
        return (
            f"Unknown scenario '{self.name}'. "
            f"Valid names: {', '.join(self.valid)}"
        )
