"""Encoding and decoding of page table entries."""
from dataclasses import dataclass

from ..custom_exceptions import PteEncodeError
from .profiles import FlagBit, GlobalPolarity, PagingProfile


@dataclass(frozen=True)
class PteView:
    """ISA-neutral view of one entry."""

    present: bool
    writable: bool = False
    user: bool = False
    executable: bool = False
    global_effective: bool = False
    frame: int = 0


@dataclass(frozen=True)
class RawPte:
    """An encoded entry together with its decoded view."""

    raw: int
    width_bits: int
    view: PteView


def _put_flag(raw: int, flag: FlagBit | None, value: bool) -> int:
    if flag is None:
        return raw
    if value == flag.set_means_true:
        return raw | (1 << flag.bit)
    return raw


def _get_flag(raw: int, flag: FlagBit | None) -> bool:
    if flag is None:
        return False
    is_set = bool((raw >> flag.bit) & 1)
    return is_set == flag.set_means_true


def encode_pte(profile: PagingProfile, level: int, view: PteView) -> RawPte:
    """
    Build the raw entry for a decoded view.

    Flags a level cannot encode are dropped, so only views that keep them
    False decode back to themselves.

    Args:
        profile (PagingProfile): ISA profile.
        level (int): Level index, 0 is the root.
        view (PteView): Entry contents.

    Returns:
        RawPte: Encoded entry.

    Raises:
        PteEncodeError: if the frame does not fit the frame field.
    """
    spec = profile.levels[level]
    if not 0 <= view.frame < (1 << spec.frame_width):
        raise PteEncodeError(
            f"Frame {view.frame:#x} does not fit {spec.frame_width} bits "
            f"({profile.isa.value} level {level})."
        )
    raw = spec.always_set | (view.frame << spec.frame_lo)
    if view.present:
        raw |= spec.present_value
    raw = _put_flag(raw, spec.writable, view.writable)
    raw = _put_flag(raw, spec.user, view.user)
    raw = _put_flag(raw, spec.executable, view.executable)
    if spec.global_bit is not None:
        set_means_global = (
            profile.global_polarity is GlobalPolarity.SET_MEANS_GLOBAL
        )
        if view.global_effective == set_means_global:
            raw |= 1 << spec.global_bit
    return RawPte(raw, spec.entry_width_bits, decode_pte(profile, level, raw))


def decode_pte(profile: PagingProfile, level: int, raw: int) -> PteView:
    """
    Decode a raw entry.

    global_effective reflects this entry alone; propagation across levels
    is the walker's business.
    """
    spec = profile.levels[level]
    global_effective = False
    if spec.global_bit is not None:
        bit = (raw >> spec.global_bit) & 1
        global_effective = bit == profile.global_flip_to()
    return PteView(
        present=(raw & spec.present_mask) == spec.present_value,
        writable=_get_flag(raw, spec.writable),
        user=_get_flag(raw, spec.user),
        executable=_get_flag(raw, spec.executable),
        global_effective=global_effective,
        frame=(raw >> spec.frame_lo) & ((1 << spec.frame_width) - 1),
    )


def leaf_view(
    frame: int,
    writable: bool = True,
    executable: bool = True,
    global_effective: bool = False,
) -> PteView:
    """View of an ordinary present user leaf entry."""
    return PteView(
        present=True,
        writable=writable,
        user=True,
        executable=executable,
        global_effective=global_effective,
        frame=frame,
    )


def table_view(profile: PagingProfile, level: int, frame: int) -> PteView:
    """View of a present non-leaf entry pointing at a table in frame."""
    spec = profile.levels[level]
    return PteView(
        present=True,
        writable=spec.writable is not None,
        user=spec.user is not None,
        executable=spec.executable is not None,
        frame=frame,
    )
