"""
Translation lookaside buffer with ASID tags and global entries.

The iTLB and the dTLB are separate, fully associative arrays. A global
entry matches regardless of the current ASID while honor_global (the PGE
analog) is enabled.
"""
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Hashable, List, Optional

from loguru import logger

from ..dram.physmem import PAGE_SIZE


class TlbKind(str, Enum):
    """Which translation cache an access goes through."""

    INSTRUCTION = "I"
    DATA = "D"


class Replacement(str, Enum):
    """Victim selection policy."""

    FIFO = "FIFO"
    LRU = "LRU"


class Tagging(str, Enum):
    """
    How resident entries are keyed.

    VPN keeps one entry per (kind, vpn) whatever the ASID. VPN_ASID keeps
    one per (kind, vpn, asid) like a PCID-tagged TLB; lookups prefer the
    caller's own entry over a global one.
    """

    VPN = "vpn"
    VPN_ASID = "vpn_asid"


@dataclass(frozen=True)
class TlbEntry:
    """A cached translation."""

    vpn: int
    ppn: int
    asid: int
    global_: bool
    kind: TlbKind
    span_bytes: int = PAGE_SIZE


@dataclass(frozen=True)
class TlbConfig:
    """Capacity, replacement and the PGE-analog switch."""

    entries_per_kind: int = 64
    replacement: Replacement = Replacement.LRU
    honor_global: bool = True
    tagging: Tagging = Tagging.VPN

    def __post_init__(self):
        if self.entries_per_kind < 1:
            raise ValueError("TLB capacity must be at least 1")


@dataclass
class TlbStats:
    """Lookup counters of one kind."""

    hits: int = 0
    misses: int = 0
    evictions: int = 0


@dataclass
class _KindArray:
    entries: "OrderedDict[Hashable, TlbEntry]" = field(
        default_factory=OrderedDict
    )
    stats: TlbStats = field(default_factory=TlbStats)


class Tlb:
    """
    Separate iTLB and dTLB owned by one simulated core.

    Args:
        config (TlbConfig): Capacity, policy and global handling.
    """

    def __init__(self, config: TlbConfig = TlbConfig()):
        self.config = config
        self._arrays: Dict[TlbKind, _KindArray] = {
            kind: _KindArray() for kind in TlbKind
        }

    def _key(self, vpn: int, asid: int) -> Hashable:
        if self.config.tagging is Tagging.VPN_ASID:
            return (vpn, asid)
        return vpn

    def is_global(self, entry: TlbEntry) -> bool:
        """Global flag as seen by the matcher (honor_global applied)."""
        return entry.global_ and self.config.honor_global

    def stats(self, kind: TlbKind) -> TlbStats:
        """Counters of one kind."""
        return self._arrays[kind].stats

    def entries(self, kind: TlbKind) -> List[TlbEntry]:
        """Resident entries, oldest first."""
        return list(self._arrays[kind].entries.values())

    def occupancy(self, kind: TlbKind) -> int:
        """Number of resident entries of one kind."""
        return len(self._arrays[kind].entries)

    def _find(
        self, array: _KindArray, vpn: int, asid: int
    ) -> Optional[Hashable]:
        key = self._key(vpn, asid)
        entry = array.entries.get(key)
        if entry is not None and (entry.asid == asid or self.is_global(entry)):
            return key
        if self.config.tagging is Tagging.VPN:
            return None
        # Most recently used/inserted global entry for the page wins.
        for other_key in reversed(array.entries):
            other = array.entries[other_key]
            if other.vpn == vpn and self.is_global(other):
                return other_key
        return None

    def lookup(self, kind: TlbKind, vpn: int, asid: int) -> Optional[TlbEntry]:
        """
        Look vpn up on behalf of asid.

        Args:
            kind (TlbKind): iTLB or dTLB.
            vpn (int): Virtual page number.
            asid (int): Current address-space identifier.

        Returns:
            Optional[TlbEntry]: The serving entry, or None on a miss.
        """
        array = self._arrays[kind]
        key = self._find(array, vpn, asid)
        if key is None:
            array.stats.misses += 1
            return None
        array.stats.hits += 1
        if self.config.replacement is Replacement.LRU:
            array.entries.move_to_end(key)
        return array.entries[key]

    def insert(self, kind: TlbKind, entry: TlbEntry) -> Optional[TlbEntry]:
        """
        Make entry resident.

        An entry with the same key is replaced in place; otherwise, when
        the array is full, the policy picks a victim.

        Returns:
            Optional[TlbEntry]: The evicted entry, if any.
        """
        if entry.kind is not kind:
            entry = replace(entry, kind=kind)
        array = self._arrays[kind]
        key = self._key(entry.vpn, entry.asid)
        if key in array.entries:
            old = array.entries[key]
            array.entries[key] = entry
            if self.config.replacement is Replacement.LRU:
                array.entries.move_to_end(key)
            if old.asid != entry.asid:
                logger.debug(
                    f"{kind.value}TLB vpn {entry.vpn:#x}: asid {old.asid} "
                    f"entry replaced by asid {entry.asid}"
                )
            return None
        evicted = None
        if len(array.entries) >= self.config.entries_per_kind:
            _, evicted = array.entries.popitem(last=False)
            array.stats.evictions += 1
            logger.debug(
                f"{kind.value}TLB evicted vpn {evicted.vpn:#x} "
                f"asid {evicted.asid}"
            )
        array.entries[key] = entry
        return evicted

    def _remove_where(self, predicate) -> int:
        removed = 0
        for array in self._arrays.values():
            doomed = [k for k, e in array.entries.items() if predicate(e)]
            for key in doomed:
                del array.entries[key]
            removed += len(doomed)
        return removed

    def flush_all(self, keep_global: bool = False) -> int:
        """Drop every entry, or every non-global one when keep_global."""
        if keep_global:
            return self._remove_where(lambda e: not self.is_global(e))
        return self._remove_where(lambda e: True)

    def flush_asid(self, asid: int) -> int:
        """Drop the non-global entries tagged with asid."""
        return self._remove_where(
            lambda e: e.asid == asid and not self.is_global(e)
        )

    def flush_page(self, vpn: int, asid: Optional[int] = None) -> int:
        """
        Drop the entries of one page.

        Without asid every entry for vpn goes; with asid, that ASID's
        entry and any global entry for vpn go.
        """
        if asid is None:
            return self._remove_where(lambda e: e.vpn == vpn)
        return self._remove_where(
            lambda e: e.vpn == vpn and (e.asid == asid or self.is_global(e))
        )


def eviction_set_size(config: TlbConfig) -> int:
    """Number of distinct pages access_sequence_to_evict() returns."""
    capacity = config.entries_per_kind
    if config.replacement is Replacement.LRU:
        return capacity
    # FIFO hits do not insert; up to capacity - 1 of the set may already
    # be resident, so capacity fresh inserts need 2 * capacity - 1 pages.
    return 2 * capacity - 1


def access_sequence_to_evict(
    vpn_target: int, config: TlbConfig, base_vpn: Optional[int] = None
) -> List[int]:
    """
    Pages whose accesses are guaranteed to push vpn_target out.

    Args:
        vpn_target (int): Page to evict.
        config (TlbConfig): Capacity and replacement policy.
        base_vpn (int | None): First page of the set; defaults to the
            page after vpn_target.

    Returns:
        List[int]: Distinct vpns, none equal to vpn_target.
    """
    count = eviction_set_size(config)
    vpn = vpn_target + 1 if base_vpn is None else base_vpn
    sequence = []
    while len(sequence) < count:
        if vpn != vpn_target:
            sequence.append(vpn)
        vpn += 1
    return sequence
