"""Builtin scenario documents, addressable by name."""
import copy
from typing import Callable, Dict, List

from ..custom_exceptions import UnknownScenario
from ..dram.physmem import PAGE_SIZE
from .config import FORMAT_VERSION

TARGET_VA = 0x20000
RISCV_TARGET_VA = 0x200000
MEGAPAGE = 2 * 1024 * 1024
VICTIM_SLEEP_TICKS = 5


def _document(name: str, description: str, **sections) -> dict:
    document = {
        "format_version": FORMAT_VERSION,
        "name": name,
        "description": description,
        "seed": 1,
        "isa": "x86_64",
    }
    document.update(sections)
    return document


def _binary_exec(name: str, isa: str) -> dict:
    return _document(
        name,
        "The attacker's global iTLB entry makes the victim run the "
        "attacker's function.",
        isa=isa,
        processes=[
            {
                "name": "victim",
                "role": "victim",
                "segments": [{"name": "f", "va": TARGET_VA, "blob": 1}],
                "script": [
                    {
                        "tick": 0,
                        "action": "SLEEP",
                        "duration": VICTIM_SLEEP_TICKS,
                    },
                    {"tick": 5, "action": "PRINT", "text": "This is victim."},
                    {
                        "tick": 6,
                        "action": "PRINT",
                        "text": "Expected output: 1",
                    },
                    {
                        "tick": 7,
                        "action": "CALL_FUNCTION",
                        "segment": "f",
                        "format": "Actual output: {value}",
                    },
                ],
            },
            {
                "name": "attacker",
                "role": "attacker",
                "script": [
                    {"tick": 1, "action": "GBHAMMER", "va": TARGET_VA},
                    {
                        "tick": 2,
                        "action": "WRITE_FUNCTION_BLOB",
                        "va": TARGET_VA,
                        "value": 2,
                    },
                    {"tick": 3, "action": "CALL_FUNCTION", "va": TARGET_VA},
                ],
            },
        ],
        verdict=[{"actor": "victim", "line": "Actual output: 2"}],
    )


def binary_exec() -> dict:
    """Victim calls f at 0x20000 and gets the attacker's return value."""
    return _binary_exec("binary_exec", "x86_64")


def armv7_binary_exec() -> dict:
    """binary_exec on the ARMv7 short-descriptor format (nG bit)."""
    return _binary_exec("armv7_binary_exec", "armv7")


def data_snoop() -> dict:
    """The victim's secret lands in the attacker's page."""
    reads = [
        {
            "tick": tick,
            "action": "PRINT_READ",
            "va": TARGET_VA,
            "format": "This is attacker {text}",
        }
        for tick in range(2, 20, 2)
    ]
    return _document(
        "data_snoop",
        "The attacker's global dTLB entry redirects the victim's write.",
        processes=[
            {
                "name": "victim",
                "role": "victim",
                "segments": [
                    {"name": "secret", "va": TARGET_VA, "size": PAGE_SIZE}
                ],
                "script": [
                    {"tick": 0, "action": "SLEEP", "duration": 11},
                    {
                        "tick": 11,
                        "action": "WRITE_BYTES",
                        "segment": "secret",
                        "text": "This is victim's data",
                    },
                ],
            },
            {
                "name": "attacker",
                "role": "attacker",
                "script": [{"tick": 1, "action": "GBHAMMER", "va": TARGET_VA}]
                + reads,
            },
        ],
        verdict=[
            {
                "actor": "attacker",
                "line": "This is attacker This is victim's data",
            }
        ],
    )


def _victim_loop(name: str, evict: bool) -> dict:
    calls = [
        {
            "tick": tick,
            "action": "CALL_FUNCTION",
            "segment": "f",
            "format": "Actual output: {value}",
        }
        for tick in range(0, 18, 2)
    ]
    if evict:
        takeover = {
            "tick": 5,
            "action": "EVICT_TLB_SET",
            "va": TARGET_VA,
            "kind": "I",
        }
    else:
        takeover = {"tick": 5, "action": "CALL_FUNCTION", "va": TARGET_VA}
    return _document(
        name,
        "The victim calls f without pausing, so its own iTLB entry stays "
        "resident unless the attacker evicts it.",
        tlb={"tagging": "vpn_asid"},
        processes=[
            {
                "name": "victim",
                "role": "victim",
                "segments": [{"name": "f", "va": TARGET_VA, "blob": 1}],
                "script": calls,
            },
            {
                "name": "attacker",
                "role": "attacker",
                "script": [
                    {"tick": 1, "action": "GBHAMMER", "va": TARGET_VA},
                    {
                        "tick": 3,
                        "action": "WRITE_FUNCTION_BLOB",
                        "va": TARGET_VA,
                        "value": 2,
                    },
                    takeover,
                ],
            },
        ],
        verdict=[{"actor": "victim", "line": "Actual output: 2"}],
    )


def victim_loop() -> dict:
    """The attacker evicts the victim's iTLB entry first."""
    return _victim_loop("victim_loop", evict=True)


def victim_loop_no_evict() -> dict:
    """Negative control: same loop, no eviction set."""
    return _victim_loop("victim_loop_no_evict", evict=False)


def riscv_span() -> dict:
    """A flipped Sv39 level-1 G bit shares a whole 2 MiB range."""
    pages = MEGAPAGE // PAGE_SIZE
    attacker_touches, victim_touches = [], []
    for index in range(pages):
        va = RISCV_TARGET_VA + index * PAGE_SIZE
        attacker_touches.append(
            {"tick": 2 + 2 * index, "action": "TOUCH_READ", "va": va}
        )
        victim_touches.append(
            {"tick": 3 + 2 * index, "action": "TOUCH_READ", "va": va}
        )
    return _document(
        "riscv_span",
        "One non-leaf global bit misdirects every page of a megapage.",
        isa="rv39",
        processes=[
            {
                "name": "victim",
                "role": "victim",
                "segments": [
                    {"name": "data", "va": RISCV_TARGET_VA, "size": MEGAPAGE}
                ],
                "script": [{"tick": 0, "action": "SLEEP", "duration": 3}]
                + victim_touches,
            },
            {
                "name": "attacker",
                "role": "attacker",
                "script": [
                    {
                        "tick": 1,
                        "action": "GBHAMMER",
                        "va": RISCV_TARGET_VA,
                        "level": 1,
                        "length": MEGAPAGE,
                    }
                ]
                + attacker_touches,
            },
        ],
        verdict=[{"metric": "misdirected_pages", "at_least": pages}],
    )


_BUILTINS: Dict[str, Callable[[], dict]] = {
    "binary_exec": binary_exec,
    "data_snoop": data_snoop,
    "victim_loop": victim_loop,
    "victim_loop_no_evict": victim_loop_no_evict,
    "riscv_span": riscv_span,
    "armv7_binary_exec": armv7_binary_exec,
}


def builtin_names() -> List[str]:
    """Names of every builtin scenario."""
    return list(_BUILTINS)


def builtin_scenarios() -> Dict[str, dict]:
    """Every builtin scenario document by name."""
    return {name: factory() for name, factory in _BUILTINS.items()}


def builtin_document(name: str) -> dict:
    """
    One builtin scenario document.

    Raises:
        UnknownScenario: listing the valid names.
    """
    if name not in _BUILTINS:
        raise UnknownScenario(name, _BUILTINS)
    return copy.deepcopy(_BUILTINS[name]())
