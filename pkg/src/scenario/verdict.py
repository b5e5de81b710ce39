"""Verdict of a scenario run, derived from outputs and metrics only."""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

from .config import ScenarioConfig, VerdictRule


@dataclass(frozen=True)
class Verdict:
    """
    Outcome of one run.

    Attributes:
        exploit_success (bool): Every rule holds and at least one victim
            translation was misdirected.
        victim_outputs (Tuple[str, ...]): Lines printed by victims.
        attacker_outputs (Tuple[str, ...]): Lines printed by attackers.
        misdirection_count (int): Victim translations served by another
            ASID's global entry.
        misdirected_pages (int): Distinct victim pages among them.
        shared_span_bytes (int): Virtual range covered by the serving
            entries.
        gbhammer_outcomes (Tuple[str, ...]): Outcome of every attempt.
        rules (Tuple[Tuple[str, bool], ...]): Each rule and whether it
            held.
    """

    exploit_success: bool
    victim_outputs: Tuple[str, ...]
    attacker_outputs: Tuple[str, ...]
    misdirection_count: int
    misdirected_pages: int
    shared_span_bytes: int
    gbhammer_outcomes: Tuple[str, ...]
    rules: Tuple[Tuple[str, bool], ...]

    def as_dict(self) -> dict:
        """Plain form for reports."""
        return {
            "exploit_success": self.exploit_success,
            "victim_outputs": list(self.victim_outputs),
            "attacker_outputs": list(self.attacker_outputs),
            "misdirection_count": self.misdirection_count,
            "misdirected_pages": self.misdirected_pages,
            "shared_span_bytes": self.shared_span_bytes,
            "gbhammer_outcomes": list(self.gbhammer_outcomes),
            "rules": [
                {"rule": text, "passed": passed} for text, passed in self.rules
            ],
        }


def rule_holds(
    rule: VerdictRule,
    outputs: Mapping[str, Sequence[str]],
    metrics: Mapping[str, int],
) -> bool:
    """Check one rule against per-process outputs and metrics."""
    if rule.metric is not None:
        return metrics.get(rule.metric, 0) >= rule.at_least
    lines = outputs.get(rule.actor, ())
    if rule.line is not None:
        return rule.line in lines
    return any(rule.contains in line for line in lines)


def evaluate(
    config: ScenarioConfig,
    outputs: Mapping[str, Sequence[str]],
    metrics: Mapping[str, int],
    gbhammer_outcomes: Sequence[str] = (),
) -> Verdict:
    """
    Build the verdict of a finished run.

    Args:
        config (ScenarioConfig): The scenario that ran.
        outputs (Mapping[str, Sequence[str]]): Output lines by process name.
        metrics (Mapping[str, int]): misdirection_count,
            misdirected_pages, shared_span_bytes and flip_events.
        gbhammer_outcomes (Sequence[str]): Outcomes in attempt order.

    Returns:
        Verdict: The verdict.
    """
    results = tuple(
        (rule.describe(), rule_holds(rule, outputs, metrics))
        for rule in config.verdict
    )
    by_role: Dict[str, List[str]] = {"attacker": [], "victim": []}
    for proc in config.processes:
        by_role[proc.role].extend(outputs.get(proc.name, ()))
    misdirections = metrics.get("misdirection_count", 0)
    return Verdict(
        exploit_success=misdirections >= 1
        and all(passed for _, passed in results),
        victim_outputs=tuple(by_role["victim"]),
        attacker_outputs=tuple(by_role["attacker"]),
        misdirection_count=misdirections,
        misdirected_pages=metrics.get("misdirected_pages", 0),
        shared_span_bytes=metrics.get("shared_span_bytes", 0),
        gbhammer_outcomes=tuple(gbhammer_outcomes),
        rules=results,
    )
