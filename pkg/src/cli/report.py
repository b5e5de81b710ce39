"""
Run reports: one dictionary, rendered as sorted-key JSON or as
`key: value` lines followed by the trace.
"""
import json
import os
from pathlib import Path
from typing import Any, Iterable, Tuple

from ..scenario.config import FORMAT_VERSION, to_dict
from ..scenario.engine import RunResult


def build_report(result: RunResult) -> dict:
    """Collect every fact of a run into one dictionary."""
    return {
        "format_version": FORMAT_VERSION,
        "scenario": result.config.name,
        "effective_config": to_dict(result.config),
        "verdict": result.verdict.as_dict(),
        "outputs": {
            name: list(lines) for name, lines in result.outputs.items()
        },
        "metrics": result.metrics,
        "gbhammer": list(result.gbhammer),
        "trace": list(result.trace),
    }


def render_json(report: dict) -> str:
    """Machine-readable form; byte-identical for identical reports."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _flatten(value: Any, prefix: str) -> Iterable[Tuple[str, Any]]:
    if isinstance(value, dict):
        for key in sorted(value):
            name = f"{prefix}.{key}" if prefix else str(key)
            yield from _flatten(value[key], name)
    elif isinstance(value, list):
        if not value:
            yield prefix, "[]"
        for index, item in enumerate(value):
            yield from _flatten(item, f"{prefix}[{index}]")
    else:
        yield prefix, value


def render_text(report: dict) -> str:
    """Line-oriented form holding the same facts as render_json()."""
    body = {key: value for key, value in report.items() if key != "trace"}
    lines = [
        f"{key}: {json.dumps(value)}" for key, value in _flatten(body, "")
    ]
    lines.append("trace:")
    lines.extend(report.get("trace", ()))
    return "\n".join(lines) + "\n"


def render_summary(report: dict) -> str:
    """Short console summary of a run."""
    verdict = report["verdict"]
    config = report["effective_config"]
    lines = [
        f"scenario: {report['scenario']} (isa {config['isa']}, "
        f"seed {config['seed']})",
        f"gbhammer: {', '.join(verdict['gbhammer_outcomes']) or 'none'}",
    ]
    for proc in config["processes"]:
        prefix = f"[{proc['name']}] "
        for line in report["outputs"].get(proc["name"], ()):
            lines.append(prefix + line)
    for rule in verdict["rules"]:
        mark = "ok" if rule["passed"] else "FAILED"
        lines.append(f"rule {rule['rule']}: {mark}")
    lines.append(f"misdirection_count: {verdict['misdirection_count']}")
    lines.append(f"shared_span_bytes: {verdict['shared_span_bytes']}")
    lines.append(
        f"exploit_success: {str(verdict['exploit_success']).lower()}"
    )
    return "\n".join(lines)


def write_report(path: str | os.PathLike, report: dict) -> None:
    """Write JSON for a .json path, the text form otherwise."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".json":
        text = render_json(report)
    else:
        text = render_text(report)
    path.write_text(text, encoding="utf-8")


def write_trace(path: str | os.PathLike, trace: Iterable[str]) -> None:
    """Write trace lines, one per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{line}\n" for line in trace), encoding="utf-8")
