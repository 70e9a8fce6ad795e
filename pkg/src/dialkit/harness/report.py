"""Report emission: a JSON record and an aligned text table."""

from __future__ import annotations

import json
from pathlib import Path

from .. import linker, ranker, success

FORMATS = ("json", "txt")


def _to_jsonable(value):
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return value.item()
    return value


def metric_table(subtask: str, record: dict | None) -> str:
    if not record:
        return "(no metrics)\n"
    if subtask in ("s1", "s2"):
        return ranker.format_report(record)
    if subtask == "s3":
        return success.format_report(record)
    if subtask == "s4":
        return linker.format_report(record)
    return "".join(f"{k:<14} {'-' if v is None else f'{v:.4f}':>8}\n" for k, v in sorted(record.items()))


def render_text(report: dict) -> str:
    subtask = report.get("subtask", "")
    lines = [f"subtask  {subtask}", f"seed     {report.get('seed')}"]
    if "selected_epoch" in report:
        lines.append(f"selected epoch {report['selected_epoch']}")
    if "strategy" in report:
        lines.append(f"ensemble {report['strategy']} x {report['models']}")
    text = "\n".join(lines) + "\n\n" + metric_table(subtask, report.get("test"))
    if report.get("epochs"):
        text += "\nepoch  loss\n"
        for e in report["epochs"]:
            loss = "-" if e["loss"] is None else f"{e['loss']:.5f}"
            text += f"{e['epoch']:>5}  {loss}\n"
    return text


def emit_report(report: dict, out, formats=FORMATS) -> dict:
    """Write ``report.json`` and/or ``report.txt`` under ``out``; the bytes
    depend only on the report's contents."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if "json" in formats:
        paths["json"] = out / "report.json"
        paths["json"].write_text(json.dumps(_to_jsonable(report), indent=2, sort_keys=True) + "\n")
    if "txt" in formats:
        paths["txt"] = out / "report.txt"
        paths["txt"].write_text(render_text(report))
    return paths
