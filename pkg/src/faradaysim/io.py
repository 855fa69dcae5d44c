"""Stream, report and table files.

Stream files are diff-able text: '#'-prefixed header lines carrying channel,
rate, units, the resolved spec (and its hash) and the seed, then one value
per row.  Reports are sectioned key=value text with units in the key names.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .streams import SampleStream

STREAM_MAGIC = "# faradaysim-stream v1"
REPORT_MAGIC = "# faradaysim-report v1"
TABLE_MAGIC = "# faradaysim-table v1"


def spec_hash(spec_text: str) -> str:
    return hashlib.sha256(spec_text.encode("utf-8")).hexdigest()


def _provenance_lines(spec_text: str | None, seed: int | None) -> list[str]:
    lines = []
    if seed is not None:
        lines.append(f"# seed: {seed}")
    if spec_text is not None:
        lines.append(f"# spec_sha256: {spec_hash(spec_text)}")
        lines.append("# spec-begin")
        lines.extend("# " + line for line in spec_text.rstrip("\n").split("\n"))
        lines.append("# spec-end")
    return lines


def write_stream(
    path, stream: SampleStream, spec_text: str | None = None, seed: int | None = None
):
    lines = [
        STREAM_MAGIC,
        f"# channel: {stream.channel}",
        f"# units: {stream.units}",
        f"# sample_rate: {stream.sample_rate!r}",
        f"# start_time: {stream.start_time!r}",
    ]
    lines += _provenance_lines(spec_text, seed)
    body = "\n".join(repr(float(v)) for v in stream.values.tolist())
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def read_stream(path) -> SampleStream:
    text = Path(path).read_text()
    lines = text.split("\n")
    if not lines or lines[0] != STREAM_MAGIC:
        raise ConfigurationError(f"{path} is not a faradaysim stream file")
    header: dict[str, str] = {}
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = i
            break
        if line.startswith("# ") and ": " in line and not line.startswith("# spec"):
            key, _, value = line[2:].partition(": ")
            header[key] = value
    values = np.array(
        [float(line) for line in lines[body_start:] if line.strip()], dtype=float
    )
    return SampleStream(
        sample_rate=float(header["sample_rate"]),
        start_time=float(header["start_time"]),
        channel=header["channel"],
        values=values,
        units=header.get("units", ""),
        meta={"seed": int(header["seed"])} if "seed" in header else {},
    )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(path, sections: dict, spec_text: str | None = None):
    lines = [REPORT_MAGIC]
    lines += _provenance_lines(spec_text, None)
    for name, entries in sections.items():
        lines.append(f"[{name}]")
        for key, value in entries.items():
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    Path(path).write_text("\n".join(lines).rstrip("\n") + "\n")


def read_report(path) -> dict:
    sections: dict[str, dict[str, str]] = {}
    current = None
    for line in Path(path).read_text().split("\n"):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = {}
        elif "=" in line and current is not None:
            key, _, value = line.partition("=")
            sections[current][key.strip()] = value.strip()
    return sections


def write_table(path, columns: list[str], rows, spec_text: str | None = None):
    """Plot-ready CSV with a provenance comment header."""
    lines = [TABLE_MAGIC]
    lines += _provenance_lines(spec_text, None)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_format_value(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
