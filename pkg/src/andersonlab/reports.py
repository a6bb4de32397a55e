"""Plain-text report formats: key-value test reports and columnar tables."""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _parse(text: str):
    if text in ("true", "false"):
        return text == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if "," in text:
        return [_parse(x) for x in text.split(",")]
    return text


def write_reports(path, reports: Sequence[dict], header: dict | None = None) -> Path:
    """One block per report of ``key<TAB>value`` lines, blocks separated by blank lines."""
    path = Path(path)
    lines = ["# report v1"]
    for k, v in (header or {}).items():
        lines.append(f"# {k}\t{_fmt(v)}")
    for rep in reports:
        lines.append("")
        for k, v in rep.items():
            if isinstance(v, dict):
                for sub, sv in v.items():
                    lines.append(f"{k}.{sub}\t{_fmt(sv)}")
            else:
                lines.append(f"{k}\t{_fmt(v)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_reports(path) -> tuple[dict, list[dict]]:
    header: dict = {}
    reports: list[dict] = []
    current: dict | None = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("\t")
            if val:
                header[key] = _parse(val)
            continue
        if not line.strip():
            current = None
            continue
        if current is None:
            current = {}
            reports.append(current)
        key, _, val = line.partition("\t")
        current[key] = _parse(val)
    return header, reports


def write_columns(path, names: Sequence[str], rows: Iterable[Sequence], summary: dict | None = None) -> Path:
    """Tab-separated table with a header line and an optional ``# key value`` summary block."""
    path = Path(path)
    lines = ["\t".join(names)]
    lines.extend("\t".join(_fmt(v) for v in row) for row in rows)
    if summary:
        lines.append("")
        lines.extend(f"# {k}\t{_fmt(v)}" for k, v in summary.items())
    path.write_text("\n".join(lines) + "\n")
    return path


def read_columns(path) -> tuple[list[str], list[list], dict]:
    text = Path(path).read_text().splitlines()
    names = text[0].split("\t")
    rows, summary = [], {}
    for line in text[1:]:
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("\t")
            summary[k] = _parse(v)
        elif line:
            rows.append([_parse(x) for x in line.split("\t")])
    return names, rows, summary


def write_batch(path, realizations: Sequence[int], values: Sequence[np.ndarray]) -> Path:
    """Unfolded atoms per realization: ``realization<TAB>count<TAB>x1;x2;...``."""
    rows = [(r, len(v), ";".join(repr(float(x)) for x in v)) for r, v in zip(realizations, values)]
    return write_columns(path, ["realization", "count", "atoms"], rows)


def read_batch(path) -> tuple[list[int], list[np.ndarray]]:
    real, vals = [], []
    lines = Path(path).read_text().splitlines()[1:]
    for line in lines:
        if not line or line.startswith("#"):
            continue
        r, c, atoms = (line.split("\t") + [""])[:3]
        arr = np.array([float(x) for x in atoms.split(";") if x], dtype=float)
        if arr.size != int(c):
            raise ValueError(f"realization {r}: count {c} does not match {arr.size} atoms")
        real.append(int(r))
        vals.append(arr)
    return real, vals


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

