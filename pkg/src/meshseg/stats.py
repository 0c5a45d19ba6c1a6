"""Telemetry aggregation and the chi-square test of independence.

success_rates groups run records by a field and tabulates Fail/OK counts;
chi_square runs Pearson's test on the resulting contingency table, with
Yates' continuity correction available behind a flag for the 2x2 case.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.special import gammaincc

from .errors import UnknownField, ZeroMarginal

# CLI-friendly aliases for record field names
FIELD_ALIASES = {"model": "model_name", "texture": "peak_bytes"}


@dataclass
class ContingencyTable:
    """Counts[r][c] with row labels (treatment levels) and column labels."""

    rows: list[str]
    cols: list[str]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.shape != (len(self.rows), len(self.cols)):
            raise ValueError("counts shape must match row/col labels")
        if self.counts.shape[0] < 2 or self.counts.shape[1] < 2:
            raise ValueError("contingency table must be at least 2x2")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")


def chi_square(table: ContingencyTable, yates: bool = False):
    """Pearson statistic, degrees of freedom, and p-value.

    Expected counts come from the row/column marginals; df = (r-1)(c-1).
    For df=1 the p-value is erfc(sqrt(stat/2)); larger tables use the
    regularized upper incomplete gamma.  ``yates`` applies the continuity
    correction (df=1 tables only).
    """
    obs = table.counts
    row = obs.sum(axis=1)
    col = obs.sum(axis=0)
    total = obs.sum()
    if np.any(row == 0) or np.any(col == 0) or total == 0:
        raise ZeroMarginal("contingency table has an empty row or column")
    expected = np.outer(row, col) / total
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    dev = np.abs(obs - expected)
    if yates and df == 1:
        dev = np.maximum(dev - 0.5, 0.0)
    stat = float((dev * dev / expected).sum())
    if df == 1:
        p = math.erfc(math.sqrt(stat / 2.0))
    else:
        p = float(gammaincc(df / 2.0, stat / 2.0))
    return stat, df, p


def load_telemetry(path: Union[str, Path]) -> list[dict]:
    """Parse a JSON-lines telemetry file."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_no}: bad telemetry line: {e}") from e
    return records


def _field_value(record: dict, field: str):
    if field not in record:
        raise UnknownField(f"record has no field '{field}'")
    return record[field]


def _group_key(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


@dataclass
class GroupRates:
    group: str
    fail: int
    ok: int

    @property
    def rate(self) -> float:
        total = self.ok + self.fail
        return self.ok / total if total else float("nan")


def success_rates(records: Iterable[dict], group_by: str) -> list[GroupRates]:
    """Fail/OK counts and success rate per group, plus an 'overall' row.

    Row order: groups sorted by key, overall last.
    """
    field = FIELD_ALIASES.get(group_by, group_by)
    buckets: dict[str, list[int]] = {}
    total = [0, 0]
    for record in records:
        key = _group_key(_field_value(record, field))
        ok = record.get("status") == "OK"
        bucket = buckets.setdefault(key, [0, 0])
        bucket[1 if ok else 0] += 1
        total[1 if ok else 0] += 1
    rows = [GroupRates(k, buckets[k][0], buckets[k][1]) for k in sorted(buckets)]
    rows.append(GroupRates("overall", total[0], total[1]))
    return rows


def contingency_from_records(records: Sequence[dict], group_by: str) -> ContingencyTable:
    """Status-vs-group table with columns [Fail, OK]."""
    rows = success_rates(records, group_by)[:-1]
    if len(rows) < 2:
        raise ZeroMarginal(f"need at least 2 groups of '{group_by}' for a table")
    return ContingencyTable(
        rows=[r.group for r in rows],
        cols=["Fail", "OK"],
        counts=np.array([[r.fail, r.ok] for r in rows], dtype=np.float64),
    )


def filter_records(records: Iterable[dict], field: str, value_text: str) -> list[dict]:
    """Keep records whose field equals the (JSON-parsed when possible) value."""
    field = FIELD_ALIASES.get(field, field)
    try:
        wanted = json.loads(value_text)
    except json.JSONDecodeError:
        wanted = value_text
    out = []
    for record in records:
        have = _field_value(record, field)
        if have == wanted or _group_key(have) == value_text:
            out.append(record)
    return out
