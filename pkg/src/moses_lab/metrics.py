"""Search-efficiency gain, latency reduction and CMAT, plus report rendering."""
from __future__ import annotations

import csv
import io
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, fields

from .errors import EmptyRows, MismatchedRuns


@dataclass(frozen=True)
class MetricRow:
    strategy: str
    seed: int
    search_cost_ms: float
    end_latency_ms: float
    gain: float
    reduction: float
    cmat_percent: float


def gain_and_reduction(reference, candidate):
    """(reference.search_cost / candidate.search_cost, reference.latency / candidate.latency)."""
    ref_tasks = [t.task_id for t in reference.tasks]
    cand_tasks = [t.task_id for t in candidate.tasks]
    if ref_tasks != cand_tasks or reference.seed != candidate.seed:
        raise MismatchedRuns("reports cover different task sets or seeds")
    gain = reference.search_cost_ms / candidate.search_cost_ms
    reduction = reference.end_latency_ms / candidate.end_latency_ms
    return gain, reduction


def cmat(gain: float, reduction: float) -> float:
    """(gain * reduction - 1) * 100."""
    if gain <= 0 or reduction <= 0:
        raise ValueError("gain and reduction must be positive")
    return (gain * reduction - 1.0) * 100.0


def metric_row(reference, candidate, strategy: str = None) -> MetricRow:
    gain, reduction = gain_and_reduction(reference, candidate)
    return MetricRow(
        strategy=strategy or candidate.strategy,
        seed=candidate.seed,
        search_cost_ms=candidate.search_cost_ms,
        end_latency_ms=candidate.end_latency_ms,
        gain=gain,
        reduction=reduction,
        cmat_percent=cmat(gain, reduction),
    )


def medians(rows) -> dict:
    """Per-strategy medians of every numeric column, across seeds."""
    groups = defaultdict(list)
    for r in rows:
        groups[r.strategy].append(r)
    out = {}
    for name, rs in groups.items():
        out[name] = {
            f.name: statistics.median(getattr(r, f.name) for r in rs)
            for f in fields(MetricRow) if f.name not in ("strategy", "seed")
        }
    return out


_COLUMNS = [f.name for f in fields(MetricRow)]


def build_report(rows, fmt: str = "csv") -> bytes:
    rows = list(rows)
    if not rows:
        raise EmptyRows("no metric rows to render")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_COLUMNS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
        return buf.getvalue().encode("utf-8")
    if fmt == "markdown":
        cells = [_COLUMNS] + [[_fmt_cell(v) for v in asdict(r).values()] for r in rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(_COLUMNS))]
        lines = ["| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |" for row in cells]
        lines.insert(1, "|" + "|".join("-" * (w + 2) for w in widths) + "|")
        return ("\n".join(lines) + "\n").encode("utf-8")
    if fmt == "plot-data":
        series = defaultdict(list)
        for r in rows:
            series[r.strategy].append((r.seed, r.cmat_percent))
        out = []
        for name in series:
            out.append(f"# strategy\t{name}")
            out.append("seed\tcmat_percent")
            out.extend(f"{s}\t{c!r}" for s, c in sorted(series[name]))
            out.append("")
        return "\n".join(out).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def _fmt_cell(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def parse_csv(data: bytes) -> list:
    reader = csv.DictReader(io.StringIO(data.decode("utf-8")))
    rows = []
    for rec in reader:
        rows.append(MetricRow(
            strategy=rec["strategy"],
            seed=int(rec["seed"]),
            search_cost_ms=float(rec["search_cost_ms"]),
            end_latency_ms=float(rec["end_latency_ms"]),
            gain=float(rec["gain"]),
            reduction=float(rec["reduction"]),
            cmat_percent=float(rec["cmat_percent"]),
        ))
    return rows
