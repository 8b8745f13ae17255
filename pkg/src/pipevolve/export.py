"""front.json, generations.csv and run_meta.json writers."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from .evolve import GenerationRecord, Individual, dominates


class ExportError(RuntimeError):
    pass


def front_entries(front: Sequence[Individual]) -> list[dict]:
    entries = [
        {
            "pipeline": ind.key,
            "content_distance": ind.objectives[0],
            "style_distance": ind.objectives[1],
            "selected": False,
        }
        for ind in front
    ]
    check_front(entries)
    return entries


def check_front(entries: Sequence[dict]) -> None:
    """Raise if entries are unsorted or any entry dominates another."""
    pts = [(e["content_distance"], e["style_distance"]) for e in entries]
    if any(a[0] > b[0] for a, b in zip(pts, pts[1:])):
        raise ExportError("front entries are not sorted by content distance")
    for i, p in enumerate(pts):
        for j, q in enumerate(pts):
            if i != j and dominates(p, q):
                raise ExportError(
                    f"front entry {entries[i]['pipeline']!r} dominates {entries[j]['pipeline']!r}"
                )


def write_front(front: Sequence[Individual], path) -> None:
    payload = {"solutions": front_entries(front)}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_front(path) -> list[dict]:
    entries = json.loads(Path(path).read_text(encoding="utf-8"))["solutions"]
    check_front(entries)
    return entries


def write_generations(records: Sequence[GenerationRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["generation", "pipeline", "dists", "style", "rank"])
        for rec in records:
            for pipeline, d, s, rank in rec.rows:
                writer.writerow([rec.generation, pipeline, repr(float(d)), repr(float(s)), rank])


def read_generations(path) -> list[GenerationRecord]:
    by_gen: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            by_gen.setdefault(int(row["generation"]), []).append(
                (row["pipeline"], float(row["dists"]), float(row["style"]), int(row["rank"]))
            )
    return [GenerationRecord(g, tuple(rows)) for g, rows in sorted(by_gen.items())]


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
