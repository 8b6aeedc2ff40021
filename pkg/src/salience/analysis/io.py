"""Headered CSV writers for analysis outputs and a minimal SVG scatter/trajectory renderer."""

from __future__ import annotations

import csv
from collections.abc import Sequence
from html import escape

import numpy as np

from salience.analysis.embed import EmbeddingResult
from salience.analysis.profiles import Profile, Transducer

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_embeddings(path, results: Sequence[EmbeddingResult], object_ids: Sequence[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("agent_id", "object_id", "t", "x", "y", "previous"))
        for res, objs in zip(results, object_ids):
            prev = res.previous if res.previous is not None else np.full(len(res.points), -1)
            for i, (x, y) in enumerate(res.points):
                w.writerow((res.agent_ids[i], objs[i], res.t, repr(float(x)), repr(float(y)), int(prev[i])))


def write_pca(path, rows: Sequence[tuple[int, np.ndarray]]) -> None:
    """rows: (t, cumulative fractions for 1..n components)."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("t", "components", "cumulative_fraction"))
        for t, cum in rows:
            for j, v in enumerate(cum):
                w.writerow((t, j + 1, repr(float(v))))


def write_inertia(path, curve: Sequence[tuple[int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("k", "inertia"))
        for k, v in curve:
            w.writerow((k, repr(float(v))))


def write_assignments(path, assignments: dict[str, int]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("agent_id", "partition"))
        for a, p in assignments.items():
            w.writerow((a, p))


def write_profiles(path, profiles: Sequence[Profile]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("partition", "metric", "t", "n", "mean_z", "half_width"))
        for p in profiles:
            w.writerow((p.partition, p.metric, p.t, p.n, repr(p.mean_z), repr(p.half_width)))


def write_transducers(curve_path, stats_path, items: Sequence[tuple[int, int, str, Transducer]]) -> None:
    """items: (t, unit, target, transducer)."""
    with open(curve_path, "w", newline="") as fc, open(stats_path, "w", newline="") as fs:
        wc, ws = _writer(fc), _writer(fs)
        wc.writerow(("t", "unit", "target", "bin", "lo", "hi", "count", "mean", "sem"))
        ws.writerow(("t", "unit", "target", "mic", "spearman", "flags"))
        for t, unit, target, tr in items:
            for b in range(len(tr.counts)):
                wc.writerow((t, unit, target, b, repr(float(tr.edges[b])), repr(float(tr.edges[b + 1])),
                             int(tr.counts[b]), repr(float(tr.means[b])), repr(float(tr.sems[b]))))
            ws.writerow((t, unit, target, repr(tr.mic), repr(tr.spearman), ";".join(tr.flags)))


def render_svg(path, results: Sequence[EmbeddingResult], labels: Sequence[Sequence[str]],
               size: int = 640, trajectories: int = 30) -> None:
    """One panel per step, points coloured by label; a few agents traced across steps."""
    pad = 20
    n = len(results)
    width = size * n
    names = sorted({l for ls in labels for l in ls})
    colour = {l: PALETTE[i % len(PALETTE)] for i, l in enumerate(names)}
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{size + 30}" '
             f'font-family="sans-serif" font-size="12">']

    def mapper(res, panel):
        lo, hi = res.points.min(axis=0), res.points.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return lambda p: (panel * size + pad + (p[0] - lo[0]) / span[0] * (size - 2 * pad),
                          pad + (hi[1] - p[1]) / span[1] * (size - 2 * pad))

    maps = [mapper(r, i) for i, r in enumerate(results)]
    for i, (res, labs) in enumerate(zip(results, labels)):
        parts.append(f'<text x="{i * size + pad}" y="{size + 20}">t = {res.t}</text>')
        for p, l in zip(res.points, labs):
            x, y = maps[i](p)
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="1.6" fill="{colour[l]}" fill-opacity="0.6"/>')
    if n > 1 and trajectories > 0 and results[0].agent_ids:
        pos = [{a: maps[i](p) for a, p in zip(r.agent_ids, r.points)} for i, r in enumerate(results)]
        traced = [a for a in results[0].agent_ids if all(a in d for d in pos)][:trajectories]
        for a in traced:
            pts = " ".join(f"{d[a][0]:.1f},{d[a][1]:.1f}" for d in pos)
            parts.append(f'<polyline points="{pts}" fill="none" stroke="#333" stroke-opacity="0.35"/>')
    for j, l in enumerate(names):
        parts.append(f'<rect x="{width - 120}" y="{10 + 16 * j}" width="10" height="10" fill="{colour[l]}"/>')
        parts.append(f'<text x="{width - 105}" y="{19 + 16 * j}">{escape(l)}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
