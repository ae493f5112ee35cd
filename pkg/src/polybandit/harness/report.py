"""Side-by-side CSV of cumulative regret, one column per algorithm."""
from __future__ import annotations

import os
from typing import Optional

import numpy as np

from ..trace import RegretTrace

GAP = "NA"


def _label(tr: RegretTrace, fallback: str) -> str:
    return str(tr.meta.get("label") or tr.meta.get("algorithm") or fallback)


def report(traces, out: Optional[str] = None, gnuplot_dir: Optional[str] = None,
           points: int = 200) -> str:
    """Merge traces (objects or CSV paths) on a common t grid.

    Columns are sorted by label so the layout is stable; a trace that is
    missing or shorter than a grid point gets the gap marker.
    """
    loaded = {}
    for i, tr in enumerate(traces):
        if tr is None or (isinstance(tr, str) and not os.path.exists(tr)):
            name = f"missing_{i}" if tr is None else os.path.basename(tr)
            loaded[name] = None
            continue
        if isinstance(tr, (str, os.PathLike)):
            tr = RegretTrace.read_csv(tr)
        label = _label(tr, f"trace_{i}")
        base, n = label, 2
        while label in loaded:
            label = f"{base}_{n}"
            n += 1
        loaded[label] = tr
    labels = sorted(loaded)
    T = max((tr.horizon for tr in loaded.values() if tr is not None), default=0)
    grid = np.unique(np.linspace(1, max(T, 1), min(points, max(T, 1))).round().astype(int))
    lines = [",".join(["t"] + labels)]
    cols = {}
    for lab in labels:
        tr = loaded[lab]
        col = []
        for t in grid:
            if tr is None or tr.t.size == 0 or t > tr.t[-1]:
                col.append(GAP)
            else:
                j = int(np.searchsorted(tr.t, t, side="right")) - 1
                col.append(repr(float(tr.cumulative[j])) if j >= 0 else GAP)
        cols[lab] = col
    for r, t in enumerate(grid):
        lines.append(",".join([str(int(t))] + [cols[lab][r] for lab in labels]))
    text = "\r\n".join(lines) + "\r\n"
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    if gnuplot_dir:
        os.makedirs(gnuplot_dir, exist_ok=True)
        for lab in labels:
            with open(os.path.join(gnuplot_dir, f"{lab}.dat"), "w") as fh:
                fh.write(f"# t cumulative_regret ({lab})\n")
                for t, v in zip(grid, cols[lab]):
                    fh.write(f"{int(t)} {'?' if v == GAP else v}\n")
    return text
