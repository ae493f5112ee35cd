"""Per-step regret traces and their CSV form."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__

COLUMNS = ("t", "cumulative_regret", "instantaneous_regret", "phase")


@dataclass
class RegretTrace:
    meta: dict
    t: np.ndarray
    cumulative: np.ndarray
    instantaneous: np.ndarray
    phase: np.ndarray
    diagnostics: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @classmethod
    def from_session(cls, session, meta: Optional[dict] = None, diagnostics=None, **kw) -> "RegretTrace":
        inst = session.ledger.instantaneous()
        meta = dict(meta or {})
        meta.setdefault("sigma_noise", session.sigma)
        meta.setdefault("r_star", session.r_star)
        return cls(meta, np.arange(1, inst.size + 1), np.cumsum(inst), inst,
                   session.ledger.phases(), list(diagnostics or []), **kw)

    @property
    def final_regret(self) -> float:
        return float(self.cumulative[-1]) if self.cumulative.size else 0.0

    @property
    def horizon(self) -> int:
        return int(self.t[-1]) if self.t.size else 0

    def rows(self, max_rows: Optional[int] = None) -> np.ndarray:
        """Indices of rows to write: all, or an even subsample that keeps the last step."""
        n = self.t.size
        if max_rows is None or n <= max_rows:
            return np.arange(n)
        idx = np.unique(np.linspace(0, n - 1, max_rows).round().astype(int))
        return idx

    def to_csv(self, path=None, max_rows: Optional[int] = None) -> str:
        buf = io.StringIO()
        head = dict(self.meta)
        head["code_version"] = __version__
        buf.write("# meta: " + json.dumps(head, sort_keys=True, default=_jsonable) + "\n")
        if self.flags:
            buf.write("# flags: " + json.dumps(self.flags, sort_keys=True, default=_jsonable) + "\n")
        if self.summary:
            buf.write("# summary: " + json.dumps(self.summary, sort_keys=True, default=_jsonable) + "\n")
        for row in self.diagnostics:
            buf.write("# diag: " + json.dumps(row, sort_keys=True, default=_jsonable) + "\n")
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(COLUMNS)
        for i in self.rows(max_rows):
            w.writerow((int(self.t[i]), repr(float(self.cumulative[i])),
                        repr(float(self.instantaneous[i])), self.phase[i]))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def read_csv(cls, path) -> "RegretTrace":
        meta, flags, summary, diags, lines = {}, {}, {}, [], []
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("# meta: "):
                    meta = json.loads(line[8:])
                elif line.startswith("# flags: "):
                    flags = json.loads(line[9:])
                elif line.startswith("# summary: "):
                    summary = json.loads(line[11:])
                elif line.startswith("# diag: "):
                    diags.append(json.loads(line[8:]))
                else:
                    lines.append(line)
        rows = list(csv.reader(lines))
        body = rows[1:] if rows else []
        t = np.array([int(r[0]) for r in body], dtype=int)
        cum = np.array([float(r[1]) for r in body])
        inst = np.array([float(r[2]) for r in body])
        ph = np.array([r[3] for r in body], dtype=object)
        return cls(meta, t, cum, inst, ph, diags, flags, summary)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return str(x)
