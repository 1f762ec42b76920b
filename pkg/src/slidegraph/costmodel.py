"""Per-iteration disk I/O and memory estimates for five out-of-core computation models.

Symbols: ``C`` bytes per vertex record, ``D`` bytes per edge record, ``V``/``E``
vertex/edge counts, ``P`` shards, ``N`` workers, ``theta`` the fraction of edge
bytes that still has to come from disk once the edge cache is warm.

===========  =======================  ==================  ==================  ==============
model        read                     write               memory              preprocessing
===========  =======================  ==================  ==================  ==============
PSW          C V + 2 (C + D) E        C V + 2 (C + D) E   (C V + 2(C+D) E)/P  (C + 5 D) E
ESG          C V + (C + D) E          C V + C E           C V / P             2 D E
VSP          C (1 + delta) V + D E    C V                 C (2 + delta) V/P   4 D E
DSW          C sqrt(P) V + D E        C sqrt(P) V         2 C V / sqrt(P)     6 D E
VSW          theta D E                0                   2 C V + N D E / P   5 D E
===========  =======================  ==================  ==================  ==============

``delta = (1 - exp(-d_avg / P)) P`` with ``d_avg = E / V``.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import DataError


class Model(str, enum.Enum):
    PSW = "PSW"
    ESG = "ESG"
    VSP = "VSP"
    DSW = "DSW"
    VSW = "VSW"


COLUMNS = ("read_bytes", "write_bytes", "memory_bytes", "preprocess_io_bytes")


@dataclass(frozen=True)
class CostParams:
    C: float
    D: float
    V: float
    E: float
    P: float
    N: float = 1
    theta: float = 1.0

    def __post_init__(self):
        for name in ("C", "D", "V", "E", "P", "N"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")

    @property
    def d_avg(self) -> float:
        return self.E / self.V

    @property
    def delta(self) -> float:
        return replication_factor(self.d_avg, self.P)


def replication_factor(d_avg: float, P: float) -> float:
    """Expected v-shard replication: ``(1 - e^(-d_avg/P)) * P``."""
    return -math.expm1(-d_avg / P) * P


@dataclass(frozen=True)
class CostRow:
    model: Model
    read_bytes: float
    write_bytes: float
    memory_bytes: float
    preprocess_io_bytes: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.read_bytes, self.write_bytes, self.memory_bytes, self.preprocess_io_bytes)


def cost(model, p: CostParams) -> CostRow:
    model = Model(model)
    C, D, V, E, P, N = p.C, p.D, p.V, p.E, p.P, p.N
    if model is Model.PSW:
        rw = C * V + 2 * (C + D) * E
        return CostRow(model, rw, rw, rw / P, (C + 5 * D) * E)
    if model is Model.ESG:
        return CostRow(model, C * V + (C + D) * E, C * V + C * E, C * V / P, 2 * D * E)
    if model is Model.VSP:
        delta = p.delta
        return CostRow(model, C * (1 + delta) * V + D * E, C * V, C * (2 + delta) * V / P, 4 * D * E)
    if model is Model.DSW:
        root = math.sqrt(P)
        return CostRow(model, C * root * V + D * E, C * root * V, 2 * C * V / root, 6 * D * E)
    return CostRow(model, p.theta * D * E, 0.0, 2 * C * V + N * D * E / P, 5 * D * E)


@dataclass
class CostTable:
    params: CostParams
    rows: list[CostRow]

    def best(self, column: str) -> list[Model]:
        """Models attaining the minimum of ``column`` (ties kept)."""
        lo = min(getattr(r, column) for r in self.rows)
        return [r.model for r in self.rows if getattr(r, column) == lo]

    def ranking(self, column: str) -> list[Model]:
        return [r.model for r in sorted(self.rows, key=lambda r: getattr(r, column))]

    def row(self, model) -> CostRow:
        model = Model(model)
        return next(r for r in self.rows if r.model is model)

    def to_text(self, human: bool = True) -> str:
        fmt = si_bytes if human else (lambda x: f"{x:.0f}")
        header = ["model", "read", "write", "memory", "preprocess"]
        body = []
        for r in self.rows:
            cells = [r.model.value]
            for col in COLUMNS:
                mark = "*" if r.model in self.best(col) else " "
                cells.append(fmt(getattr(r, col)) + mark)
            body.append(cells)
        widths = [max(len(x) for x in col) for col in zip(header, *body)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.rjust(w) for c, w in zip(cells, widths)) for cells in body]
        lines.append("(* = minimum in column)")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["model", *COLUMNS])
        for r in self.rows:
            w.writerow([r.model.value, *(repr(float(x)) for x in r.as_tuple())])
        return buf.getvalue()


def compare(p: CostParams) -> CostTable:
    return CostTable(p, [cost(m, p) for m in Model])


def si_bytes(x: float) -> str:
    for unit in ("B", "kB", "MB", "GB", "TB", "PB"):
        if abs(x) < 1000 or unit == "PB":
            return f"{x:.3g} {unit}" if unit != "B" else f"{x:.0f} B"
        x /= 1000.0
    return f"{x:.3g} PB"


@dataclass
class Deviation:
    measured_bytes: float
    model_bytes: float
    iterations: int

    @property
    def relative_error(self) -> float:
        if self.model_bytes == 0:
            return 0.0 if self.measured_bytes == 0 else math.inf
        return abs(self.measured_bytes - self.model_bytes) / self.model_bytes


def measured_vs_model(stats: Iterable, p: CostParams, theta: Optional[float] = None) -> Deviation:
    """Compare mean steady-state (iteration >= 2) disk reads against ``theta * D * E``.

    ``stats`` items need ``iteration`` and ``bytes_read_disk``; ``theta``
    overrides ``p.theta``.
    """
    stats = list(stats)
    if len(stats) < 2:
        raise DataError("insufficient data: need at least 2 iterations")
    steady = [s for s in stats if s.iteration >= 2]
    measured = sum(s.bytes_read_disk for s in steady) / len(steady)
    th = p.theta if theta is None else theta
    return Deviation(measured, th * p.D * p.E, len(steady))
