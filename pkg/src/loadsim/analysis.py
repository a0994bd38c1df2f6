"""Post-processing of campaign results: Pareto fronts, points of interest,
histograms, matched actions across piles, trend statistics and trajectory
exports."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .config import ALPHA_NAMES
from .sweep import RESULTS_HEADER
from .terrain import ORIGINAL, PileState, write_profile_csv

log = logging.getLogger(__name__)

FAILED_FLAGS = ("timeout", "numeric_error")

# fixed histogram edges per field: (low, high, default bin count)
BIN_RANGES: dict[str, tuple[float, float, int]] = {
    "m_load": (0.0, 5000.0, 25),
    "t_load": (0.0, 40.0, 20),
    "s_load": (0.0, 20.0, 20),
    "W": (0.0, 1000.0, 20),
    "P_e": (0.0, 15.0, 30),
    "P_p": (0.0, 600.0, 30),
    "P_b": (0.0, 1.2, 24),
}
FIELD_ALIASES = {"mass": "m_load", "time": "t_load", "spill": "s_load", "spillage": "s_load",
                 "work": "W", "efficiency": "P_e", "productivity": "P_p", "fill": "P_b"}


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class ResultRow:
    """One row of a finalized results file."""

    run_id: str
    soil: str
    slope: float
    action: tuple[float, ...]
    m_load: float
    t_load: float
    W: float
    s_load: float
    P_e: float
    P_p: float
    P_b: float
    flag: str

    @property
    def pile_id(self) -> str:
        return f"{self.soil}-{self.slope:g}"

    @property
    def completed(self) -> bool:
        return self.flag not in FAILED_FLAGS

    def alpha(self, i: int) -> float:
        return self.action[i - 1]


def load_results(path: str | Path, pile: str | None = None) -> list[ResultRow]:
    """Read ``results.csv`` (a file or a campaign directory), optionally one pile only."""
    path = Path(path)
    if path.is_dir():
        path = path / "results.csv"
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != RESULTS_HEADER:
            raise AnalysisError(f"{path}: not a results file")
        for rec in reader:
            nums = [float(v) for v in rec[2:18]]
            row = ResultRow(rec[0], rec[1], nums[0], tuple(nums[1:9]), *nums[9:16], rec[18])
            if pile is None or row.pile_id == pile:
                rows.append(row)
    return rows


def _action_tuple(record) -> tuple[float, ...]:
    a = record.action
    return tuple(a.as_tuple()) if hasattr(a, "as_tuple") else tuple(a)


def _pile_of(record) -> str:
    return getattr(record, "pile_id", "")


@dataclass(frozen=True)
class PerformancePoint:
    run_id: str
    P_p: float  # kg/s
    P_e: float  # kg/kJ
    m_load: float  # kg
    pile_id: str = ""

    def __post_init__(self):
        for name in ("P_p", "P_e", "m_load"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise AnalysisError(f"{name} must be finite and >= 0, got {v!r}")

    @classmethod
    def of(cls, record) -> "PerformancePoint":
        return cls(record.run_id, record.P_p, record.P_e, record.m_load, _pile_of(record))


def _points(items: Iterable) -> list[PerformancePoint]:
    return [p if isinstance(p, PerformancePoint) else PerformancePoint.of(p) for p in items]


def dominates(a: PerformancePoint, b: PerformancePoint) -> bool:
    """``a`` is at least as good as ``b`` in (P_p, P_e) and strictly better in one."""
    return (a.P_p >= b.P_p and a.P_e >= b.P_e) and (a.P_p > b.P_p or a.P_e > b.P_e)


def pareto_front(points: Sequence) -> list[PerformancePoint]:
    """Non-dominated points under maximisation of (P_p, P_e), ordered by P_p.

    Duplicated points are all kept since neither dominates the other.
    """
    pts = _points(points)
    if not pts:
        return []
    order = sorted(range(len(pts)), key=lambda i: (-pts[i].P_p, -pts[i].P_e))
    front: list[int] = []
    best_e = -math.inf  # best P_e among strictly larger P_p
    k = 0
    while k < len(order):
        p_p = pts[order[k]].P_p
        group = []
        while k < len(order) and pts[order[k]].P_p == p_p:
            group.append(order[k])
            k += 1
        top = pts[group[0]].P_e
        if top > best_e:
            front.extend(i for i in group if pts[i].P_e == top)
            best_e = top
    front.sort(key=lambda i: (pts[i].P_p, -pts[i].P_e, pts[i].run_id))
    return [pts[i] for i in front]


@dataclass(frozen=True)
class PoiSet:
    best_efficiency: PerformancePoint  # circle
    best_productivity: PerformancePoint  # triangle
    pareto_choice: PerformancePoint  # diamond
    best_mass: PerformancePoint  # square

    MARKERS = {"best_efficiency": "o", "best_productivity": "^", "pareto_choice": "D",
               "best_mass": "s"}

    def items(self) -> list[tuple[str, PerformancePoint]]:
        return [(name, getattr(self, name)) for name in self.MARKERS]


def _argmax(points: Sequence[PerformancePoint], key) -> PerformancePoint:
    return min(points, key=lambda p: (-key(p), p.run_id))


def select_poi(records: Sequence, pareto_override: str | None = None) -> PoiSet:
    """Points of interest of one pile.

    Ties go to the lowest run_id.  The Pareto choice is the front point with
    the largest product of normalised productivity and efficiency, unless
    ``pareto_override`` names a run to use instead.
    """
    pts = _points(records)
    if not pts:
        raise AnalysisError("select_poi needs at least one record")
    best_e = _argmax(pts, lambda p: p.P_e)
    best_p = _argmax(pts, lambda p: p.P_p)
    best_m = _argmax(pts, lambda p: p.m_load)
    if pareto_override is not None:
        chosen = [p for p in pts if p.run_id == pareto_override]
        if not chosen:
            raise AnalysisError(f"override run {pareto_override!r} not among the records")
        choice = chosen[0]
    else:
        sp = best_p.P_p or 1.0
        se = best_e.P_e or 1.0
        choice = _argmax(pareto_front(pts), lambda p: (p.P_p / sp) * (p.P_e / se))
    return PoiSet(best_e, best_p, choice, best_m)


def field_value(record, name: str) -> float:
    name = FIELD_ALIASES.get(name, name)
    if name.startswith("alpha"):
        return _action_tuple(record)[ALPHA_NAMES.index(name)]
    return float(getattr(record, name))


@dataclass(frozen=True)
class Histogram2D:
    x_field: str
    y_field: str
    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray  # (len(x_edges) - 1, len(y_edges) - 1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"{self.x_field}_lo", f"{self.x_field}_hi",
                             f"{self.y_field}_lo", f"{self.y_field}_hi", "count"])
            for i in range(len(self.x_edges) - 1):
                for j in range(len(self.y_edges) - 1):
                    writer.writerow([f"{self.x_edges[i]:g}", f"{self.x_edges[i + 1]:g}",
                                     f"{self.y_edges[j]:g}", f"{self.y_edges[j + 1]:g}",
                                     int(self.counts[i, j])])
        return path


def bin_edges(name: str, bins: int | Sequence[float] | None = None) -> np.ndarray:
    """Edges for ``name``: explicit edges, or ``bins`` equal bins over the field's fixed range."""
    if bins is not None and not isinstance(bins, int):
        edges = np.asarray(bins, dtype=float)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise AnalysisError("bin edges must be strictly increasing with at least 2 entries")
        return edges
    name = FIELD_ALIASES.get(name, name)
    if name not in BIN_RANGES:
        raise AnalysisError(f"no fixed bin range for field {name!r}")
    lo, hi, n = BIN_RANGES[name]
    return np.linspace(lo, hi, (bins or n) + 1)


def histogram2d(records: Sequence, x_field: str, y_field: str,
                bins: int | Sequence | tuple = None) -> Histogram2D:
    """Counts of records over fixed bins; values outside the edges go to the end bins."""
    if isinstance(bins, tuple) and len(bins) == 2:
        bx, by = bins
    else:
        bx = by = bins
    xe, ye = bin_edges(x_field, bx), bin_edges(y_field, by)
    x = np.array([field_value(r, x_field) for r in records], dtype=float)
    y = np.array([field_value(r, y_field) for r in records], dtype=float)
    ix = np.clip(np.searchsorted(xe, x, side="right") - 1, 0, len(xe) - 2)
    iy = np.clip(np.searchsorted(ye, y, side="right") - 1, 0, len(ye) - 2)
    counts = np.zeros((len(xe) - 1, len(ye) - 1), dtype=np.int64)
    np.add.at(counts, (ix, iy), 1)
    return Histogram2D(FIELD_ALIASES.get(x_field, x_field), FIELD_ALIASES.get(y_field, y_field),
                       xe, ye, counts)


@dataclass(frozen=True)
class ActionMatch:
    target: tuple[float, float]
    radius: float
    source: list  # source records within the radius
    actions: frozenset  # their alpha tuples
    matches: dict[str, list]  # pile id -> records with the same alpha tuples


def match_actions(source: Sequence, target: tuple[float, float], radius: float,
                  others: Mapping[str, Sequence],
                  scale: tuple[float, float] | None = None) -> ActionMatch:
    """Source runs near ``target`` = (P_p, P_e) and the runs with the same
    actions in the other campaigns.

    Distances are Euclidean after dividing by ``scale``, which defaults to
    the largest P_p and P_e of the source campaign.
    """
    if radius < 0.0:
        raise AnalysisError("radius must be >= 0")
    if scale is None:
        sp = max((r.P_p for r in source), default=0.0) or 1.0
        se = max((r.P_e for r in source), default=0.0) or 1.0
    else:
        sp, se = scale
    tp, te = target
    near = [r for r in source
            if math.hypot((r.P_p - tp) / sp, (r.P_e - te) / se) <= radius]
    near.sort(key=lambda r: r.run_id)
    actions = frozenset(_action_tuple(r) for r in near)
    matches = {}
    for pile_id, records in others.items():
        matches[pile_id] = sorted((r for r in records if _action_tuple(r) in actions),
                                  key=lambda r: r.run_id)
    return ActionMatch((tp, te), radius, near, actions, matches)


def rank_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-corrected Spearman rho; 0 when either input is constant or too short."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise AnalysisError("correlation inputs differ in length")
    if len(x) < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    rho = spearmanr(x, y)[0]
    return 0.0 if not math.isfinite(rho) else float(rho)


@dataclass(frozen=True)
class TrendReport:
    median_mass: dict[str, dict[float, float]]  # soil -> slope -> median m_load
    mass_increases_with_slope: dict[str, bool]
    rho_alpha2_efficiency: dict[str, float]  # pile id -> rho(alpha2, P_e)
    rho_alpha2_productivity: dict[str, float]  # pile id -> rho(alpha2, P_p)
    completed: dict[str, int] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = []
        for soil, by_slope in self.median_mass.items():
            cells = ", ".join(f"{s:g}deg {m:.0f} kg" for s, m in by_slope.items())
            trend = "increasing" if self.mass_increases_with_slope[soil] else "not increasing"
            out.append(f"{soil}: median m_load {cells} ({trend})")
        for pile in self.rho_alpha2_efficiency:
            re, rp = self.rho_alpha2_efficiency[pile], self.rho_alpha2_productivity[pile]
            out.append(f"{pile}: rho(alpha2, P_e) = {re:+.3f}, rho(alpha2, P_p) = {rp:+.3f} "
                       f"over {self.completed[pile]} completed runs")
        return out


def trend_tests(records: Sequence) -> TrendReport:
    """Median load mass by slope per soil, and rank correlations of the dig
    speed with efficiency and productivity per pile over completed runs."""
    mass: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    by_pile: dict[str, list] = defaultdict(list)
    for r in records:
        mass[r.soil][r.slope].append(r.m_load)
        if r.completed:
            by_pile[r.pile_id].append(r)
    medians = {soil: {s: float(np.median(v)) for s, v in sorted(d.items())}
               for soil, d in sorted(mass.items())}
    increasing = {soil: bool(np.all(np.diff(list(m.values())) > 0)) for soil, m in medians.items()}
    rho_e, rho_p, done = {}, {}, {}
    for pile in sorted(by_pile):
        rs = by_pile[pile]
        a2 = [r.alpha(2) for r in rs]
        rho_e[pile] = rank_correlation(a2, [r.P_e for r in rs])
        rho_p[pile] = rank_correlation(a2, [r.P_p for r in rs])
        done[pile] = len(rs)
    return TrendReport(medians, increasing, rho_e, rho_p, done)


# -- output files ---------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "loadsim"
    import matplotlib.pyplot as plt
    return plt


def _save_svg(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    _pyplot().close(fig)
    return path


def plot_histogram(hist: Histogram2D, path: str | Path, title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(hist.x_edges, hist.y_edges, hist.counts.T, cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="runs")
    ax.set_xlabel(hist.x_field)
    ax.set_ylabel(hist.y_field)
    ax.set_title(title)
    return _save_svg(fig, Path(path))


def write_scatter(records: Sequence, poi: PoiSet | None, csv_path: str | Path,
                  svg_path: str | Path, title: str = "") -> tuple[Path, Path]:
    """Productivity/efficiency scatter as CSV plus an SVG with the front and POI marked."""
    pts = _points(records)
    front = {p.run_id for p in pareto_front(pts)}
    csv_path, svg_path = Path(csv_path), Path(svg_path)
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_id", "P_p_kg_per_s", "P_e_kg_per_kJ", "m_load_kg", "pareto"])
        for p in sorted(pts, key=lambda p: p.run_id):
            writer.writerow([p.run_id, repr(p.P_p), repr(p.P_e), repr(p.m_load),
                             int(p.run_id in front)])
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter([p.P_p for p in pts], [p.P_e for p in pts], s=3, c="0.6", lw=0)
    fp = pareto_front(pts)
    ax.plot([p.P_p for p in fp], [p.P_e for p in fp], "k-", lw=0.8)
    if poi is not None:
        for name, p in poi.items():
            ax.scatter([p.P_p], [p.P_e], marker=PoiSet.MARKERS[name], s=40,
                       facecolors="none", edgecolors="r", label=name)
        ax.legend(fontsize=7)
    ax.set_xlabel("productivity [kg/s]")
    ax.set_ylabel("efficiency [kg/kJ]")
    ax.set_title(title)
    return csv_path, _save_svg(fig, svg_path)


@dataclass(frozen=True)
class TrajectoryExport:
    path_csv: Path
    profile_csv: Path
    svg: Path
    tip_path: list[tuple[float, float]]
    excavated_mass: float  # original soil moved from its place [kg]


def export_trajectory(run_id: str, series, pile: PileState, out_dir: str | Path
                      ) -> TrajectoryExport:
    """Tip path, initial and final surfaces and per-column provenance of one run.

    Writes ``<run_id>_path.csv``, ``<run_id>_profile.csv`` and ``<run_id>_trajectory.svg``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tip = list(zip(series.tip_x, series.tip_z))
    path_csv = out / f"{run_id}_path.csv"
    with path_csv.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "tip_x", "tip_z", "phase", "load_mass"])
        for t, (x, z), ph, m in zip(series.t, tip, series.phase, series.load_mass):
            writer.writerow([f"{t:.4f}", f"{x:.6g}", f"{z:.6g}", ph, f"{m:.6g}"])
    profile_csv = write_profile_csv(pile, out / f"{run_id}_profile.csv")
    excavated = float(pile.loaded_from.sum() + pile.displaced_from.sum())

    plt = _pyplot()
    fig, (ax, axm) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    x = pile.x_centers
    ax.plot(x, pile.initial_heights, "k--", lw=0.8, label="initial surface")
    ax.plot(x, pile.heights, "k-", lw=1.0, label="final surface")
    ax.plot(series.tip_x, series.tip_z, "r-", lw=1.0, label="cutting edge")
    ax.set_ylabel("z [m]")
    ax.legend(fontsize=7)
    axm.bar(x, pile.loaded_from, width=pile.dx, color="tab:green", label="loaded")
    axm.bar(x, pile.displaced_from, width=pile.dx, bottom=pile.loaded_from,
            color="tab:orange", label="displaced")
    axm.set_xlabel("x [m]")
    axm.set_ylabel("mass [kg]")
    axm.legend(fontsize=7)
    ax.set_title(run_id)
    svg = _save_svg(fig, out / f"{run_id}_trajectory.svg")
    return TrajectoryExport(path_csv, profile_csv, svg, tip, excavated)


def excavated_original_mass(pile: PileState) -> float:
    """Original soil no longer in the ORIGINAL slot, from the ledger alone."""
    initial = pile.initial_heights * pile.column_mass_per_height
    return float(initial.sum() - pile.ledger[:, ORIGINAL].sum())
