"""Parallel campaign execution with an append log and a sorted final results file.

Each finished run is appended to ``results.partial.csv`` as soon as it
completes, so an interrupted campaign can be resumed.  ``finalize`` sorts the
log by run_id into ``results.csv``; the final file depends only on the
manifest, never on worker count or completion order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .config import (ALPHA_NAMES, ActionParams, CampaignManifest, ConfigError, ControlConstants,
                     MachineSpec, ManifestRow, PileSpec)
from .engine import run_loading_cycle

log = logging.getLogger(__name__)

RESULTS_HEADER = ("run_id", "soil", "slope_deg", "alpha1", "alpha2", "alpha3", "alpha4",
                  "alpha5", "alpha6", "alpha7_deg", "alpha8_deg", "m_load_kg", "t_load_s",
                  "W_kJ", "s_load_pct", "P_e_kg_per_kJ", "P_p_kg_per_s", "P_b", "flag")
MANIFEST_HEADER = ("run_id", "pile", *ALPHA_NAMES, "seed")
RESULTS_FILE = "results.csv"
PARTIAL_FILE = "results.partial.csv"
MANIFEST_FILE = "manifest.csv"
META_FILE = "campaign.json"


class StoreError(RuntimeError):
    """The result store cannot be written or does not match the manifest."""


def _fmt(value: float) -> str:
    return repr(float(value))


def format_row(row: ManifestRow, pile: PileSpec, record) -> list[str]:
    """Results CSV fields for one finished run."""
    return [row.run_id, pile.soil.name, _fmt(pile.slope),
            *(_fmt(a) for a in row.action.as_tuple()),
            _fmt(record.m_load), _fmt(record.t_load), _fmt(record.W), _fmt(record.s_load),
            _fmt(record.P_e), _fmt(record.P_p), _fmt(record.P_b), record.flag]


def _csv_line(fields: Sequence[str]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(fields)
    return buf.getvalue()


def write_manifest(manifest: CampaignManifest, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for row in manifest.rows:
            writer.writerow([row.run_id, row.pile_id, *(_fmt(a) for a in row.action.as_tuple()),
                             row.seed])
    return path


def read_manifest(path: str | Path, piles: dict[str, PileSpec]) -> CampaignManifest:
    """Load a manifest CSV; ``piles`` resolves the pile ids it references."""
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != MANIFEST_HEADER:
            raise StoreError(f"{path}: unexpected manifest header")
        for rec in reader:
            if rec[1] not in piles:
                raise StoreError(f"{path}: unknown pile {rec[1]!r}")
            rows.append(ManifestRow(rec[0], rec[1], ActionParams.from_sequence(rec[2:10])))
    used = {r.pile_id for r in rows}
    return CampaignManifest({k: v for k, v in piles.items() if k in used}, tuple(rows))


@dataclass
class ResultStore:
    """Campaign output directory: manifest, append log and final results."""

    root: Path
    completed: set[str] = field(default_factory=set)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def partial_path(self) -> Path:
        return self.root / PARTIAL_FILE

    @property
    def results_path(self) -> Path:
        return self.root / RESULTS_FILE

    def open(self, manifest: CampaignManifest, resume: bool = False) -> "ResultStore":
        """Prepare the directory.  With ``resume`` the completion index is
        rebuilt from the append log, which must belong to the same manifest."""
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            meta = {"schema_version": manifest.schema_version,
                    "machine_hash": manifest.machine_hash,
                    "manifest_digest": manifest.digest(),
                    "runs": len(manifest)}
            meta_path = self.root / META_FILE
            if resume and meta_path.exists():
                old = json.loads(meta_path.read_text())
                if old.get("manifest_digest") != meta["manifest_digest"]:
                    raise StoreError(f"{self.root}: existing campaign has a different manifest")
            if not resume:
                for name in (PARTIAL_FILE, RESULTS_FILE):
                    (self.root / name).unlink(missing_ok=True)
            meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
            write_manifest(manifest, self.root / MANIFEST_FILE)
            self.metadata = meta
            self.completed = set(self._recover()) if resume else set()
            if not self.partial_path.exists():
                self.partial_path.write_text(_csv_line(RESULTS_HEADER))
        except OSError as exc:
            raise StoreError(f"cannot write result store {self.root}: {exc}") from exc
        return self

    def _recover(self) -> list[str]:
        """Run ids in the append log; a torn trailing line is cut off."""
        path = self.partial_path
        if not path.exists():
            return []
        data = path.read_bytes()
        good = data.rfind(b"\n") + 1
        if good < len(data):
            log.warning("%s: dropping incomplete trailing line", path)
            with path.open("r+b") as fh:
                fh.truncate(good)
        done = []
        for rec in self.read_partial():
            done.append(rec[0])
        return done

    def read_partial(self) -> list[list[str]]:
        with self.partial_path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader, ()))
            if header != RESULTS_HEADER:
                raise StoreError(f"{self.partial_path}: unexpected header")
            return [rec for rec in reader if len(rec) == len(RESULTS_HEADER)]

    def append(self, lines: Iterable[str]) -> None:
        with self.partial_path.open("a", newline="") as fh:
            for line in lines:
                fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def finalize(self, manifest: CampaignManifest | None = None) -> Path:
        """Write ``results.csv`` sorted by run_id.  With a manifest, check
        that every run finished exactly once."""
        by_id: dict[str, list[str]] = {}
        for rec in self.read_partial():
            by_id.setdefault(rec[0], rec)
        if manifest is not None:
            expected = {r.run_id for r in manifest.rows}
            if set(by_id) != expected:
                missing = len(expected - set(by_id))
                raise StoreError(f"cannot finalize: {missing} run(s) missing")
        tmp = self.results_path.with_suffix(".tmp")
        with tmp.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESULTS_HEADER)
            for run_id in sorted(by_id):
                writer.writerow(by_id[run_id])
        os.replace(tmp, self.results_path)
        return self.results_path


@dataclass(frozen=True)
class CampaignSummary:
    total: int
    executed: int
    skipped: int  # already present when resuming
    workers: int
    wall_seconds: float
    cpu_seconds: float  # summed per-run process time
    flags: dict[str, int]
    finished: bool
    results_path: Path | None = None


@dataclass(frozen=True)
class ThroughputReport:
    runs: int
    wall_seconds: float
    cpu_seconds: float
    runs_per_cpu_hour: float
    runs_per_wall_hour: float
    seconds_per_run: float

    def __str__(self) -> str:
        return (f"{self.runs} runs, {self.wall_seconds:.1f} s wall, {self.cpu_seconds:.1f} "
                f"core-s: {self.runs_per_cpu_hour:,.0f} runs/CPU-hour, "
                f"{self.runs_per_wall_hour:,.0f} runs/wall-hour")


def throughput_report(summary: CampaignSummary) -> ThroughputReport:
    n = summary.executed
    cpu = summary.cpu_seconds
    wall = summary.wall_seconds
    return ThroughputReport(
        runs=n, wall_seconds=wall, cpu_seconds=cpu,
        runs_per_cpu_hour=3600.0 * n / cpu if cpu > 0 else 0.0,
        runs_per_wall_hour=3600.0 * n / wall if wall > 0 else 0.0,
        seconds_per_run=cpu / n if n else 0.0)


# worker-side context, set once per process
_CTX: dict = {}


def _init_worker(piles: dict[str, PileSpec], machine: MachineSpec,
                 control: ControlConstants) -> None:
    _CTX.update(piles=piles, machine=machine, control=control)


def _run_one(row: ManifestRow) -> tuple[str, str, float]:
    pile = _CTX["piles"][row.pile_id]
    t0 = time.process_time()
    record = run_loading_cycle(pile, _CTX["machine"], row.action, _CTX["control"],
                               seed=row.seed, run_id=row.run_id)
    cpu = time.process_time() - t0
    return row.run_id, _csv_line(format_row(row, pile, record)), cpu


def execute_campaign(manifest: CampaignManifest, worker_count: int, store: ResultStore, *,
                     machine: MachineSpec | None = None, control: ControlConstants | None = None,
                     resume: bool = False, max_runs: int | None = None,
                     chunksize: int = 4, flush_every: int = 16) -> CampaignSummary:
    """Run every pending manifest row once and persist the results.

    ``max_runs`` stops after that many new runs without finalizing, which
    leaves the store in the same state as an interrupted campaign.
    """
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    machine = machine or MachineSpec()
    control = control or ControlConstants()
    if manifest.machine_hash and manifest.machine_hash != machine.digest():
        raise ConfigError("manifest was built for a different machine spec")
    store.open(manifest, resume=resume)
    pending = [r for r in manifest.rows if r.run_id not in store.completed]
    skipped = len(manifest) - len(pending)
    if max_runs is not None:
        pending = pending[:max(max_runs, 0)]
    log.info("campaign: %d runs, %d already done, %d to run on %d worker(s)",
             len(manifest), skipped, len(pending), worker_count)

    flags: dict[str, int] = {}
    cpu_total = 0.0
    buffer: list[str] = []
    t0 = time.perf_counter()

    def collect(results):
        nonlocal cpu_total
        for i, (run_id, line, cpu) in enumerate(results, start=1):
            buffer.append(line)
            flag = line.rstrip("\n").rsplit(",", 1)[1]
            flags[flag] = flags.get(flag, 0) + 1
            cpu_total += cpu
            store.completed.add(run_id)
            if len(buffer) >= flush_every:
                store.append(buffer)
                buffer.clear()
            if i % 1000 == 0:
                log.info("  %d / %d runs", i, len(pending))

    try:
        if worker_count == 1 or len(pending) <= 1:
            _init_worker(manifest.piles, machine, control)
            collect(map(_run_one, pending))
        else:
            with mp.get_context("spawn" if os.name == "nt" else "fork").Pool(
                    worker_count, _init_worker, (manifest.piles, machine, control)) as pool:
                collect(pool.imap_unordered(_run_one, pending, chunksize=chunksize))
    finally:
        if buffer:
            store.append(buffer)
    wall = time.perf_counter() - t0

    finished = len(store.completed) == len(manifest)
    path = store.finalize(manifest) if finished else None
    return CampaignSummary(len(manifest), len(pending), skipped, worker_count, wall,
                           cpu_total, dict(sorted(flags.items())), finished, path)
