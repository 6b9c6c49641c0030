"""Descriptive statistics over a store: counts, weekly discovery, sizes, breakdowns, coverage."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .scene import classify_file
from .store import Store

log = logging.getLogger(__name__)

DEGRADED_BELOW = 10_000
_EPOCH_DAY = date(1970, 1, 1)
BREAKDOWN_FIELDS = {
    "quality": "p.source_quality",
    "language": "p.language",
    "site": "p.site",
    "encoder": "p.encoder",
    "resolution": "p.resolution",
    "codec": "p.codec",
}


class StatsError(Exception):
    pass


@dataclass(frozen=True)
class SummaryStats:
    torrents: int
    files: int  # passed encoding
    encoding_failed: int
    video: int
    non_video: int
    candidates: int
    accepted: int
    match_rate: float
    final_match_rate: float
    mean_files_per_torrent: float
    total_bytes: int

    @property
    def total_files(self) -> int:
        return self.files + self.encoding_failed

    @property
    def below_threshold(self) -> int:
        return self.candidates - self.accepted

    @property
    def unmatched_video(self) -> int:
        return self.video - self.candidates

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(total_files=self.total_files, below_threshold=self.below_threshold,
                 unmatched_video=self.unmatched_video)
        return d


def _pct(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


def summarize(store: Store) -> SummaryStats:
    """Pipeline counts; mean files per torrent counts encoding failures too."""
    q = store.db.execute
    torrents, total_bytes = q("SELECT COUNT(*), COALESCE(SUM(total_size), 0) FROM torrents").fetchone()
    total_files = q("SELECT COUNT(*) FROM files").fetchone()[0]
    if store.has_table("file_info"):
        classified, failed, video = q(
            "SELECT COUNT(*), COALESCE(SUM(encoding_failed), 0), COALESCE(SUM(is_video), 0) "
            "FROM file_info").fetchone()
    else:
        classified, failed, video = 0, 0, 0
    if classified < total_files:
        # raw crawler database: classify the remainder by extension on the fly
        where = ("WHERE id NOT IN (SELECT file_id FROM file_info)"
                 if store.has_table("file_info") else "")
        cur = q(f"SELECT path FROM files {where}")
        while rows := cur.fetchmany(65536):
            video += sum(classify_file(r[0]).is_video for r in rows)
    candidates = accepted = 0
    if store.has_table("matches"):
        candidates, accepted = q("SELECT COUNT(*), COALESCE(SUM(accepted), 0) FROM matches").fetchone()
    return SummaryStats(
        torrents=torrents, files=total_files - failed, encoding_failed=failed, video=video,
        non_video=total_files - failed - video, candidates=candidates, accepted=accepted,
        match_rate=_pct(candidates, video), final_match_rate=_pct(accepted, video),
        mean_files_per_torrent=total_files / torrents if torrents else 0.0, total_bytes=total_bytes)


# ------------------------------------------------------------------ weekly discovery

@dataclass(frozen=True)
class WeeklyDiscovery:
    week_start: date  # Monday, UTC
    torrents: int
    status: str  # normal | degraded | down


@dataclass(frozen=True)
class WeeklyReport:
    weeks: list
    uptime_pct: float  # weeks not down
    normal_pct: float  # weeks neither down nor degraded


def week_status(count: int, degraded_below: int = DEGRADED_BELOW) -> str:
    if count == 0:
        return "down"
    return "degraded" if count < degraded_below else "normal"


def _monday_index(day: int) -> int:
    # 1970-01-01 was a Thursday; shift so weeks start on Monday
    return (day + 3) // 7


def weekly_from_timestamps(timestamps, degraded_below: int = DEGRADED_BELOW) -> WeeklyReport:
    """ISO weeks (UTC) from the first to the last timestamp, empty weeks included."""
    days = Counter(int(t) // 86400 for t in timestamps)
    return _weekly_from_days(days, degraded_below)


def _weekly_from_days(days: dict, degraded_below: int) -> WeeklyReport:
    if not days:
        return WeeklyReport([], 0.0, 0.0)
    per_week: Counter = Counter()
    for d, n in days.items():
        per_week[_monday_index(d)] += n
    first, last = min(per_week), max(per_week)
    weeks = []
    for w in range(first, last + 1):
        n = per_week.get(w, 0)
        weeks.append(WeeklyDiscovery(_EPOCH_DAY + timedelta(days=w * 7 - 3), n, week_status(n, degraded_below)))
    up = sum(w.status != "down" for w in weeks)
    normal = sum(w.status == "normal" for w in weeks)
    return WeeklyReport(weeks, _pct(up, len(weeks)), _pct(normal, len(weeks)))


def weekly_discovery(store: Store, degraded_below: int = DEGRADED_BELOW) -> WeeklyReport:
    rows = store.db.execute("SELECT discovered_on / 86400, COUNT(*) FROM torrents GROUP BY 1").fetchall()
    return _weekly_from_days({int(d): n for d, n in rows}, degraded_below)


# ------------------------------------------------------------------ sizes

@dataclass(frozen=True)
class SizeDistribution:
    edges: np.ndarray  # bytes, len(counts) + 1
    counts: np.ndarray
    density: np.ndarray  # per decade of size
    cdf: np.ndarray  # fraction of files at or below each bin's upper edge

    def cdf_at(self, size: float) -> float:
        """CDF value of the bin holding ``size``; 0 below the range, 1 above it."""
        size = max(float(size), 1.0)
        if size < self.edges[0]:
            return 0.0
        i = int(np.searchsorted(self.edges, size, side="right")) - 1
        return 1.0 if i >= len(self.counts) else float(self.cdf[i])


def size_histogram(sizes, log_bins: int = 60) -> SizeDistribution:
    """Log-spaced histogram with a CDF. Zero-byte files count in the first bin."""
    arr = np.asarray(sizes, dtype=np.float64)
    if arr.size == 0:
        raise StatsError("no files to histogram")
    if log_bins < 1:
        raise ValueError("log_bins must be >= 1")
    arr = np.maximum(arr, 1.0)
    lo = math.floor(math.log10(arr.min()))
    hi = math.ceil(math.log10(arr.max()))
    if hi <= lo:
        hi = lo + 1
    edges = np.logspace(lo, hi, log_bins + 1)
    edges[0], edges[-1] = 10.0 ** lo, 10.0 ** hi
    counts, _ = np.histogram(arr, bins=edges)
    n = int(counts.sum())
    cum = np.cumsum(counts)
    cdf = cum / n
    width = np.diff(np.log10(edges))
    return SizeDistribution(edges, counts, counts / (n * width), cdf)


def size_distribution(store: Store, log_bins: int = 60) -> SizeDistribution:
    sizes = np.fromiter((r[0] for r in store.db.execute("SELECT size FROM files")), dtype=np.float64)
    if sizes.size == 0:
        raise StatsError("store holds no files")
    return size_histogram(sizes, log_bins)


# ------------------------------------------------------------------ breakdowns and coverage

def _rank(counts: Counter, top_k: int | None) -> list[tuple[str, int]]:
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked if top_k is None else ranked[:top_k]


def breakdown(store: Store, field: str, top_k: int | None = 20) -> list[tuple[str, int]]:
    """(value, count) over accepted matched video files, most common first."""
    if field != "genre" and field not in BREAKDOWN_FIELDS:
        raise StatsError(f"unknown breakdown field {field!r}")
    if not (store.has_table("matches") and store.has_table("parsed_names")):
        return []
    counts: Counter = Counter()
    if field == "genre":
        rows = store.db.execute("SELECT c.genres FROM matches m JOIN catalog c ON c.catalog_id = m.catalog_id "
                                "WHERE m.accepted = 1")
        for (genres,) in rows:
            counts.update(g for g in genres.split(",") if g)
    else:
        col = BREAKDOWN_FIELDS[field]
        rows = store.db.execute(f"SELECT {col} FROM matches m JOIN parsed_names p ON p.file_id = m.file_id "
                                f"WHERE m.accepted = 1 AND {col} IS NOT NULL AND {col} != ''")
        counts.update(r[0] for r in rows)
    return _rank(counts, top_k)


@dataclass(frozen=True)
class YearCoverage:
    year: int
    matched_titles: int
    catalog_titles: int
    coverage_pct: float


def coverage_from(matched_ids, catalog) -> list[YearCoverage]:
    per_year: dict[int, set] = defaultdict(set)
    year_of = {}
    for e in catalog:
        if e.year is not None:
            per_year[e.year].add(e.catalog_id)
            year_of[e.catalog_id] = e.year
    hit: dict[int, set] = defaultdict(set)
    for cid in matched_ids:
        y = year_of.get(cid)
        if y is not None:
            hit[y].add(cid)
    return [YearCoverage(y, len(hit[y]), len(per_year[y]), _pct(len(hit[y]), len(per_year[y])))
            for y in sorted(per_year)]


def coverage_by_year(store: Store, catalog=None) -> list[YearCoverage]:
    """Distinct accepted titles per release year against catalog titles of that year."""
    catalog = store.catalog_entries() if catalog is None else catalog
    matched = [] if not store.has_table("matches") else [
        r[0] for r in store.db.execute("SELECT DISTINCT catalog_id FROM matches WHERE accepted = 1")]
    return coverage_from(matched, catalog)


# ------------------------------------------------------------------ report files

def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def write_report(store: Store, out_dir: str | Path, *, plots: bool = False, log_bins: int = 60,
                 top_k: int = 20, degraded_below: int = DEGRADED_BELOW) -> list[Path]:
    """Write CSV/JSON tables (and SVG plots if asked) into ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    summary = summarize(store)
    weekly = weekly_discovery(store, degraded_below)
    doc = {"summary": summary.as_dict(), "uptime_pct": weekly.uptime_pct,
           "normal_week_pct": weekly.normal_pct, "weeks": len(weekly.weeks),
           "threshold": store.get_meta("threshold"), "k_sigma": store.get_meta("k_sigma")}
    p = out / "summary.json"
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(p)

    p = out / "weekly.csv"
    _write_csv(p, ["week_start", "torrents", "status"],
               [(w.week_start.isoformat(), w.torrents, w.status) for w in weekly.weeks])
    written.append(p)

    sizes = None
    if summary.total_files:
        sizes = size_distribution(store, log_bins)
        p = out / "sizes.csv"
        _write_csv(p, ["lower_bytes", "upper_bytes", "files", "density", "cdf"],
                   [(_fmt(sizes.edges[i]), _fmt(sizes.edges[i + 1]), int(sizes.counts[i]),
                     _fmt(sizes.density[i]), _fmt(sizes.cdf[i])) for i in range(len(sizes.counts))])
        written.append(p)

    for field in list(BREAKDOWN_FIELDS) + ["genre"]:
        p = out / f"breakdown_{field}.csv"
        _write_csv(p, [field, "files"], breakdown(store, field, top_k))
        written.append(p)

    cov = coverage_by_year(store)
    p = out / "coverage.csv"
    _write_csv(p, ["year", "matched_titles", "catalog_titles", "coverage_pct"],
               [(c.year, c.matched_titles, c.catalog_titles, _fmt(c.coverage_pct)) for c in cov])
    written.append(p)

    if plots:
        written += _plots(out, weekly, sizes, cov, store)
    return written


def _plots(out: Path, weekly: WeeklyReport, sizes, cov, store: Store) -> list[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping plots")
        return []
    matplotlib.rcParams["svg.hashsalt"] = "swarmcensus"
    colors = {"normal": "tab:blue", "degraded": "tab:orange", "down": "tab:red"}
    paths = []

    def save(fig, name):
        p = out / name
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)

    if weekly.weeks:
        fig, ax = plt.subplots(figsize=(9, 3))
        ax.bar(range(len(weekly.weeks)), [max(w.torrents, 1) for w in weekly.weeks],
               color=[colors[w.status] for w in weekly.weeks])
        ax.set_xlabel("week")
        ax.set_ylabel("torrents discovered")
        save(fig, "weekly.svg")
    if sizes is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        mids = np.sqrt(sizes.edges[:-1] * sizes.edges[1:])
        ax.semilogx(mids, sizes.density, drawstyle="steps-mid")
        ax2 = ax.twinx()
        ax2.semilogx(sizes.edges[1:], sizes.cdf, color="tab:red")
        ax.set_xlabel("file size (bytes)")
        save(fig, "sizes.svg")
    if cov:
        fig, ax = plt.subplots(figsize=(8, 4))
        ax.bar([c.year for c in cov], [c.matched_titles for c in cov])
        ax2 = ax.twinx()
        ax2.plot([c.year for c in cov], [c.coverage_pct for c in cov], color="tab:red")
        save(fig, "coverage.svg")
    if store.has_table("matches"):
        scores = [r[0] for r in store.db.execute("SELECT score FROM matches")]
        if scores:
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.hist(scores, bins=50)
            th = store.get_meta("threshold")
            if th is not None:
                ax.axvline(th, color="tab:red")
            ax.set_xlabel("best-match score")
            save(fig, "match_scores.svg")
    return paths
