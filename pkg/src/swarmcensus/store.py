"""SQLite store in the census database layout plus additive side tables.

``torrents`` and ``files`` follow the magnetico schema so a released
database opens directly; classification, parse results, catalog rows and
match annotations live in side tables that are created on demand.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import queue
import sqlite3
import threading
from concurrent.futures import Future
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .matcher import CatalogEntry
from .metadata import TorrentMeta
from .scene import ParsedName, classify_file

log = logging.getLogger(__name__)

CORE_SCHEMA = """
CREATE TABLE IF NOT EXISTS torrents (
    id             INTEGER PRIMARY KEY,
    info_hash      BLOB NOT NULL UNIQUE,
    name           TEXT NOT NULL,
    total_size     INTEGER NOT NULL CHECK(total_size >= 0),
    discovered_on  INTEGER NOT NULL CHECK(discovered_on >= 0)
);
CREATE TABLE IF NOT EXISTS files (
    id          INTEGER PRIMARY KEY,
    torrent_id  INTEGER REFERENCES torrents ON DELETE CASCADE ON UPDATE RESTRICT,
    size        INTEGER NOT NULL,
    path        TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS files_torrent_id ON files (torrent_id);
"""

SIDE_SCHEMA = """
CREATE TABLE IF NOT EXISTS torrent_info (
    torrent_id    INTEGER PRIMARY KEY REFERENCES torrents ON DELETE CASCADE,
    piece_length  INTEGER NOT NULL,
    raw_info      BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS file_info (
    file_id          INTEGER PRIMARY KEY REFERENCES files ON DELETE CASCADE,
    is_video         INTEGER NOT NULL,
    encoding_failed  INTEGER NOT NULL,
    extension        TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS parsed_names (
    file_id         INTEGER PRIMARY KEY REFERENCES files ON DELETE CASCADE,
    title           TEXT NOT NULL,
    year            INTEGER,
    season          INTEGER,
    episode         INTEGER,
    episode_title   TEXT,
    resolution      TEXT,
    source_quality  TEXT,
    codec           TEXT,
    audio           TEXT,
    language        TEXT,
    network         TEXT,
    bit_depth       TEXT,
    encoder         TEXT,
    site            TEXT,
    extension       TEXT,
    flags           TEXT NOT NULL,
    extras          TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS catalog (
    catalog_id  TEXT PRIMARY KEY,
    title       TEXT NOT NULL,
    year        INTEGER,
    kind        TEXT NOT NULL,
    genres      TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS matches (
    file_id     INTEGER PRIMARY KEY REFERENCES files ON DELETE CASCADE,
    catalog_id  TEXT NOT NULL,
    score       REAL NOT NULL,
    accepted    INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS pipeline_meta (
    key    TEXT PRIMARY KEY,
    value  TEXT NOT NULL
);
"""

EXPORT_COLUMNS = ["infohash", "path", "size", "title", "year", "season", "episode",
                  "resolution", "source_quality", "codec", "audio", "language", "encoder", "site",
                  "catalog_id", "catalog_title", "catalog_year", "score"]


class StoreError(Exception):
    pass


class UnknownFile(StoreError):
    pass


@dataclass(frozen=True)
class TorrentRecord:
    row_id: int
    infohash: bytes
    name: str
    total_size: int
    discovered_on: int


@dataclass(frozen=True)
class MatchAnnotation:
    file_id: int
    catalog_id: str
    score: float
    accepted: bool


class Store:
    def __init__(self, path: str | Path = ":memory:", readonly: bool = False):
        self.path = str(path)
        self.readonly = readonly
        try:
            if readonly:
                uri = Path(self.path).resolve().as_uri() + "?mode=ro"
                self.db = sqlite3.connect(uri, uri=True)
            else:
                self.db = sqlite3.connect(self.path)
                self.db.execute("PRAGMA foreign_keys = ON")
                self.db.executescript(CORE_SCHEMA + SIDE_SCHEMA)
                self.db.commit()
        except sqlite3.Error as exc:
            raise StoreError(f"cannot open store {self.path}: {exc}") from exc

    def close(self) -> None:
        self.db.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def has_table(self, name: str) -> bool:
        row = self.db.execute("SELECT 1 FROM sqlite_master WHERE type='table' AND name=?",
                              (name,)).fetchone()
        return row is not None

    # ------------------------------------------------------------ writes

    def upsert_torrent(self, meta: TorrentMeta, discovered_on: int) -> TorrentRecord:
        """Insert a validated torrent with its files; re-discovery is a no-op."""
        if hashlib.sha1(meta.raw_info).digest() != meta.infohash:
            raise StoreError("refusing to persist metadata whose digest does not match")
        try:
            with self.db:
                row = self.db.execute(
                    "SELECT id, name, total_size, discovered_on FROM torrents WHERE info_hash=?",
                    (meta.infohash,)).fetchone()
                if row is not None:
                    return TorrentRecord(row[0], meta.infohash, row[1], row[2], row[3])
                cur = self.db.execute(
                    "INSERT INTO torrents (info_hash, name, total_size, discovered_on) VALUES (?,?,?,?)",
                    (meta.infohash, meta.name_text, meta.total_size, int(discovered_on)))
                tid = cur.lastrowid
                self.db.execute("INSERT INTO torrent_info VALUES (?,?,?)",
                                (tid, meta.piece_length, meta.raw_info))
                for f in meta.files:
                    fcur = self.db.execute("INSERT INTO files (torrent_id, size, path) VALUES (?,?,?)",
                                           (tid, f.size, f.display))
                    fc = classify_file(f.display)
                    self.db.execute("INSERT INTO file_info VALUES (?,?,?,?)",
                                    (fcur.lastrowid, int(fc.is_video and not f.encoding_failed),
                                     int(f.encoding_failed), fc.extension))
        except sqlite3.Error as exc:
            raise StoreError(str(exc)) from exc
        return TorrentRecord(tid, meta.infohash, meta.name_text, meta.total_size, int(discovered_on))

    def classify_unclassified(self) -> int:
        """Fill ``file_info`` for files that lack it (e.g. a released database)."""
        rows = self.db.execute(
            "SELECT f.id, f.path FROM files f LEFT JOIN file_info i ON i.file_id = f.id "
            "WHERE i.file_id IS NULL ORDER BY f.id").fetchall()
        with self.db:
            for fid, path in rows:
                fc = classify_file(path)
                self.db.execute("INSERT INTO file_info VALUES (?,?,?,?)",
                                (fid, int(fc.is_video), 0, fc.extension))
        return len(rows)

    def save_parse(self, file_id: int, p: ParsedName) -> None:
        self.db.execute(
            "INSERT OR REPLACE INTO parsed_names VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
            (file_id, p.title, p.year, p.season, p.episode, p.episode_title, p.resolution,
             p.source_quality, p.codec, p.audio, p.language, p.network, p.bit_depth, p.group,
             p.site, p.container_extension, json.dumps(sorted(p.flags)),
             json.dumps(p.extras, sort_keys=True)))

    def upsert_catalog(self, entries: Iterable[CatalogEntry]) -> int:
        n = 0
        with self.db:
            for e in entries:
                self.db.execute("INSERT OR REPLACE INTO catalog VALUES (?,?,?,?,?)",
                                (e.catalog_id, e.primary_title, e.year, e.kind, ",".join(e.genres)))
                n += 1
        return n

    def catalog_entries(self) -> list[CatalogEntry]:
        rows = self.db.execute("SELECT catalog_id, title, year, kind, genres FROM catalog "
                               "ORDER BY catalog_id").fetchall()
        return [CatalogEntry(r[0], r[1], r[2], r[3], tuple(g for g in r[4].split(",") if g))
                for r in rows]

    def annotate_matches(self, annotations: list[MatchAnnotation], replace: bool = False) -> int:
        """Write annotations atomically; any unknown file aborts the whole batch.

        With ``replace`` the previous annotations are dropped in the same transaction.
        """
        if not annotations and not replace:
            return 0
        try:
            with self.db:
                if replace:
                    self.db.execute("DELETE FROM matches")
                for a in annotations:
                    if self.db.execute("SELECT 1 FROM files WHERE id=?", (a.file_id,)).fetchone() is None:
                        raise UnknownFile(f"file {a.file_id} does not exist")
                    self.db.execute("INSERT OR REPLACE INTO matches VALUES (?,?,?,?)",
                                    (a.file_id, a.catalog_id, float(a.score), int(a.accepted)))
        except sqlite3.Error as exc:
            raise StoreError(str(exc)) from exc
        return len(annotations)

    def set_meta(self, key: str, value) -> None:
        with self.db:
            self.db.execute("INSERT OR REPLACE INTO pipeline_meta VALUES (?,?)", (key, json.dumps(value)))

    def get_meta(self, key: str, default=None):
        if not self.has_table("pipeline_meta"):
            return default
        row = self.db.execute("SELECT value FROM pipeline_meta WHERE key=?", (key,)).fetchone()
        return default if row is None else json.loads(row[0])

    # ------------------------------------------------------------ reads

    def torrent(self, infohash: bytes) -> TorrentRecord | None:
        row = self.db.execute("SELECT id, info_hash, name, total_size, discovered_on FROM torrents "
                              "WHERE info_hash=?", (infohash,)).fetchone()
        return TorrentRecord(*row) if row else None

    def count(self, table: str) -> int:
        return self.db.execute(f"SELECT COUNT(*) FROM {table}").fetchone()[0]

    def integrity_report(self) -> dict:
        """Orphan counts and size-sum mismatches; all zero on a healthy store."""
        q = self.db.execute
        return {
            "orphan_files": q("SELECT COUNT(*) FROM files f LEFT JOIN torrents t ON t.id=f.torrent_id "
                              "WHERE t.id IS NULL").fetchone()[0],
            "orphan_matches": q("SELECT COUNT(*) FROM matches m LEFT JOIN files f ON f.id=m.file_id "
                                "WHERE f.id IS NULL").fetchone()[0],
            "orphan_parses": q("SELECT COUNT(*) FROM parsed_names p LEFT JOIN files f ON f.id=p.file_id "
                               "WHERE f.id IS NULL").fetchone()[0],
            "size_mismatch": q("SELECT COUNT(*) FROM torrents t WHERE t.total_size != "
                               "(SELECT COALESCE(SUM(size),0) FROM files f WHERE f.torrent_id=t.id)"
                               ).fetchone()[0],
        }

    def export_matched_csv(self, destination: str | Path) -> int:
        """One RFC 4180 row per accepted match, in file order."""
        rows = self.db.execute(
            "SELECT t.info_hash, f.path, f.size, p.title, p.year, p.season, p.episode, p.resolution, "
            "p.source_quality, p.codec, p.audio, p.language, p.encoder, p.site, m.catalog_id, "
            "c.title, c.year, m.score "
            "FROM matches m JOIN files f ON f.id = m.file_id JOIN torrents t ON t.id = f.torrent_id "
            "LEFT JOIN parsed_names p ON p.file_id = f.id LEFT JOIN catalog c ON c.catalog_id = m.catalog_id "
            "WHERE m.accepted = 1 ORDER BY f.id").fetchall()
        try:
            with open(destination, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
                w.writerow(EXPORT_COLUMNS)
                for r in rows:
                    out = [r[0].hex()] + ["" if v is None else v for v in r[1:17]]
                    out.append(f"{r[17]:.6f}")
                    w.writerow(out)
        except OSError as exc:
            raise StoreError(f"cannot write {destination}: {exc}") from exc
        return len(rows)


class StoreWriter:
    """Serializes all mutations through one thread that owns the connection.

    ``submit(fn)`` queues ``fn(store)`` and returns a Future with its result.
    """

    def __init__(self, path: str | Path):
        self.path = str(path)
        self._q: queue.Queue = queue.Queue()
        self._ready = threading.Event()
        self._error: Exception | None = None
        self._thread = threading.Thread(target=self._run, name="store-writer", daemon=True)
        self._thread.start()
        self._ready.wait()
        if self._error is not None:
            raise self._error

    def _run(self) -> None:
        try:
            store = Store(self.path)
        except StoreError as exc:
            self._error = exc
            self._ready.set()
            return
        self._ready.set()
        while True:
            item = self._q.get()
            if item is None:
                break
            fn, fut = item
            try:
                fut.set_result(fn(store))
            except Exception as exc:  # propagated to the submitter
                fut.set_exception(exc)
        store.close()

    def submit(self, fn: Callable) -> Future:
        fut: Future = Future()
        self._q.put((fn, fut))
        return fut

    def close(self) -> None:
        self._q.put(None)
        self._thread.join()
