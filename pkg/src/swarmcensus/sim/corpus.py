"""Seeded synthetic torrents and title catalog.

Release names follow Scene conventions so the parser and matcher see
realistic input; a small share of file paths carry Latin-1 bytes that are
not valid UTF-8. Title words are pseudo-words drawn so they never collide
with a release-name vocabulary token.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

from ..matcher import CatalogEntry
from ..metadata import make_info
from ..scene import default_vocabulary

_ONSET = ["b", "br", "c", "ch", "d", "dr", "f", "g", "gr", "h", "j", "k", "l", "m", "n", "p",
          "pr", "r", "s", "sh", "st", "t", "tr", "v", "w", "z"]
_VOWEL = ["a", "e", "i", "o", "u", "ai", "ea", "ou"]
_CODA = ["", "", "n", "r", "s", "l", "th", "m", "x", "nd"]
_GENRES = ["Action", "Comedy", "Crime", "Documentary", "Drama", "Fantasy", "Horror", "Mystery",
           "Romance", "Sci-Fi", "Thriller", "Western"]
_ARTICLES = ["The", "On the", "Return of the", "A"]

RESOLUTIONS = ["480p", "720p", "1080p", "2160p"]
SOURCES = ["WEBRip", "WEB-DL", "BluRay", "HDTV", "DVDRip", "BRRip"]
CODECS = ["x264", "x265", "HEVC", "XviD", "h264"]
LANGUAGES = ["", "", "", "FRENCH", "GERMAN", "ITALIAN", "MULTi"]
SITES = ["", "", "", "", "[rarbg.to]", "www.SceneTime.com - "]

KB, MB, GB = 1 << 10, 1 << 20, 1 << 30


@dataclass(frozen=True)
class SyntheticTorrent:
    name: str
    kind: str  # movie | episode | season | music | ebook | software | home-video
    catalog_id: str | None
    files: tuple  # ((path bytes, size), ...)
    raw_info: bytes
    infohash: bytes


class _Words:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.vocab = default_vocabulary()
        self.used: set[str] = set()

    def word(self) -> str:
        while True:
            n = self.rng.choice((1, 2, 2, 3))
            w = "".join(self.rng.choice(_ONSET) + self.rng.choice(_VOWEL) for _ in range(n))
            w += self.rng.choice(_CODA)
            if len(w) >= 3 and w not in self.used and self.vocab.classify(w) is None:
                self.used.add(w)
                return w.capitalize()

    def title(self, lo: int = 1, hi: int = 4) -> str:
        return " ".join(self.word() for _ in range(self.rng.randint(lo, hi)))


def generate_catalog(rng: random.Random, n_titles: int, words: _Words | None = None,
                     series_share: float = 0.35) -> list[CatalogEntry]:
    """Catalog of distinct titles; every fifth title gets an article-prefixed competitor."""
    words = words or _Words(rng)
    out: list[CatalogEntry] = []
    seen: set[str] = set()
    while len(out) < n_titles:
        title = words.title()
        kind = "tv-series" if rng.random() < series_share else "movie"
        if title.lower() in seen:
            continue
        seen.add(title.lower())
        out.append(_entry(rng, len(out), title, kind))
        if len(out) % 5 == 0 and len(out) < n_titles:
            comp = f"{rng.choice(_ARTICLES)} {title}"
            if comp.lower() not in seen:
                seen.add(comp.lower())
                out.append(_entry(rng, len(out), comp, "movie"))
    return out


def _entry(rng: random.Random, idx: int, title: str, kind: str) -> CatalogEntry:
    year = int(rng.triangular(1930, 2023, 2015))
    genres = tuple(sorted(rng.sample(_GENRES, rng.randint(1, 3))))
    return CatalogEntry(f"tt{1000000 + idx:07d}", title, year, kind, genres)


def _piece_length(total: int) -> int:
    plen = 256 * KB
    while total / plen > 1500:
        plen *= 2
    return plen


def _size(rng: random.Random, median: float, sigma: float = 0.6) -> int:
    return max(1, int(rng.lognormvariate(math.log(median), sigma)))


def _tags(rng: random.Random) -> str:
    parts = [rng.choice(LANGUAGES), rng.choice(RESOLUTIONS), rng.choice(SOURCES), rng.choice(CODECS)]
    return ".".join(p for p in parts if p)


def _group(rng: random.Random) -> str:
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    return "".join(rng.choice(letters) for _ in range(rng.randint(3, 5)))


def _dotted(title: str) -> str:
    return ".".join(title.split())


class _Builder:
    def __init__(self, rng: random.Random, bad_utf8_rate: float):
        self.rng = rng
        self.bad = bad_utf8_rate

    def path(self, text: str) -> bytes:
        raw = text.encode("utf-8")
        if self.rng.random() < self.bad:
            head, dot, ext = raw.rpartition(b".")
            # a Latin-1 "e acute" is not valid UTF-8 on its own
            raw = head + b"\xe9" + dot + ext if dot else raw + b"\xe9"
        return raw

    def finish(self, name: str, kind: str, cid: str | None, files: list) -> SyntheticTorrent:
        files = tuple(files)
        total = sum(s for _, s in files)
        raw = make_info(name, files, _piece_length(total))
        return SyntheticTorrent(name, kind, cid, files, raw, hashlib.sha1(raw).digest())


def _movie(b: _Builder, e: CatalogEntry, group: str) -> SyntheticTorrent:
    rng = b.rng
    rel = f"{rng.choice(SITES) if rng.random() < 0.3 else ''}{_dotted(e.primary_title)}.{e.year}.{_tags(rng)}-{group}"
    ext = rng.choice(("mkv", "mkv", "mp4", "avi"))
    video = (b.path(f"{rel}/{rel}.{ext}"), _size(rng, 2 * GB))
    if rng.random() < 0.4:
        return b.finish(f"{rel}.{ext}", "movie", e.catalog_id, [(video[0].split(b"/")[-1], video[1])])
    files = [video, (b.path(f"{rel}/{rel}.nfo"), _size(rng, 4 * KB))]
    if rng.random() < 0.5:
        files.append((b.path(f"{rel}/Subs/English.srt"), _size(rng, 80 * KB)))
    return b.finish(rel, "movie", e.catalog_id, [(p.split(b"/", 1)[1], s) for p, s in files])


def _episode_name(rng: random.Random, e: CatalogEntry, season: int, ep: int, tags: str, group: str) -> str:
    return f"{_dotted(e.primary_title)}.S{season:02d}E{ep:02d}.{tags}-{group}"


def _episode(b: _Builder, e: CatalogEntry, group: str) -> SyntheticTorrent:
    rng = b.rng
    rel = _episode_name(rng, e, rng.randint(1, 9), rng.randint(1, 24), _tags(rng), group)
    ext = rng.choice(("mkv", "mp4"))
    return b.finish(f"{rel}.{ext}", "episode", e.catalog_id,
                    [(f"{rel}.{ext}".encode(), _size(rng, 600 * MB))])


def _season(b: _Builder, e: CatalogEntry, group: str) -> SyntheticTorrent:
    rng = b.rng
    season = rng.randint(1, 9)
    tags = _tags(rng)
    name = f"{_dotted(e.primary_title)}.S{season:02d}.{tags}-{group}"
    n_eps = rng.randint(6, 60)
    files = []
    for ep in range(1, n_eps + 1):
        rel = _episode_name(rng, e, season, ep, tags, group)
        files.append((b.path(f"{rel}.mkv"), _size(rng, 500 * MB)))
        if rng.random() < 0.5:
            files.append((b.path(f"Subs/{rel}.srt"), _size(rng, 60 * KB)))
    return b.finish(name, "season", e.catalog_id, files)


def _music(b: _Builder, words: _Words) -> SyntheticTorrent:
    rng = b.rng
    artist, album = words.title(1, 2), words.title(1, 3)
    name = f"{artist} - {album} ({rng.randint(1960, 2023)}) [MP3 320]"
    files = [(b.path(f"{i:02d} - {words.title(1, 4)}.mp3"), _size(rng, 8 * MB, 0.3))
             for i in range(1, rng.randint(6, 16))]
    files.append((b.path("cover.jpg"), _size(rng, 300 * KB)))
    return b.finish(name, "music", None, files)


def _ebook(b: _Builder, words: _Words) -> SyntheticTorrent:
    rng = b.rng
    title = words.title(2, 5)
    ext = rng.choice(("pdf", "epub", "mobi"))
    fname = f"{title} ({rng.randint(1990, 2023)}).{ext}"
    if rng.random() < 0.6:
        return b.finish(fname, "ebook", None, [(b.path(fname), _size(rng, 5 * MB))])
    return b.finish(title, "ebook", None, [(b.path(fname), _size(rng, 5 * MB)),
                                          (b.path("readme.txt"), _size(rng, 2 * KB))])


def _software(b: _Builder, words: _Words) -> SyntheticTorrent:
    rng = b.rng
    name = f"{words.word()} {words.word()} v{rng.randint(1, 12)}.{rng.randint(0, 9)}"
    files = [(b.path("setup.exe"), _size(rng, 200 * MB)), (b.path("crack/readme.nfo"), _size(rng, 3 * KB))]
    return b.finish(name, "software", None, files)


def _home_video(b: _Builder, words: _Words, catalog: list[CatalogEntry]) -> SyntheticTorrent:
    # clips whose names share a word with some catalog title: weak partial matches
    rng = b.rng
    borrowed = rng.choice(rng.choice(catalog).primary_title.split())
    parts = [words.word() for _ in range(rng.randint(1, 3))]
    parts.insert(rng.randrange(len(parts) + 1), borrowed)
    name = f"{'.'.join(parts)}.{rng.choice(RESOLUTIONS)}.mp4"
    if rng.random() < 0.5:
        return b.finish(name, "home-video", None, [(name.encode(), _size(rng, 300 * MB))])
    clips = [(b.path(f"{'.'.join(parts)}.part{i}.mp4"), _size(rng, 100 * MB)) for i in range(1, rng.randint(2, 8))]
    return b.finish(" ".join(parts), "home-video", None, clips)


_KINDS = [("movie", 0.16), ("episode", 0.12), ("season", 0.02), ("music", 0.15),
          ("ebook", 0.10), ("software", 0.05), ("home-video", 0.40)]


def generate_corpus(seed: int, n_torrents: int, n_titles: int | None = None,
                    bad_utf8_rate: float = 0.03) -> tuple[list[SyntheticTorrent], list[CatalogEntry]]:
    """``n_torrents`` distinct torrents plus the catalog their titles come from."""
    rng = random.Random(seed)
    words = _Words(rng)
    catalog = generate_catalog(rng, n_titles or max(20, n_torrents // 2), words)
    movies = [e for e in catalog if e.kind == "movie"]
    series = [e for e in catalog if e.kind == "tv-series"] or movies
    groups = [_group(rng) for _ in range(max(4, n_torrents // 25))]
    b = _Builder(rng, bad_utf8_rate)
    kinds, weights = zip(*_KINDS)
    out: list[SyntheticTorrent] = []
    seen: set[bytes] = set()
    while len(out) < n_torrents:
        kind = rng.choices(kinds, weights)[0]
        g = rng.choice(groups)
        if kind == "movie":
            t = _movie(b, rng.choice(movies), g)
        elif kind == "episode":
            t = _episode(b, rng.choice(series), g)
        elif kind == "season":
            t = _season(b, rng.choice(series), g)
        elif kind == "music":
            t = _music(b, words)
        elif kind == "ebook":
            t = _ebook(b, words)
        elif kind == "software":
            t = _software(b, words)
        else:
            t = _home_video(b, words, catalog)
        if t.infohash not in seen:
            seen.add(t.infohash)
            out.append(t)
    return out, catalog
