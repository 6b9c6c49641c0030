"""Scene release-name parser.

A name is read as ``[site] Title [YEAR] [SxxEyy [Episode.Title]] TAGS -GROUP [.ext]``.
The extension, a leading bracketed site domain and the trailing ``-GROUP``
are peeled off first; the remainder is tokenized on dots, underscores and
whitespace. The title is the leading span up to the first anchor (a year or
an episode token) or, when no anchor exists, up to the first recognized tag.
Everything after the title is attributed to a field, a flag, or ``extras``.
"""

from __future__ import annotations

import datetime
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

FLAG_NAMES = ("repack", "proper", "internal", "readnfo", "unrated", "remastered",
              "directorsCut", "internationalCut", "documentary", "3d", "widescreen", "hdr")
TEXT_FIELDS = ("resolution", "source_quality", "codec", "audio", "language", "network", "bit_depth")
FIRST_FILM_YEAR = 1888

_SPLIT = re.compile(r"[^._\s]+")
_PART_SPLIT = re.compile(r"[._\s]+")
_EP = re.compile(r"^s(\d{1,3})[ ._-]?e(\d{1,4})((?:-?e\d{1,4})*)$", re.I)
_EP_X = re.compile(r"^(\d{1,2})x(\d{1,3})$", re.I)
_SEASON_PACK = re.compile(r"^s(\d{1,3})$", re.I)
_YEAR = re.compile(r"^\d{4}$")
_SITE = re.compile(
    r"^\s*[\[(]\s*((?:www\.)?[a-z0-9-]+(?:\.[a-z0-9-]+)*\.[a-z]{2,6})\s*[\])]\s*[-_.\s]*", re.I)
_SITE_WWW = re.compile(r"^\s*(www\.[a-z0-9-]+(?:\.[a-z0-9-]+)*\.[a-z]{2,6})\s*[-_]+\s*", re.I)
_LEAD_BRACKET = re.compile(r"^\s*\[([^\]]*)\]\s*[-_.\s]*")
_TRAIL_BRACKET = re.compile(r"\s*\[([^\]]*)\]\s*$")
_EXT = re.compile(r"\.([A-Za-z0-9]{1,5})\s*$")
_GROUP = re.compile(r"-([A-Za-z0-9]+)\s*$")
_STRIP = "()[]{}"


class Vocabulary:
    """Token classes loaded from a ``class: tok tok ...`` file."""

    def __init__(self, classes: dict[str, list[str]], version: str = "1"):
        self.version = version
        self.classes = classes
        self.lookup: dict[tuple, tuple[str, str]] = {}
        for cls, tokens in classes.items():
            if cls.endswith("_ext"):
                continue
            for tok in tokens:
                parts = tuple(p.lower() for p in _PART_SPLIT.split(tok) if p)
                self.lookup.setdefault(parts, (cls, tok))
        self.max_parts = max((len(k) for k in self.lookup), default=1)
        self.video_ext = {t.lower() for t in classes.get("video_ext", [])}
        self.other_ext = {t.lower() for t in classes.get("other_ext", [])}
        self.canonical = {cls: toks[0] for cls, toks in classes.items() if toks}

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Vocabulary":
        if path is None:
            text = resources.files(__package__).joinpath("vocab.txt").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        classes: dict[str, list[str]] = {}
        version = "1"
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("#"):
                m = re.match(r"#\s*version:\s*(\S+)", line)
                if m:
                    version = m.group(1)
                continue
            if not line or ":" not in line:
                continue
            name, _, toks = line.partition(":")
            classes.setdefault(name.strip(), []).extend(toks.split())
        return cls(classes, version)

    def classify(self, key: str) -> tuple[str, str] | None:
        return self.lookup.get((key,))


_DEFAULT_VOCAB: Vocabulary | None = None


def default_vocabulary() -> Vocabulary:
    global _DEFAULT_VOCAB
    if _DEFAULT_VOCAB is None:
        _DEFAULT_VOCAB = Vocabulary.load()
    return _DEFAULT_VOCAB


@dataclass(frozen=True)
class FileClass:
    kind: str  # "video" | "non-video"
    extension: str

    @property
    def is_video(self) -> bool:
        return self.kind == "video"


def classify_file(path: str, vocab: Vocabulary | None = None) -> FileClass:
    """Video or not, from the extension of the last path component."""
    vocab = vocab or default_vocabulary()
    base = path.replace("\\", "/").rsplit("/", 1)[-1]
    stem, dot, ext = base.rpartition(".")
    if not dot or not stem:
        return FileClass("non-video", "")
    ext = ext.lower()
    return FileClass("video" if ext in vocab.video_ext else "non-video", ext)


@dataclass
class ParsedName:
    title: str = ""
    year: int | None = None
    season: int | None = None
    episode: int | None = None
    episode_title: str | None = None
    resolution: str | None = None
    source_quality: str | None = None
    codec: str | None = None
    audio: str | None = None
    language: str | None = None
    network: str | None = None
    bit_depth: str | None = None
    group: str | None = None
    site: str | None = None
    container_extension: str | None = None
    flags: set = field(default_factory=set)
    extras: dict = field(default_factory=dict)

    @property
    def extension(self) -> str | None:
        return self.container_extension

    def populated(self) -> dict:
        """Every non-empty field except ``extras``."""
        out = {}
        for k, v in self.__dict__.items():
            if k == "extras" or v is None or v == "" or v == set():
                continue
            out[k] = v
        return out

    def reassemble(self, vocab: Vocabulary | None = None) -> str:
        """Render back into dotted Scene form."""
        vocab = vocab or default_vocabulary()
        parts = [self.title.replace(" ", ".")] if self.title else []
        if self.year is not None:
            parts.append(str(self.year))
        if self.season is not None and self.episode is not None:
            parts.append(f"S{self.season:02d}E{self.episode:02d}")
        if self.episode_title:
            parts.append(self.episode_title.replace(" ", "."))
        for flag in FLAG_NAMES:
            if flag in self.flags:
                parts.append(vocab.canonical[f"flag.{flag}"])
        for name in ("language", "network", "resolution", "source_quality", "codec",
                     "audio", "bit_depth"):
            value = getattr(self, name)
            if value:
                parts.append(value)
        out = ".".join(parts)
        if self.group:
            out += f"-{self.group}"
        if self.container_extension:
            out += f".{self.container_extension}"
        if self.site:
            out = f"[{self.site}] " + out
        return out


@dataclass
class _Item:
    text: str
    key: str
    start: int
    end: int
    kind: str | None = None  # vocab class, "episode", "year", "season_pack"
    value: object = None
    canon: str | None = None  # vocabulary spelling of a tag token


def _tokens(name: str, lo: int, hi: int) -> list[_Item]:
    out = []
    for m in _SPLIT.finditer(name, lo, hi):
        text = m.group()
        key = text.strip(_STRIP).lower()
        if not key.strip("-"):
            continue
        out.append(_Item(text, key, m.start(), m.end()))
    return out


def _has_word(name: str, lo: int, hi: int) -> bool:
    return any(ch.isalnum() for ch in name[lo:hi])


def _is_year(key: str, current_year: int) -> bool:
    return bool(_YEAR.match(key)) and FIRST_FILM_YEAR <= int(key) <= current_year + 1


class SceneParser:
    def __init__(self, vocab: Vocabulary | None = None, current_year: int | None = None):
        self.vocab = vocab or default_vocabulary()
        self.current_year = current_year or datetime.date.today().year

    # ------------------------------------------------------------ helpers

    def _recognized(self, key: str) -> bool:
        if self.vocab.classify(key) is not None:
            return True
        return bool(_EP.match(key) or _EP_X.match(key) or _is_year(key, self.current_year))

    def _split_hyphens(self, items: list[_Item]) -> list[_Item]:
        """Break "BluRay-x264" style tokens apart when the whole is unknown but a part is known."""
        out = []
        for it in items:
            if "-" not in it.text or self._recognized(it.key):
                out.append(it)
                continue
            subs = []
            for m in re.finditer(r"[^-]+", it.text):
                key = m.group().strip(_STRIP).lower()
                if key:
                    subs.append(_Item(m.group(), key, it.start + m.start(), it.start + m.end()))
            if any(self._recognized(x.key) for x in subs):
                out.extend(subs)
            else:
                out.append(it)
        return out

    def _merge(self, items: list[_Item], name: str) -> list[_Item]:
        """Join adjacent tokens that form one vocabulary entry or episode phrase."""
        items = self._split_hyphens(items)
        out = []
        i = 0
        while i < len(items):
            keys = [it.key for it in items[i:i + 4]]
            if (len(keys) == 4 and keys[0] == "season" and keys[1].isdigit()
                    and keys[2] == "episode" and keys[3].isdigit()):
                a, b = items[i], items[i + 3]
                out.append(_Item(name[a.start:b.end], "", a.start, b.end, "episode",
                                 (int(keys[1]), int(keys[3]), ())))
                i += 4
                continue
            for n in range(min(self.vocab.max_parts, len(items) - i), 0, -1):
                hit = self.vocab.lookup.get(tuple(keys[:n]))
                if hit is not None:
                    a, b = items[i], items[i + n - 1]
                    out.append(_Item(name[a.start:b.end], ".".join(keys[:n]), a.start, b.end,
                                     hit[0], canon=hit[1]))
                    i += n
                    break
            else:
                out.append(items[i])
                i += 1
        return out

    def _classify(self, it: _Item) -> None:
        if it.kind is not None:
            return
        m = _EP.match(it.key)
        if m:
            extra = tuple(int(x) for x in re.findall(r"\d+", m.group(3)))
            it.kind, it.value = "episode", (int(m.group(1)), int(m.group(2)), extra)
            return
        m = _EP_X.match(it.key)
        if m:
            it.kind, it.value = "episode", (int(m.group(1)), int(m.group(2)), ())
            return
        if _SEASON_PACK.match(it.key):
            it.kind = "season_pack"
            return
        if _is_year(it.key, self.current_year):
            it.kind, it.value = "year", int(it.key)
            return
        hit = self.vocab.classify(it.key)
        if hit is not None:
            it.kind, it.canon = hit

    # ------------------------------------------------------------ parse

    def parse(self, name: str) -> ParsedName:
        out = ParsedName()
        if not isinstance(name, str):
            name = str(name)
        lo, hi = 0, len(name)

        m = _EXT.search(name, lo, hi)
        if m:
            ext = m.group(1)
            low = ext.lower()
            prev = re.search(r"([^._\s]+)[._\s]*$", name[lo:m.start()])
            ambiguous = (self.vocab.classify(low) is not None
                         or (prev is not None and (prev.group(1).lower(), low) in self.vocab.lookup))
            known = low in self.vocab.video_ext or low in self.vocab.other_ext
            if known and m.start() > lo and (not ambiguous or ext == low):
                out.container_extension = ext
                hi = m.start()

        while True:
            m = _TRAIL_BRACKET.search(name, lo, hi)
            if not m or m.start() <= lo or not _has_word(name, lo, m.start()):
                break
            out.extras.setdefault(f"[{m.group(1)}]", m.start(1) - 1)
            hi = m.start()

        m = _SITE.match(name, lo, hi) or _SITE_WWW.match(name, lo, hi)
        if m:
            out.site = m.group(1)
            lo = m.end()
        while True:
            m = _LEAD_BRACKET.match(name, lo, hi)
            if not m or m.end() >= hi or not _has_word(name, m.end(), hi):
                break
            out.extras.setdefault(f"[{m.group(1)}]", m.start(1) - 1)
            lo = m.end()

        m = _GROUP.search(name, lo, hi)
        if m and m.start() > lo:
            cand = m.group(1)
            before = name[lo:m.start()]
            prev_m = re.search(r"[^._\s]+$", before)
            prev = prev_m.group().lower() if prev_m else ""
            joined = f"{prev}-{cand.lower()}"
            pre_items = self._merge(_tokens(name, lo, m.start()), name)
            if (self.vocab.classify(cand.lower()) is None
                    and (joined,) not in self.vocab.lookup
                    and not self._recognized(cand.lower())
                    and any(it.kind or self._recognized(it.key) for it in pre_items[1:])):
                out.group = cand
                hi = m.start()

        items = self._merge(_tokens(name, lo, hi), name)
        for it in items:
            self._classify(it)
        if not items:
            if out.group:
                out.title, out.group = out.group, None
            return out

        strong = {"resolution", "source_quality", "codec", "audio"}
        ep_idx = next((i for i, it in enumerate(items) if it.kind == "episode"), None)
        first_strong = next((i for i, it in enumerate(items) if i >= 1 and it.kind in strong), len(items))
        limit = min(first_strong, ep_idx if ep_idx is not None else len(items))
        years = [i for i, it in enumerate(items) if it.kind == "year" and 1 <= i < limit]
        year_idx = years[-1] if years else None
        anchors = [i for i in (ep_idx, year_idx) if i is not None]
        if anchors:
            title_end = min(anchors)
        else:
            title_end = next((i for i, it in enumerate(items) if i >= 1 and it.kind), len(items))
        title_end = max(1, title_end)
        if ep_idx is not None and ep_idx < title_end:
            ep_idx = None

        out.title = " ".join(it.text for it in items[:title_end])
        ep_title: list[_Item] = []
        in_ep_title = False
        for i in range(title_end, len(items)):
            it = items[i]
            kind = it.kind
            if i == ep_idx:
                season, episode, more = it.value
                out.season, out.episode = season, episode
                for e in more:
                    out.extras.setdefault(f"+E{e:02d}", it.start)
                in_ep_title = True
                continue
            if in_ep_title and kind is None:
                ep_title.append(it)
                continue
            in_ep_title = False
            if i == year_idx:
                out.year = it.value
            elif kind in TEXT_FIELDS and getattr(out, kind) is None:
                # tags take the vocabulary spelling so "web" and "WEB" aggregate together
                setattr(out, kind, it.canon or it.text)
            elif kind is not None and kind.startswith("flag."):
                out.flags.add(kind[5:])
            else:
                out.extras.setdefault(it.text, it.start)
        if ep_title:
            out.episode_title = " ".join(it.text for it in ep_title)
        return out


_DEFAULT_PARSER: SceneParser | None = None


def parse(name: str) -> ParsedName:
    """Parse with the bundled vocabulary."""
    global _DEFAULT_PARSER
    if _DEFAULT_PARSER is None:
        _DEFAULT_PARSER = SceneParser()
    return _DEFAULT_PARSER.parse(name)
