"""Corpus cleaning, weighted domain mixing and batch assembly."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .tokenizer import Vocab, encode

DOMAINS = ("legal", "medical", "mixed")
DEFAULT_WEIGHTS = {"legal": 0.5, "medical": 0.25, "mixed": 0.25}

# docket captions, page headers and similar all-caps lines
DEFAULT_HEADER_PATTERNS = (
    r"^[A-Z0-9 .,:;'\-–—()/#&]{6,}$",
    r"^\s*page \d+( of \d+)?\s*$",
    r"^\s*(case|docket) no\.?\s*[\w\-:]+\s*$",
)
LATIN_THRESHOLD = 0.6


@dataclass
class CorpusSource:
    name: str
    domain: str
    path: Optional[Path] = None
    weight: float = 1.0
    documents: List[str] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigError(f"unknown domain {self.domain!r}", key="domain")
        if not (self.weight >= 0):
            raise ConfigError(f"weight must be nonnegative, got {self.weight}", key="weight")

    def load(self) -> "CorpusSource":
        """Read documents from ``path``: a file of blank-line separated documents or a directory of files."""
        if self.path is None:
            return self
        p = Path(self.path)
        if not p.exists():
            raise DataError(f"source {self.name!r}: path {p} does not exist")
        files = sorted(x for x in p.rglob("*") if x.is_file()) if p.is_dir() else [p]
        docs: List[str] = []
        for f in files:
            text = f.read_text(encoding="utf-8")
            if p.is_dir():
                docs.append(text)
            else:
                docs.extend(d for d in re.split(r"\n\s*\n", text))
        self.documents = [d for d in (clean_text(x) for x in docs) if d]
        return self


@dataclass
class Batch:
    ids: np.ndarray
    pad_mask: np.ndarray

    def __iter__(self):
        return iter((self.ids, self.pad_mask))


# -- cleaning ----------------------------------------------------------------------

def _printable(ch: str) -> bool:
    if ch in "\n\t ":
        return True
    return not unicodedata.category(ch).startswith("C")


def _latin_ratio(paragraph: str) -> float:
    chars = [c for c in paragraph if not c.isspace()]
    if not chars:
        return 1.0
    basic = sum(1 for c in chars if c.isascii() and (c.isalpha() or c.isdigit() or c in ".,;:'\"()-?!/%$&"))
    return basic / len(chars)


def clean_text(raw: str, header_patterns: Sequence[str] = DEFAULT_HEADER_PATTERNS,
               latin_threshold: float = LATIN_THRESHOLD) -> str:
    """Drop control characters, header lines and mostly non-Latin paragraphs; collapse whitespace.

    Paragraphs are kept one per line in the output, so the result is a fixed
    point of this function.
    """
    text = "".join(ch for ch in raw.replace("\r\n", "\n").replace("\r", "\n") if _printable(ch))
    headers = [re.compile(p, re.IGNORECASE if p.islower() else 0) for p in header_patterns]
    paragraphs: List[str] = []
    for block in re.split(r"\n\s*\n|\n", text):
        line = " ".join(block.split())
        if not line or any(h.match(line) for h in headers):
            continue
        if _latin_ratio(line) < latin_threshold:
            continue
        paragraphs.append(line)
    return "\n".join(paragraphs)


# -- mixing ------------------------------------------------------------------------

def mix_corpora(sources: Sequence[CorpusSource], rng: np.random.Generator) -> Iterator[str]:
    """Endless stream; each document comes from source ``s`` with probability proportional to its weight.

    Each source is walked in a shuffled order and reshuffled when exhausted.
    """
    active = [s for s in sources if s.documents and s.weight > 0]
    if not active:
        raise DataError("all corpus sources are empty")
    w = np.array([s.weight for s in active], dtype=np.float64)
    w /= w.sum()
    orders = [rng.permutation(len(s.documents)) for s in active]
    cursors = [0] * len(active)
    while True:
        k = int(rng.choice(len(active), p=w))
        if cursors[k] == len(orders[k]):
            orders[k] = rng.permutation(len(active[k].documents))
            cursors[k] = 0
        yield active[k].documents[orders[k][cursors[k]]]
        cursors[k] += 1


# -- batching ----------------------------------------------------------------------

def segment(ids: Sequence[int], vocab: Vocab, max_seq_len: int) -> List[List[int]]:
    """Split body ids into pieces that fit ``max_seq_len`` once wrapped with [CLS]/[SEP]."""
    if max_seq_len < 3:
        raise ConfigError("max_seq_len must leave room for [CLS], [SEP] and a token", key="max_seq_len")
    body = max_seq_len - 2
    ids = list(ids)
    pieces = [ids[i:i + body] for i in range(0, len(ids), body)] or [[]]
    return [[vocab.cls_id] + p + [vocab.sep_id] for p in pieces]


def pad_rows(rows: Sequence[Sequence[int]], pad_id: int, multiple: int = 1) -> Batch:
    L = max(len(r) for r in rows)
    L = -(-L // multiple) * multiple
    ids = np.full((len(rows), L), pad_id, dtype=np.int64)
    mask = np.zeros((len(rows), L), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, :len(r)] = r
        mask[i, :len(r)] = True
    return Batch(ids, mask)


def make_batches(stream: Iterable[str], vocab: Vocab, batch_size: int, max_seq_len: int,
                 pool_batches: int = 8, multiple: int = 1) -> Iterator[Batch]:
    """Encode, wrap and segment documents; group similar lengths; pad.

    Segments are buffered ``pool_batches * batch_size`` at a time and sorted by
    length before grouping, so the order is fully determined by the stream.
    """
    pool: List[List[int]] = []
    pool_size = batch_size * pool_batches

    def flush():
        pool.sort(key=len)
        groups = [pool[i:i + batch_size] for i in range(0, len(pool), batch_size)]
        pool.clear()
        for g in groups:
            yield pad_rows(g, vocab.pad_id, multiple)

    for doc in stream:
        pool.extend(segment(encode(doc, vocab).ids, vocab, max_seq_len))
        if len(pool) >= pool_size:
            yield from flush()
    if pool:
        yield from flush()


# -- manifest ----------------------------------------------------------------------

def parse_manifest(path) -> List[CorpusSource]:
    """Read stanzas of ``key = value`` lines (name, domain, path, weight) separated by blank lines.

    Relative paths resolve against the manifest's directory. Weights default to
    the per-domain defaults and are normalised over the sources.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    stanzas: List[dict] = []
    current: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            if current:
                stanzas.append(current)
                current = {}
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value", key=line)
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in ("name", "domain", "path", "weight"):
            raise ConfigError(f"{path}:{lineno}: unknown manifest key {k!r}", key=k)
        if k in current:
            stanzas.append(current)
            current = {}
        current[k] = v
    if current:
        stanzas.append(current)
    sources = []
    for st in stanzas:
        if "path" not in st:
            raise ConfigError("manifest stanza without path", key="path")
        domain = st.get("domain", "mixed")
        try:
            weight = float(st["weight"]) if "weight" in st else DEFAULT_WEIGHTS.get(domain, 1.0)
        except ValueError:
            raise ConfigError(f"weight is not a number: {st['weight']!r}", key="weight") from None
        p = Path(st["path"])
        sources.append(CorpusSource(st.get("name", p.stem), domain, p if p.is_absolute() else path.parent / p, weight))
    total = sum(s.weight for s in sources)
    if not sources or total <= 0:
        raise DataError("manifest lists no source with positive weight")
    for s in sources:
        s.weight /= total
    return sources
