"""Character-level byte-pair-encoding tokenizer with a word-end marker.

Words are split on whitespace, lowercased (by default), and spelled as their
characters followed by ``</w>``. Training greedily merges the most frequent
adjacent symbol pair, breaking ties with the lexicographically smallest pair.
"""

from __future__ import annotations

import heapq
import string
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .errors import ConfigError, DataError

EOW = "</w>"
PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
DEFAULT_SPECIALS = (PAD, UNK, CLS, SEP, MASK)
DEFAULT_VOCAB_SIZE = 30_522
SPECIAL_OFFSET = (-1, -1)


class TokenizerError(DataError):
    pass


class TokenizerConfigError(TokenizerError, ConfigError):
    pass


@dataclass
class Vocab:
    merges: List[Tuple[str, str]]
    token_to_id: Dict[str, int]
    id_to_token: Dict[int, str]
    specials: Dict[str, int]
    vocab_size: int = DEFAULT_VOCAB_SIZE
    lowercase: bool = True
    _ranks: Dict[Tuple[str, str], int] = field(default_factory=dict, repr=False, compare=False)
    _cache: Dict[str, Tuple[str, ...]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def pad_id(self) -> int:
        return self.specials[PAD]

    @property
    def unk_id(self) -> int:
        return self.specials[UNK]

    @property
    def cls_id(self) -> int:
        return self.specials[CLS]

    @property
    def sep_id(self) -> int:
        return self.specials[SEP]

    @property
    def mask_id(self) -> int:
        return self.specials[MASK]

    @property
    def special_ids(self) -> Set[int]:
        return set(self.specials.values())

    @property
    def alphabet(self) -> List[str]:
        created = {a + b for a, b in self.merges}
        return [t for t in self.token_to_id if t not in self.specials and t not in created]

    def validate(self) -> None:
        if any(self.id_to_token.get(i) != t for t, i in self.token_to_id.items()) or \
                len(self.id_to_token) != len(self.token_to_id):
            raise TokenizerError("token_to_id and id_to_token are not inverses")
        if len(set(self.specials.values())) != len(self.specials):
            raise TokenizerError("special token ids are not distinct")
        for s in DEFAULT_SPECIALS:
            if s not in self.specials:
                raise TokenizerError(f"missing special token {s}")
        if len(self.token_to_id) > self.vocab_size:
            raise TokenizerError(f"{len(self.token_to_id)} tokens exceed vocab_size {self.vocab_size}")
        known = set(self.alphabet)
        for left, right in self.merges:
            if left not in known or right not in known:
                raise TokenizerError(f"merge ({left!r}, {right!r}) references an unknown symbol")
            known.add(left + right)

    def bpe(self, word: str) -> Tuple[str, ...]:
        """Symbols of one (already normalised) word after all merges."""
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = list(word) + [EOW]
        ranks = self._ranks
        while len(symbols) > 1:
            best, best_rank = -1, None
            for i in range(len(symbols) - 1):
                r = ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = i, r
            if best < 0:
                break
            pair = (symbols[best], symbols[best + 1])
            merged, i = [], 0
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
                    merged.append(pair[0] + pair[1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        out = tuple(symbols)
        if len(self._cache) < 200_000:
            self._cache[word] = out
        return out


@dataclass
class TokenSequence:
    ids: List[int]
    offsets: List[Tuple[int, int]]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class TokenizerReport:
    word_count: int
    total_errors: int
    legal_errors: int
    medical_errors: int
    error_words: List[str]


def _normalise(text: str, lowercase: bool) -> str:
    return text.lower() if lowercase else text


def _corpus_words(corpus: Union[str, Iterable[str]], lowercase: bool) -> Counter:
    if isinstance(corpus, str):
        corpus = [corpus]
    counts: Counter = Counter()
    for chunk in corpus:
        counts.update(_normalise(chunk, lowercase).split())
    return counts


def train_bpe(corpus: Union[str, Iterable[str]], vocab_size: int = DEFAULT_VOCAB_SIZE,
              specials: Sequence[str] = DEFAULT_SPECIALS, lowercase: bool = True) -> Vocab:
    """Learn a merge list from ``corpus`` (a string or an iterable of strings)."""
    word_counts = _corpus_words(corpus, lowercase)
    if not word_counts:
        raise TokenizerError("cannot train a tokenizer on an empty corpus")
    specials = list(specials)
    for s in DEFAULT_SPECIALS:
        if s not in specials:
            raise TokenizerConfigError(f"specials must include {s}")
    alphabet = sorted({c for w in word_counts for c in w} | {EOW})
    base = len(alphabet) + len(specials)
    if vocab_size < base:
        raise TokenizerConfigError(
            f"vocab_size {vocab_size} is smaller than alphabet ({len(alphabet)}) + specials ({len(specials)})")

    words = [list(w) + [EOW] for w in word_counts]
    freqs = [word_counts[w] for w in word_counts]
    pair_counts: Dict[Tuple[str, str], int] = defaultdict(int)
    where: Dict[Tuple[str, str], Set[int]] = defaultdict(set)
    for wi, (syms, f) in enumerate(zip(words, freqs)):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += f
            where[pair].add(wi)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: List[Tuple[str, str]] = []
    n_tokens = base
    created: Set[str] = set(alphabet)
    while n_tokens < vocab_size and heap:
        negc, pair = heapq.heappop(heap)
        current = pair_counts.get(pair, 0)
        if -negc != current:
            # stale entry; a fresh one was pushed when the count changed
            continue
        if current < 2:
            break
        merges.append(pair)
        new_sym = pair[0] + pair[1]
        if new_sym not in created:
            created.add(new_sym)
            n_tokens += 1
        touched: Dict[Tuple[str, str], int] = defaultdict(int)
        for wi in list(where[pair]):
            syms, f = words[wi], freqs[wi]
            for p in zip(syms, syms[1:]):
                touched[p] -= f
            merged, i = [], 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == pair[0] and syms[i + 1] == pair[1]:
                    merged.append(new_sym)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            words[wi] = merged
            for p in zip(merged, merged[1:]):
                touched[p] += f
                where[p].add(wi)
        for p, delta in touched.items():
            if delta == 0:
                continue
            pair_counts[p] += delta
            if pair_counts[p] <= 0:
                del pair_counts[p]
                where.pop(p, None)
            else:
                heapq.heappush(heap, (-pair_counts[p], p))
        pair_counts.pop(pair, None)
        where.pop(pair, None)

    return _build_vocab(specials, alphabet, merges, vocab_size, lowercase)


def _build_vocab(specials, alphabet, merges, vocab_size, lowercase) -> Vocab:
    # two different merges may spell the same string; it keeps a single id
    tokens = list(dict.fromkeys(list(specials) + list(alphabet) + [a + b for a, b in merges]))
    token_to_id = {t: i for i, t in enumerate(tokens)}
    return Vocab(
        merges=list(merges),
        token_to_id=token_to_id,
        id_to_token={i: t for t, i in token_to_id.items()},
        specials={s: token_to_id[s] for s in specials},
        vocab_size=vocab_size,
        lowercase=lowercase,
    )


def _words_with_spans(text: str):
    start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                yield start, i
                start = None
        elif start is None:
            start = i
    if start is not None:
        yield start, len(text)


def encode(text: str, vocab: Vocab, add_specials: bool = False) -> TokenSequence:
    ids: List[int] = []
    offsets: List[Tuple[int, int]] = []
    if add_specials:
        ids.append(vocab.cls_id)
        offsets.append(SPECIAL_OFFSET)
    t2i, unk = vocab.token_to_id, vocab.unk_id
    for start, end in _words_with_spans(text):
        word = _normalise(text[start:end], vocab.lowercase)
        if len(word) != end - start:
            # case mapping changed the length; fall back to per-character lowering
            word = "".join(c if len(c.lower()) != 1 else c.lower() for c in text[start:end]) \
                if vocab.lowercase else text[start:end]
        pos = start
        for sym in vocab.bpe(word):
            width = len(sym) - (len(EOW) if sym.endswith(EOW) else 0)
            ids.append(t2i.get(sym, unk))
            offsets.append((pos, pos + width))
            pos += width
    if add_specials:
        ids.append(vocab.sep_id)
        offsets.append(SPECIAL_OFFSET)
    return TokenSequence(ids, offsets)


def decode(ids: Iterable[int], vocab: Vocab) -> str:
    pieces = []
    specials = vocab.special_ids
    for i in ids:
        i = int(i)
        if i not in vocab.id_to_token:
            raise IndexError(f"unknown token id {i}")
        if i in specials:
            continue
        pieces.append(vocab.id_to_token[i])
    return "".join(pieces).replace(EOW, " ").rstrip(" ")


def tokens_of(ids: Iterable[int], vocab: Vocab) -> List[str]:
    return [vocab.id_to_token[int(i)] for i in ids]


_PUNCT = string.punctuation + "“”‘’–—"


def evaluate_tokenization(text: str, vocab: Vocab, abbreviation_allowlist: Iterable[str] = (),
                          legal_lexicon: Iterable[str] = (),
                          medical_lexicon: Iterable[str] = ()) -> TokenizerReport:
    """Count words a vocabulary fails to keep whole.

    A whitespace word (surrounding punctuation stripped) is an error when it
    encodes to more than one non-special token and is not an allowlisted
    abbreviation. Each distinct word form is counted once.
    """
    allow = {w.lower() for w in abbreviation_allowlist}
    legal = {w.lower() for w in legal_lexicon}
    medical = {w.lower() for w in medical_lexicon}
    specials = vocab.special_ids
    words = text.split()
    errors: List[str] = []
    seen: Set[str] = set()
    for raw in words:
        w = raw.strip(_PUNCT)
        if not w:
            continue
        key = w.lower()
        if key in seen:
            continue
        seen.add(key)
        n = sum(1 for i in encode(w, vocab).ids if i not in specials)
        if n > 1 and key not in allow:
            errors.append(key)
    return TokenizerReport(
        word_count=len(words),
        total_errors=len(errors),
        legal_errors=sum(1 for e in errors if e in legal),
        medical_errors=sum(1 for e in errors if e in medical),
        error_words=errors,
    )


# -- persistence ------------------------------------------------------------------

def save_vocab(vocab: Vocab, path: Union[str, Path]) -> None:
    """Write the line-oriented vocab file.

    ``#SPECIALS`` and ``#MERGES`` sections carry the contract; ``#ALPHABET``
    lists base symbols and ``#OPTIONS`` the size budget and case flag, so ids
    are reproduced exactly on load.
    """
    specials = sorted(vocab.specials, key=vocab.specials.get)
    lines = ["#OPTIONS", f"vocab_size\t{vocab.vocab_size}", f"lowercase\t{int(vocab.lowercase)}", "#SPECIALS"]
    lines += specials
    lines.append("#ALPHABET")
    lines += vocab.alphabet
    lines.append("#MERGES")
    lines += [f"{a}\t{b}" for a, b in vocab.merges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_SECTIONS = ("#OPTIONS", "#SPECIALS", "#ALPHABET", "#MERGES")


def load_vocab(path: Union[str, Path]) -> Vocab:
    section: Optional[str] = None
    opts: Dict[str, str] = {}
    specials: List[str] = []
    alphabet: List[str] = []
    merges: List[Tuple[str, str]] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if line == "":
            continue
        if line in _SECTIONS:
            section = line
            continue
        if section == "#OPTIONS":
            k, _, v = line.partition("\t")
            opts[k] = v
        elif section == "#SPECIALS":
            specials.append(line)
        elif section == "#ALPHABET":
            alphabet.append(line)
        elif section == "#MERGES":
            left, sep, right = line.partition("\t")
            if not sep:
                raise TokenizerError(f"{path}:{lineno}: merge line must be 'left<TAB>right'")
            merges.append((left, right))
        else:
            raise TokenizerError(f"{path}:{lineno}: content outside a section")
    vocab = _build_vocab(specials, alphabet, merges,
                         int(opts.get("vocab_size", len(specials) + len(alphabet) + len(merges))),
                         opts.get("lowercase", "1") == "1")
    vocab.validate()
    return vocab
