"""Named-entity tagging on top of a pretrained discriminator body.

Spans are half-open token ranges. Files are word level (one ``word<TAB>tag``
per line); :func:`to_subwords` moves them onto BPE tokens, giving the first
subword of a word its tag and the rest the matching I- tag.
"""

from __future__ import annotations

import logging
import math
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .electra import AdamW, Checkpoint
from .errors import AnnotationError, ConfigError, CoverageError, DataError, NumericError
from .reformer import ReformerConfig, reformer_forward
from .seeding import derive_seed
from .tensor import Tensor
from .tokenizer import TokenSequence, Vocab, encode

log = logging.getLogger(__name__)

LEGAL_LABELS = ("TYPE", "PLT", "DEF")
MIXED_LABELS = LEGAL_LABELS + ("PROB",)
LABEL_SETS = {"legal": LEGAL_LABELS, "mixed": MIXED_LABELS}
DEFAULT_MAX_LEN = 1536
_PUNCT = string.punctuation + "“”‘’–—"


def tag_names(labels: Sequence[str]) -> List[str]:
    """``O`` followed by ``B-X``/``I-X`` for each label, in label order."""
    return ["O"] + [f"{p}-{lab}" for lab in labels for p in ("B", "I")]


# -- spans and BIO ---------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class EntitySpan:
    label: str
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise AnnotationError(f"bad span [{self.start}, {self.end})")


@dataclass
class NerExample:
    tokens: TokenSequence
    tags: List[str]
    source_id: str = ""

    def __post_init__(self):
        if len(self.tags) != len(self.tokens.ids):
            raise AnnotationError(f"{len(self.tags)} tags for {len(self.tokens.ids)} tokens")

    @property
    def spans(self) -> List[EntitySpan]:
        return bio_decode(self.tags)


@dataclass
class DecodeReport:
    repairs: int = 0


def bio_encode(spans: Iterable[EntitySpan], length: int) -> List[str]:
    tags = ["O"] * length
    for s in sorted(spans, key=lambda s: s.start):
        if s.end > length:
            raise AnnotationError(f"span {s} exceeds length {length}")
        if any(t != "O" for t in tags[s.start:s.end]):
            raise AnnotationError(f"span {s} overlaps another span")
        tags[s.start] = f"B-{s.label}"
        for i in range(s.start + 1, s.end):
            tags[i] = f"I-{s.label}"
    return tags


def bio_decode(tags: Sequence[str], strict: bool = False,
               report: Optional[DecodeReport] = None) -> List[EntitySpan]:
    """Maximal spans. An I-X that does not continue an X span starts one (counted as a repair)."""
    spans: List[EntitySpan] = []
    label, start = None, 0
    for i, tag in enumerate(list(tags) + ["O"]):
        prefix, _, lab = tag.partition("-")
        if prefix == "I" and label == lab:
            continue
        if label is not None:
            spans.append(EntitySpan(label, start, i))
            label = None
        if prefix == "O" or not tag:
            continue
        if prefix == "I":
            if strict:
                raise AnnotationError(f"orphan {tag} at position {i}")
            if report is not None:
                report.repairs += 1
        elif prefix != "B":
            raise AnnotationError(f"malformed tag {tag!r} at position {i}")
        label, start = lab, i
    return spans


# -- word lists and auto-annotation ---------------------------------------------------

@dataclass
class WordList:
    case_type: str
    phrases: List[str]


def check_wordlists(lists: Sequence[WordList]) -> None:
    owner: Dict[str, str] = {}
    for wl in lists:
        for ph in wl.phrases:
            key = " ".join(ph.lower().split())
            if key in owner and owner[key] != wl.case_type:
                raise AnnotationError(f"phrase {ph!r} listed under {owner[key]!r} and {wl.case_type!r}")
            owner[key] = wl.case_type


def read_wordlists(path) -> List[WordList]:
    lists: List[WordList] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#TYPE"):
            name = line[len("#TYPE"):].strip()
            if not name:
                raise DataError(f"{path}:{lineno}: #TYPE header without a label")
            lists.append(WordList(name, []))
        elif line.startswith("#"):
            continue
        elif not lists:
            raise DataError(f"{path}:{lineno}: phrase before any #TYPE header")
        else:
            lists[-1].phrases.append(line)
    check_wordlists(lists)
    return lists


def write_wordlists(lists: Sequence[WordList], path) -> None:
    lines = []
    for wl in lists:
        lines.append(f"#TYPE {wl.case_type}")
        lines.extend(wl.phrases)
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def edit_distance(a: str, b: str, cap: Optional[int] = None) -> int:
    """Levenshtein distance; stops early once every entry of a row exceeds ``cap``."""
    if abs(len(a) - len(b)) > (cap if cap is not None else math.inf):
        return abs(len(a) - len(b))
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        if cap is not None and min(cur) > cap:
            return min(cur)
        prev = cur
    return prev[-1]


def _norm_word(w: str) -> str:
    return w.strip(_PUNCT).lower()


def whitespace_words(text: str) -> List[Tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in re.finditer(r"\S+", text)]


def _resolve(cands: List[Tuple[str, int, int]], taken: np.ndarray) -> List[Tuple[str, int, int]]:
    out = []
    for lab, a, b in sorted(cands, key=lambda c: (-(c[2] - c[1]), c[1])):
        if not taken[a:b].any():
            taken[a:b] = True
            out.append((lab, a, b))
    return out


def auto_annotate(text: str, header_parties: Tuple[Sequence[str], Sequence[str]],
                  wordlists: Sequence[WordList], max_edit: int = 1,
                  vocab: Optional[Vocab] = None) -> List[EntitySpan]:
    """String-matching annotation.

    Header plaintiff/defendant names match case-insensitively and exactly
    (every occurrence). Word-list phrases become TYPE spans when each word is
    within ``max_edit`` character edits. Overlaps resolve longest first, then
    leftmost; exact candidates are resolved before fuzzy ones so raising
    ``max_edit`` only ever adds spans.

    Spans index whitespace words, or ``vocab`` tokens when a vocab is given.
    """
    words = whitespace_words(text)
    norm = [_norm_word(w) for w, _, _ in words]
    n = len(words)
    exact: List[Tuple[str, int, int]] = []
    fuzzy: List[Tuple[str, int, int]] = []

    plaintiffs, defendants = header_parties
    for label, names in (("PLT", plaintiffs), ("DEF", defendants)):
        for name in names:
            pat = [_norm_word(w) for w in name.split()]
            k = len(pat)
            if not k:
                continue
            for i in range(n - k + 1):
                if norm[i:i + k] == pat:
                    exact.append((label, i, i + k))
    for wl in wordlists:
        for phrase in wl.phrases:
            pat = [_norm_word(w) for w in phrase.split()]
            k = len(pat)
            if not k:
                continue
            for i in range(n - k + 1):
                d = [edit_distance(norm[i + j], pat[j], max_edit) for j in range(k)]
                if max(d) > max_edit:
                    continue
                (exact if sum(d) == 0 else fuzzy).append(("TYPE", i, i + k))

    taken = np.zeros(n, dtype=bool)
    chosen = _resolve(exact, taken) + _resolve(fuzzy, taken)
    spans = [EntitySpan(lab, a, b) for lab, a, b in chosen]
    if vocab is not None:
        seq = encode(text, vocab)
        spans = char_to_token_spans(seq, [(s.label, words[s.start][1], words[s.end - 1][2]) for s in spans])
    return sorted(spans, key=lambda s: s.start)


# -- alignment between characters, words and tokens --------------------------------

def char_to_token_spans(seq: TokenSequence, char_spans: Iterable[Tuple[str, int, int]]) -> List[EntitySpan]:
    """Token spans covering each character span; tokens belong if they overlap it."""
    starts = np.array([o[0] for o in seq.offsets], dtype=np.int64)
    ends = np.array([o[1] for o in seq.offsets], dtype=np.int64)
    out = []
    for label, a, b in char_spans:
        hit = np.flatnonzero((starts < b) & (ends > a) & (starts >= 0))
        if hit.size:
            out.append(EntitySpan(label, int(hit[0]), int(hit[-1]) + 1))
    return sorted(out, key=lambda s: s.start)


@dataclass
class WordExample:
    words: List[str]
    tags: List[str]
    source_id: str = ""


def word_example(text: str, char_spans: Iterable[Tuple[str, int, int]], source_id: str = "") -> WordExample:
    words = whitespace_words(text)
    seq = TokenSequence(list(range(len(words))), [(a, b) for _, a, b in words])
    spans = char_to_token_spans(seq, char_spans)
    return WordExample([w for w, _, _ in words], bio_encode(spans, len(words)), source_id)


def to_subwords(ex: WordExample, vocab: Vocab) -> NerExample:
    text = " ".join(ex.words)
    seq = encode(text, vocab)
    # each whitespace word of the joined text maps to consecutive tokens in order
    word_of = np.searchsorted(np.cumsum([len(w) + 1 for w in ex.words]), [o[0] for o in seq.offsets], side="right")
    tags = []
    prev = -1
    for w in word_of:
        tag = ex.tags[w]
        if w == prev and tag != "O":
            tag = "I-" + tag[2:]
        tags.append(tag)
        prev = w
    return NerExample(seq, tags, ex.source_id)


# -- CoNLL-style files --------------------------------------------------------------

def read_conll(path) -> List[WordExample]:
    examples: List[WordExample] = []
    words: List[str] = []
    tags: List[str] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.rstrip("\n")
        if not line.strip():
            if words:
                examples.append(WordExample(words, tags, f"{Path(path).stem}:{len(examples)}"))
                words, tags = [], []
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise DataError(f"{path}:{lineno}: expected token<TAB>tag")
        words.append(parts[0])
        tags.append(parts[1])
    if words:
        examples.append(WordExample(words, tags, f"{Path(path).stem}:{len(examples)}"))
    for ex in examples:
        bio_decode(ex.tags)  # rejects malformed tags
    return examples


def write_conll(examples: Iterable[WordExample], path) -> None:
    blocks = ["\n".join(f"{w}\t{t}" for w, t in zip(ex.words, ex.tags)) for ex in examples]
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


# -- windows ----------------------------------------------------------------------

@dataclass(frozen=True)
class Window:
    start: int
    end: int


def chunk_with_stride(example: Union[NerExample, int], max_len: int = DEFAULT_MAX_LEN,
                      stride: Optional[int] = None) -> List[Window]:
    """Windows of at most ``max_len`` tokens starting every ``stride`` tokens (default ``max_len // 2``)."""
    length = example if isinstance(example, int) else len(example.tokens.ids)
    stride = max_len // 2 if stride is None else stride
    if not 0 < stride < max_len:
        raise ConfigError(f"stride must satisfy 0 < stride < max_len, got {stride} and {max_len}", key="stride")
    if length <= max_len:
        return [Window(0, length)]
    out = []
    start = 0
    while True:
        end = min(start + max_len, length)
        out.append(Window(start, end))
        if end >= length:
            return out
        start += stride


def merge_window_predictions(windows: Sequence[Tuple[Window, np.ndarray]], length: Optional[int] = None) -> np.ndarray:
    """Per-token predictions on the global sequence.

    ``windows`` pairs each window with its per-token predictions (tag ids or
    score rows). A token takes the prediction from the window where it sits
    farthest from the nearer window edge; ties go to the earlier window.
    """
    if length is None:
        length = max((w.end for w, _ in windows), default=0)
    best = np.full(length, -1, dtype=np.int64)
    src = np.full(length, -1, dtype=np.int64)
    for k, (w, _) in enumerate(windows):
        pos = np.arange(w.start, w.end)
        depth = np.minimum(pos - w.start, w.end - 1 - pos)
        better = depth > best[pos]
        best[pos[better]] = depth[better]
        src[pos[better]] = k
    if (src < 0).any():
        raise CoverageError(f"positions {np.flatnonzero(src < 0)[:5].tolist()} are not covered by any window")
    first = np.asarray(windows[0][1])
    out = np.empty((length,) + first.shape[1:], dtype=first.dtype)
    for k, (w, pred) in enumerate(windows):
        sel = np.flatnonzero(src[w.start:w.end] == k)
        out[w.start + sel] = np.asarray(pred)[sel]
    return out


# -- model ---------------------------------------------------------------------------

@dataclass
class NerTagger:
    """Discriminator body plus a linear per-token classification head."""

    cfg: ReformerConfig
    body: Dict[str, Tensor]
    head_w: Tensor
    head_b: Tensor
    labels: Tuple[str, ...]

    @property
    def tags(self) -> List[str]:
        return tag_names(self.labels)

    @classmethod
    def from_body(cls, cfg: ReformerConfig, body: Dict[str, np.ndarray], labels: Sequence[str],
                  seed: int) -> "NerTagger":
        dt = cfg.np_dtype
        params = {k: Tensor(np.array(v, dtype=dt), requires_grad=True) for k, v in body.items()}
        rng = np.random.default_rng(derive_seed(seed, "ner", "head"))
        n_tags = len(tag_names(labels))
        w = Tensor((rng.standard_normal((cfg.d_model, n_tags)) * 0.02).astype(dt), requires_grad=True)
        b = Tensor(np.zeros(n_tags, dtype=dt), requires_grad=True)
        return cls(cfg, params, w, b, tuple(labels))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, cfg: ReformerConfig, labels: Sequence[str],
                        seed: int) -> "NerTagger":
        """Fresh head over a pretraining checkpoint's discriminator, or a saved tagger."""
        t = ckpt.tensors
        if "ner.head.w" in t:
            body = {k[len("ner.body."):]: v for k, v in t.items() if k.startswith("ner.body.")}
            tagger = cls.from_body(cfg, body, labels, seed)
            if t["ner.head.w"].shape != tagger.head_w.shape:
                raise ConfigError(f"checkpoint head has {t['ner.head.w'].shape[1]} tags, labels need "
                                  f"{tagger.head_w.shape[1]}", key="labels")
            tagger.head_w.data = t["ner.head.w"].astype(cfg.np_dtype)
            tagger.head_b.data = t["ner.head.b"].astype(cfg.np_dtype)
            return tagger
        body = {k[len("disc."):]: v for k, v in t.items() if k.startswith("disc.") and not k.startswith("disc.head.")}
        if not body:
            raise ConfigError("checkpoint holds no discriminator parameters", key="checkpoint")
        return cls.from_body(cfg, body, labels, seed)

    def named_parameters(self) -> Dict[str, Tensor]:
        out = {f"ner.body.{k}": v for k, v in self.body.items()}
        out["ner.head.w"] = self.head_w
        out["ner.head.b"] = self.head_b
        return dict(sorted(out.items()))

    def checkpoint(self, step: int = 0) -> Checkpoint:
        return Checkpoint(step=step, tensors={k: np.array(v.data, dtype=np.float32)
                                              for k, v in self.named_parameters().items()})

    def logits(self, ids, mode: str = "eval", rng=None) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        h = reformer_forward(ids, self.body, self.cfg, mode, rng)
        return T.apply_linear(h, self.head_w, self.head_b)

    def window_scores(self, ids: Sequence[int], max_len: int = DEFAULT_MAX_LEN,
                      stride: Optional[int] = None) -> np.ndarray:
        """Merged per-token log-probabilities (L, n_tags) for a sequence of any length."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return np.zeros((0, len(self.tags)))
        parts = []
        with T.no_grad():
            for w in chunk_with_stride(len(ids), max_len, stride):
                parts.append((w, T.log_softmax(self.logits(ids[w.start:w.end])).data))
        return merge_window_predictions(parts, len(ids))

    def predict_tags(self, ids: Sequence[int], max_len: int = DEFAULT_MAX_LEN,
                     stride: Optional[int] = None) -> List[str]:
        tags = self.tags
        return [tags[i] for i in self.window_scores(ids, max_len, stride).argmax(axis=-1)]

    def predict_spans(self, ids: Sequence[int], max_len: int = DEFAULT_MAX_LEN,
                      stride: Optional[int] = None) -> List[EntitySpan]:
        return bio_decode(self.predict_tags(ids, max_len, stride))


# -- metrics -----------------------------------------------------------------------

@dataclass
class LabelScore:
    precision: float
    recall: float
    f1: float
    predicted: int
    gold: int
    correct: int


def _prf(correct: int, predicted: int, gold: int) -> LabelScore:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return LabelScore(p, r, f, predicted, gold, correct)


@dataclass
class MetricsReport:
    per_label: Dict[str, LabelScore]
    overall: LabelScore

    @property
    def overall_f1(self) -> float:
        return self.overall.f1

    def lines(self) -> List[str]:
        out = ["label,precision,recall,f1,predicted,gold,correct"]
        for lab, s in list(self.per_label.items()) + [("overall", self.overall)]:
            out.append(f"{lab},{s.precision:.6f},{s.recall:.6f},{s.f1:.6f},{s.predicted},{s.gold},{s.correct}")
        return out


def evaluate_ner(predictions: Sequence[Iterable[EntitySpan]], gold: Sequence[Iterable[EntitySpan]],
                 labels: Optional[Sequence[str]] = None) -> MetricsReport:
    """Exact-match entity scoring, per label and micro-averaged."""
    if len(predictions) != len(gold):
        raise AnnotationError(f"{len(predictions)} predicted examples for {len(gold)} gold examples")
    pred_sets = [set(p) for p in predictions]
    gold_sets = [set(g) for g in gold]
    found = sorted({s.label for ss in pred_sets + gold_sets for s in ss})
    labels = list(labels) if labels is not None else found
    per = {}
    for lab in labels:
        c = sum(len({s for s in p if s.label == lab} & g) for p, g in zip(pred_sets, gold_sets))
        np_ = sum(1 for p in pred_sets for s in p if s.label == lab)
        ng = sum(1 for g in gold_sets for s in g if s.label == lab)
        per[lab] = _prf(c, np_, ng)
    c = sum(len(p & g) for p, g in zip(pred_sets, gold_sets))
    overall = _prf(c, sum(map(len, pred_sets)), sum(map(len, gold_sets)))
    return MetricsReport(per, overall)


# -- fine-tuning ---------------------------------------------------------------------

@dataclass
class FinetuneResult:
    tagger: NerTagger
    checkpoint: Checkpoint
    best_epoch: int
    best_dev_f1: float
    dev_history: List[float] = field(default_factory=list)
    loss_history: List[float] = field(default_factory=list)


def check_labels(examples: Iterable[NerExample], labels: Sequence[str]) -> None:
    allowed = set(tag_names(labels))
    for ex in examples:
        bad = set(ex.tags) - allowed
        if bad:
            raise ConfigError(f"example {ex.source_id!r} uses tags {sorted(bad)} outside the label set "
                              f"{list(labels)}", key="labels")


def predict_examples(tagger: NerTagger, examples: Sequence[NerExample], max_len: int = DEFAULT_MAX_LEN,
                     stride: Optional[int] = None) -> List[List[EntitySpan]]:
    return [tagger.predict_spans(ex.tokens.ids, max_len, stride) for ex in examples]


def finetune(tagger: NerTagger, train: Sequence[NerExample], dev: Sequence[NerExample],
             epochs: int = 10, batch_size: int = 1, lr: float = 3e-5, seed: int = 0,
             max_len: int = DEFAULT_MAX_LEN, stride: Optional[int] = None, weight_decay: float = 0.01,
             progress: Optional[Callable[[str], None]] = None) -> FinetuneResult:
    """Per-token cross-entropy over BIO tags; all parameters train.

    Examples longer than ``max_len`` are split into strided windows, each a
    training instance. After every epoch the dev set is scored and the best
    overall-f1 parameters are kept (the initial parameters when ``epochs`` is 0).
    """
    if batch_size != 1:
        raise ConfigError("only batch_size 1 is supported", key="batch_size")
    check_labels(list(train) + list(dev), tagger.labels)
    index = {t: i for i, t in enumerate(tagger.tags)}
    instances = []
    for ex in train:
        tag_ids = np.array([index[t] for t in ex.tags], dtype=np.int64)
        ids = np.asarray(ex.tokens.ids, dtype=np.int64)
        for w in chunk_with_stride(len(ids), max_len, stride):
            if w.end > w.start:
                instances.append((ids[w.start:w.end], tag_ids[w.start:w.end]))

    params = tagger.named_parameters()
    opt = AdamW(params, weight_decay=weight_decay)
    rng = np.random.default_rng(derive_seed(seed, "ner", "finetune"))
    best = (-1.0, 0, tagger.checkpoint(0))
    dev_hist, loss_hist = [], []
    gold = [ex.spans for ex in dev]
    if epochs == 0:
        f = evaluate_ner(predict_examples(tagger, dev, max_len, stride), gold).overall_f1 if dev else 0.0
        return FinetuneResult(tagger, best[2], 0, f)
    step = 0
    for epoch in range(1, epochs + 1):
        total = 0.0
        for k in rng.permutation(len(instances)):
            ids, tag_ids = instances[k]
            opt.zero_grad()
            loss = T.cross_entropy_loss(tagger.logits(ids, "train", rng), tag_ids)
            if not math.isfinite(float(loss.data)):
                raise NumericError(f"non-finite fine-tuning loss at epoch {epoch}")
            loss.backward()
            opt.step(lr)
            total += float(loss.data)
            step += 1
        loss_hist.append(total / max(1, len(instances)))
        f = evaluate_ner(predict_examples(tagger, dev, max_len, stride), gold).overall_f1 if dev else 0.0
        dev_hist.append(f)
        if progress is not None:
            progress(f"epoch {epoch} loss {loss_hist[-1]:.4f} dev_f1 {f:.4f}")
        if f > best[0]:
            best = (f, epoch, tagger.checkpoint(step))
    f, epoch, ck = best
    final = NerTagger.from_checkpoint(ck, tagger.cfg, tagger.labels, seed)
    return FinetuneResult(final, ck, epoch, f, dev_hist, loss_hist)
