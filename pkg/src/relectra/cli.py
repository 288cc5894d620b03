"""``relectra`` command-line driver.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 numeric failure. Progress goes to stderr (level from ``RELECTRA_LOG``:
error, info or debug); results go to stdout or ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import checkpoint as ckpt
from . import pipeline
from .config import RunConfig, parse_config
from .corpus import DEFAULT_WEIGHTS, CorpusSource, parse_manifest
from .electra import Checkpoint
from .errors import AnnotationError, ConfigError, CoverageError, DataError, LengthError, NumericError
from .ner import (LABEL_SETS, NerTagger, WordExample, auto_annotate, bio_encode, evaluate_ner,
                  predict_examples, read_conll, read_wordlists, to_subwords, write_conll, whitespace_words)
from .tokenizer import TokenizerError, evaluate_tokenization, load_vocab, save_vocab, train_bpe

log = logging.getLogger("relectra")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("RELECTRA_LOG", "info").lower(), logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("relectra %(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(level)
    log.propagate = False


def _read_lines(path: Optional[str]) -> List[str]:
    if not path:
        return []
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


def _text_files(path: Path) -> List[Path]:
    if not path.exists():
        raise DataError(f"{path} does not exist")
    return sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]


def _sources(cfg: RunConfig, corpus_dir: Path) -> List[CorpusSource]:
    """Manifest from the config (or ``manifest.txt`` in the corpus dir), else domain subdirectories, else one source."""
    manifest = Path(cfg.manifest) if cfg.manifest else corpus_dir / "manifest.txt"
    if cfg.manifest and not manifest.is_absolute():
        manifest = corpus_dir / manifest
    if cfg.manifest or manifest.exists():
        sources = parse_manifest(manifest)
    else:
        if not corpus_dir.is_dir():
            raise DataError(f"corpus directory {corpus_dir} does not exist")
        subdirs = [d for d in DEFAULT_WEIGHTS if (corpus_dir / d).is_dir()]
        if subdirs:
            sources = [CorpusSource(d, d, corpus_dir / d, DEFAULT_WEIGHTS[d]) for d in subdirs]
        else:
            sources = [CorpusSource(corpus_dir.name, "mixed", corpus_dir, 1.0)]
    for s in sources:
        s.load()
    if not any(s.documents for s in sources):
        raise DataError(f"no documents found under {corpus_dir}")
    return sources


def _config(args) -> RunConfig:
    cfg = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "labels", None):
        cfg.labels = args.labels
    cfg.validate()
    return cfg


# -- subcommands -------------------------------------------------------------------

def cmd_train_tokenizer(args) -> int:
    docs = [p.read_text(encoding="utf-8") for p in _text_files(Path(args.corpus))]
    vocab = train_bpe(docs, args.vocab_size, lowercase=not args.cased)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_vocab(vocab, args.out)
    print(f"tokens={len(vocab)} merges={len(vocab.merges)} out={args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    sources = _sources(cfg, Path(args.corpus_dir))
    if args.vocab:
        vocab = load_vocab(args.vocab)
    elif args.resume:
        vocab = load_vocab(out / pipeline.VOCAB_FILE)
    else:
        vocab = pipeline.train_tokenizer(sources, cfg)
    resume = Checkpoint.load(args.resume) if args.resume else None
    run = pipeline.pretrain_run(cfg, sources, vocab, out, resume)
    last = run.result.evals[-1] if run.result.evals else None
    print(f"steps={cfg.total_steps} metrics={out / pipeline.METRICS_FILE} "
          f"checkpoint={out / pipeline.CHECKPOINT_FILE}" + (f" last={last.line()}" if last else ""))
    return EXIT_OK


def _ner_examples(path, vocab) -> list:
    return [to_subwords(ex, vocab) for ex in read_conll(path)]


def cmd_finetune_ner(args) -> int:
    cfg = _config(args)
    vocab = load_vocab(args.vocab)
    train = _ner_examples(args.train, vocab)
    dev = _ner_examples(args.dev, vocab) if args.dev else []
    test = _ner_examples(args.test, vocab) if args.test else []
    run = pipeline.finetune_run(cfg, Checkpoint.load(args.checkpoint), vocab, train, dev, test, Path(args.out))
    print(f"best_epoch={run.result.best_epoch} dev_f1={run.result.best_dev_f1:.6f} "
          f"checkpoint={Path(args.out) / pipeline.NER_CHECKPOINT_FILE}")
    if run.test_report is not None:
        print("\n".join(run.test_report.lines()))
    return EXIT_OK


def cmd_eval_ner(args) -> int:
    cfg = _config(args)
    vocab = load_vocab(args.vocab)
    labels = LABEL_SETS[cfg.labels]
    rcfg = cfg.electra(vocab_size=len(vocab)).discriminator_cfg
    tagger = NerTagger.from_checkpoint(Checkpoint.load(args.checkpoint), rcfg, labels, cfg.seed)
    exs = _ner_examples(args.data, vocab)
    report = evaluate_ner(predict_examples(tagger, exs, cfg.ner_max_len, cfg.ner_stride),
                          [ex.spans for ex in exs], labels)
    text = "\n".join(report.lines()) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _parties_from_header(text: str):
    """Leading ``#PLAINTIFF name`` / ``#DEFENDANT name`` lines, then the body."""
    plaintiffs, defendants, body = [], [], []
    for line in text.splitlines():
        if line.startswith("#PLAINTIFF"):
            plaintiffs.append(line[len("#PLAINTIFF"):].strip())
        elif line.startswith("#DEFENDANT"):
            defendants.append(line[len("#DEFENDANT"):].strip())
        else:
            body.append(line)
    return plaintiffs, defendants, " ".join(" ".join(body).split())


def cmd_auto_annotate(args) -> int:
    wordlists = read_wordlists(args.wordlists) if args.wordlists else []
    allowed = set(LABEL_SETS[args.labels or "legal"])
    examples = []
    for path in _text_files(Path(args.text)):
        pl, de, body = _parties_from_header(path.read_text(encoding="utf-8"))
        spans = auto_annotate(body, (pl + list(args.plaintiff), de + list(args.defendant)), wordlists,
                              args.max_edit)
        spans = [s for s in spans if s.label in allowed]
        words = [w for w, _, _ in whitespace_words(body)]
        examples.append(WordExample(words, bio_encode(spans, len(words)), path.stem))
        log.info("%s: %d spans", path.name, len(spans))
    if args.out:
        write_conll(examples, args.out)
    else:
        for ex in examples:
            sys.stdout.write("\n".join(f"{w}\t{t}" for w, t in zip(ex.words, ex.tags)) + "\n\n")
    return EXIT_OK


def cmd_eval_tokenizer(args) -> int:
    vocab = load_vocab(args.vocab)
    text = " ".join(p.read_text(encoding="utf-8") for p in _text_files(Path(args.text)))
    rep = evaluate_tokenization(text, vocab, _read_lines(args.allowlist), _read_lines(args.legal_lexicon),
                                _read_lines(args.medical_lexicon))
    print(f"word_count={rep.word_count} total_errors={rep.total_errors} legal_errors={rep.legal_errors} "
          f"medical_errors={rep.medical_errors}")
    for w in rep.error_words:
        print(f"error\t{w}")
    return EXIT_OK


def cmd_inspect_checkpoint(args) -> int:
    records = ckpt.load(args.checkpoint)
    c = Checkpoint.from_records(records)
    print(f"step={c.step} records={len(records)}")
    for name, arr in records.items():
        print(f"{name}\t{'x'.join(map(str, arr.shape)) or 'scalar'}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relectra", description="RELECTRA pretraining, tokenization and NER pipeline")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("train-tokenizer", help="learn a BPE vocabulary")
    s.add_argument("--corpus", required=True, help="text file or directory of text files")
    s.add_argument("--vocab-size", type=int, default=30_522)
    s.add_argument("--cased", action="store_true", help="keep case (default lowercases)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_tokenizer)

    s = sub.add_parser("pretrain", help="replaced-token-detection pretraining")
    s.add_argument("--config")
    s.add_argument("--corpus-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--vocab", help="existing vocab file (default: train one on the corpus)")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune-ner", help="fine-tune a token classifier")
    s.add_argument("--config")
    s.add_argument("--checkpoint", required=True, help="pretraining checkpoint")
    s.add_argument("--vocab", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--dev")
    s.add_argument("--test")
    s.add_argument("--labels", choices=sorted(LABEL_SETS))
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_finetune_ner)

    s = sub.add_parser("eval-ner", help="score a fine-tuned tagger")
    s.add_argument("--config")
    s.add_argument("--checkpoint", required=True, help="fine-tuned tagger checkpoint")
    s.add_argument("--vocab", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--labels", choices=sorted(LABEL_SETS))
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_eval_ner)

    s = sub.add_parser("auto-annotate", help="string-matching annotation to token/tag files")
    s.add_argument("--text", required=True, help="text file or directory; #PLAINTIFF/#DEFENDANT header lines")
    s.add_argument("--wordlists")
    s.add_argument("--plaintiff", action="append", default=[])
    s.add_argument("--defendant", action="append", default=[])
    s.add_argument("--max-edit", type=int, default=1)
    s.add_argument("--labels", choices=sorted(LABEL_SETS))
    s.add_argument("--out")
    s.set_defaults(func=cmd_auto_annotate)

    s = sub.add_parser("eval-tokenizer", help="count words split into several tokens")
    s.add_argument("--vocab", required=True)
    s.add_argument("--text", required=True)
    s.add_argument("--allowlist")
    s.add_argument("--legal-lexicon")
    s.add_argument("--medical-lexicon")
    s.set_defaults(func=cmd_eval_tokenizer)

    s = sub.add_parser("inspect-checkpoint", help="list checkpoint records")
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_inspect_checkpoint)
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_help())
        return args.func(args)
    except UsageError as e:
        sys.stderr.write(str(e))
        return EXIT_USAGE
    except NumericError as e:
        log.error("numeric failure: %s", e)
        return EXIT_NUMERIC
    except (ConfigError, DataError, LengthError, AnnotationError, CoverageError, TokenizerError,
            ckpt.CheckpointError, OSError, KeyError) as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
