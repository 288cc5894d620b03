"""
Domain vocabularies and split words
===================================

Two byte-pair vocabularies of the same size, one learned from general prose
and one from legal and clinical text, tokenize the same short passage. The
evaluation harness counts the words each one breaks into pieces.
"""

from relectra import synthetic
from relectra.tokenizer import encode, evaluate_tokenization, tokens_of, train_bpe

# the domain text runs out of merges below 500, so the general vocab is matched to it
domain = train_bpe(synthetic.repeated(synthetic.DOMAIN_TEXT, 3), vocab_size=500)
general = train_bpe(synthetic.repeated(synthetic.GENERAL_TEXT, 3), vocab_size=len(domain))
print(f"general vocab: {len(general)} tokens, {len(general.merges)} merges")
print(f"domain vocab:  {len(domain)} tokens, {len(domain.merges)} merges")

# how each vocabulary cuts a few specialist words
for word in ["orthopnea", "palpitations", "adjudications", "erroneous", "court"]:
    g = tokens_of(encode(word, general).ids, general)
    d = tokens_of(encode(word, domain).ids, domain)
    print(f"{word:15s} general={' '.join(g):40s} domain={' '.join(d)}")

# errors over the whole passage, split by lexicon
kw = dict(abbreviation_allowlist=synthetic.ABBREVIATIONS, legal_lexicon=synthetic.LEGAL_LEXICON,
          medical_lexicon=synthetic.MEDICAL_LEXICON)
for name, vocab in (("general", general), ("domain", domain)):
    r = evaluate_tokenization(synthetic.TABLE3_SAMPLE, vocab, **kw)
    print(f"{name:8s} words={r.word_count} split={r.total_errors} legal={r.legal_errors} medical={r.medical_errors}")
