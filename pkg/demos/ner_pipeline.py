"""
From case text to entity scores
===============================

Weak labels come from string matching against party names in the case
header and a list of case-type phrases. The labelled words are mapped onto
subword tokens, long inputs are tagged window by window, and predictions are
scored by exact span match.
"""

import numpy as np

from relectra import synthetic
from relectra.ner import (EntitySpan, WordList, auto_annotate, bio_encode, chunk_with_stride, evaluate_ner,
                          merge_window_predictions, whitespace_words)

text = ("plaintiff mary smith sued defendant acme trucking company after a rear end colision . "
        "defendant acme trucking company denies liability . the complaint alleges that mary smith suffered whiplash .")
lists = [WordList("car accident", ["rear end collision", "car crash"]),
         WordList("slip and fall", ["wet floor"])]

# header names match exactly; the misspelt phrase is within one edit per word
spans = auto_annotate(text, (["Mary Smith"], ["ACME Trucking Company"]), lists, max_edit=1)
words = [w for w, _, _ in whitespace_words(text)]
for s in spans:
    print(f"{s.label:5s} {' '.join(words[s.start:s.end])}")
print(" ".join(f"{w}/{t}" for w, t in zip(words, bio_encode(spans, len(words)))))

# a long document is cut into overlapping windows; each token keeps the
# prediction from the window where it sits farthest from an edge
windows = chunk_with_stride(5000, max_len=1536, stride=768)
print("windows:", [(w.start, w.end) for w in windows])
truth = np.arange(5000) % 7
merged = merge_window_predictions([(w, truth[w.start:w.end]) for w in windows], 5000)
print("merge reproduces every position:", bool((merged == truth).all()))

# exact-match scoring on generated cases: a prediction that drops one PROB span
docs = synthetic.case_corpus(3, seed=1)
gold = [[EntitySpan(lab, a, b) for lab, a, b in d.spans] for d in docs]
pred = [g[:-1] if i == 0 else g for i, g in enumerate(gold)]
print("\n".join(evaluate_ner(pred, gold, ("PLT", "DEF", "TYPE", "PROB")).lines()))
