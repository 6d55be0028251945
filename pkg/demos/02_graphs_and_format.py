"""Reading, validating, and writing semantic dependency graphs.

Run: python demos/02_graphs_and_format.py
"""

from sdparse import build_vocab, bundled_corpus, find_cycle, write_sdp

# The bundled sample is a single sentence whose semantic graph is a DAG but
# not a tree: "Mary" is an argument of both "wants" and "buy".
(sample,) = bundled_corpus("figure_sample")
print("tokens :", " ".join(sample.forms))
print("edges  :")
for head, dep, label in sorted(sample.edges):
    print(f"  {sample.forms[head - 1]:>6} -{label}-> {sample.forms[dep - 1]}")
print("tops   :", {sample.forms[t - 1] for t in sample.tops})
print("cycle  :", find_cycle(sample) or "none (valid DAG)")

# Graphs round-trip through the tab-separated interchange format exactly.
text = write_sdp([sample], None)
print("\nserialized block:")
print(text)

# Vocabularies index symbols by descending frequency; words and lemmas below
# the frequency threshold fall back to the unknown index.
corpus = bundled_corpus("synthetic_train")
vocab = build_vocab(corpus, threshold=7)
print("vocabulary words :", vocab.words)
print("edge labels      :", vocab.labels)
print("'rare-word' id   :", vocab.word_id("rare-word"), "(unknown)")
