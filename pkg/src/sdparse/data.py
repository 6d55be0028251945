"""Semantic dependency graph data model and SDP 2015 file handling.

The tab-separated block format: ``#`` lines are comments (a bare ``#<id>``
line names the sentence and survives round-trips, other comments are
dropped), blank lines separate sentences, and each token row carries
``id form lemma pos top pred frame`` plus one argument column per ``+``
predicate, in predicate order, with ``_`` meaning no edge. Files without the
frame column (the older 6-column layout) are read tolerantly and written
back with ``_`` frames.

Top nodes are modelled downstream as edges from a virtual ROOT token at
position 0 carrying the reserved label ``<TOP>``; here tops stay a plain set
of token indices.
"""

from __future__ import annotations

import importlib.resources
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

TOP_LABEL = "<TOP>"
UNK = 0
DROP = 1
CHAR_PAD = 2  # boundary symbol used to pad short words in the char encoder

_SPECIAL_TOKENS = ("<UNK>", "<DROP>")
_CHAR_SPECIALS = ("<UNK>", "<DROP>", "<PAD>")


class SdpParseError(ValueError):
    """Malformed SDP input; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Token:
    index: int  # 1-based position in the sentence
    form: str
    lemma: str = "_"
    pos: str = "_"
    frame: str = "_"  # opaque pass-through text from the frame column

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"token index must be >= 1, got {self.index}")
        if not self.form:
            raise ValueError("token form must be non-empty")

    @property
    def characters(self) -> tuple[str, ...]:
        return tuple(self.form)


@dataclass(frozen=True)
class SemanticGraph:
    """A token sequence plus labeled directed edges and top-node flags.

    Edges are (head, dependent, label) with 1-based indices; self-loops and
    duplicate (head, dependent) pairs are rejected. Acyclicity is a property
    of the annotation schemes, checked by :func:`find_cycle` but never forced
    on predicted graphs.
    """

    tokens: tuple[Token, ...]
    edges: frozenset[tuple[int, int, str]] = frozenset()
    tops: frozenset[int] = frozenset()
    sent_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "edges", frozenset(self.edges))
        object.__setattr__(self, "tops", frozenset(self.tops))
        n = len(self.tokens)
        seen_pairs = set()
        for head, dep, _label in self.edges:
            if head == dep:
                raise ValueError(f"self-loop edge at token {head}")
            if not (1 <= head <= n and 1 <= dep <= n):
                raise ValueError(f"edge ({head}, {dep}) outside token range 1..{n}")
            if (head, dep) in seen_pairs:
                raise ValueError(f"duplicate edge for pair ({head}, {dep})")
            seen_pairs.add((head, dep))
        for t in self.tops:
            if not 1 <= t <= n:
                raise ValueError(f"top index {t} outside token range 1..{n}")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> tuple[str, ...]:
        return tuple(t.form for t in self.tokens)

    def predicates(self) -> list[int]:
        """Token indices with at least one outgoing edge, in order."""
        heads = {head for head, _, _ in self.edges}
        return sorted(heads)

    def with_edges(self, edges, tops) -> "SemanticGraph":
        return replace(self, edges=frozenset(edges), tops=frozenset(tops))


def find_cycle(graph: SemanticGraph) -> list[int] | None:
    """Depth-first cycle search; returns one cycle as a token-index path, or None."""
    adj: dict[int, list[int]] = {}
    for head, dep, _ in graph.edges:
        adj.setdefault(head, []).append(dep)
    for neighbours in adj.values():
        neighbours.sort()
    WHITE, GREY, BLACK = 0, 1, 2
    color = {i: WHITE for i in range(1, len(graph) + 1)}
    parent: dict[int, int] = {}

    for root in range(1, len(graph) + 1):
        if color[root] != WHITE:
            continue
        stack = [(root, iter(adj.get(root, ())))]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GREY:
                    cycle = [nxt, node]
                    cur = node
                    while cur != nxt:
                        cur = parent[cur]
                        cycle.append(cur)
                    cycle.reverse()
                    return cycle
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    parent[nxt] = node
                    stack.append((nxt, iter(adj.get(nxt, ()))))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return None


def is_dag(graph: SemanticGraph) -> bool:
    return find_cycle(graph) is None


# ---------------------------------------------------------------------------
# reading and writing


def _parse_block(rows: list[tuple[int, list[str]]], sent_id: str | None) -> SemanticGraph:
    n = len(rows)
    pred_rows = [i for i, (_ln, cols) in enumerate(rows) if len(cols) > 5 and cols[5] == "+"]
    p = len(pred_rows)
    widths = {len(cols) for _ln, cols in rows}
    if len(widths) != 1:
        bad_ln = max(rows, key=lambda r: len(r[1]))[0]
        raise SdpParseError(bad_ln, f"rows in one sentence differ in column count {sorted(widths)}")
    width = widths.pop()
    if width == 7 + p:
        has_frame = True
    elif width == 6 + p:
        has_frame = False
    else:
        raise SdpParseError(
            rows[0][0],
            f"{width} columns does not match {p} predicate(s): expected {7 + p} (or {6 + p} without frames)",
        )

    tokens = []
    tops = set()
    edges = set()
    for r, (line_no, cols) in enumerate(rows):
        try:
            idx = int(cols[0])
        except ValueError:
            raise SdpParseError(line_no, f"token id {cols[0]!r} is not an integer") from None
        if idx != r + 1:
            raise SdpParseError(line_no, f"non-contiguous token id {idx}, expected {r + 1}")
        frame = cols[6] if has_frame else "_"
        tokens.append(Token(index=idx, form=cols[1], lemma=cols[2], pos=cols[3], frame=frame))
        if cols[4] == "+":
            tops.add(idx)
        args = cols[7:] if has_frame else cols[6:]
        for k, cell in enumerate(args):
            if cell != "_":
                head = pred_rows[k] + 1
                edges.add((head, idx, cell))
    return SemanticGraph(tokens=tuple(tokens), edges=frozenset(edges), tops=frozenset(tops), sent_id=sent_id)


def read_sdp(source) -> list[SemanticGraph]:
    """Parse SDP blocks from a file path, an open text stream, or a string."""
    if isinstance(source, str) and "\n" in source:
        lines = source.splitlines()
    elif isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()

    graphs: list[SemanticGraph] = []
    rows: list[tuple[int, list[str]]] = []
    sent_id: str | None = None
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if line.startswith("#"):
            body = line[1:].strip()
            if body and " " not in body and "\t" not in body:
                sent_id = body
            continue
        if not line.strip():
            if rows:
                graphs.append(_parse_block(rows, sent_id))
                rows, sent_id = [], None
            continue
        rows.append((line_no, line.split("\t")))
    if rows:
        graphs.append(_parse_block(rows, sent_id))
    return graphs


def write_sdp(graphs, sink) -> str | None:
    """Emit SDP blocks; predicates are exactly the tokens with outgoing edges.

    ``sink`` may be a path, an open text stream, or None (returns the text).
    """
    out_lines: list[str] = []
    for g in graphs:
        if g.sent_id is not None:
            out_lines.append(f"#{g.sent_id}")
        preds = g.predicates()
        by_pair = {(h, d): label for h, d, label in g.edges}
        for tok in g.tokens:
            cols = [
                str(tok.index),
                tok.form,
                tok.lemma,
                tok.pos,
                "+" if tok.index in g.tops else "-",
                "+" if tok.index in preds else "-",
                tok.frame,
            ]
            cols.extend(by_pair.get((p, tok.index), "_") for p in preds)
            out_lines.append("\t".join(cols))
        out_lines.append("")
    text = "\n".join(out_lines) + ("\n" if out_lines else "")
    if sink is None:
        return text
    if isinstance(sink, str) or hasattr(sink, "__fspath__"):
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sink.write(text)
    return None


# ---------------------------------------------------------------------------
# vocabulary


def _ordered_symbols(counts: Counter, first_seen: dict[str, int]) -> list[str]:
    # descending frequency, ties broken by first occurrence in the corpus
    return sorted(counts, key=lambda s: (-counts[s], first_seen[s]))


class Vocabulary:
    """Frequency-filtered symbol/index maps for words, lemmas, POS, characters, labels.

    Words and lemmas below the frequency threshold map to the unknown index;
    POS, character, and label inventories are unfiltered. Index 0 is the
    unknown symbol and index 1 the learned drop replacement for every map
    except labels, which form a dense classifier range 0..c-1 (the reserved
    top label ``<TOP>`` is an ordinary member whenever the corpus has tops).
    """

    def __init__(self, words, lemmas, pos, chars, labels, threshold: int = 7):
        self.threshold = threshold
        self.words = list(words)
        self.lemmas = list(lemmas)
        self.pos = list(pos)
        self.chars = list(chars)
        self.labels = list(labels)
        self._word_idx = {s: i + len(_SPECIAL_TOKENS) for i, s in enumerate(self.words)}
        self._lemma_idx = {s: i + len(_SPECIAL_TOKENS) for i, s in enumerate(self.lemmas)}
        self._pos_idx = {s: i + len(_SPECIAL_TOKENS) for i, s in enumerate(self.pos)}
        self._char_idx = {s: i + len(_CHAR_SPECIALS) for i, s in enumerate(self.chars)}
        self._label_idx = {s: i for i, s in enumerate(self.labels)}

    # sizes include the reserved rows
    @property
    def n_words(self) -> int:
        return len(self.words) + len(_SPECIAL_TOKENS)

    @property
    def n_lemmas(self) -> int:
        return len(self.lemmas) + len(_SPECIAL_TOKENS)

    @property
    def n_pos(self) -> int:
        return len(self.pos) + len(_SPECIAL_TOKENS)

    @property
    def n_chars(self) -> int:
        return len(self.chars) + len(_CHAR_SPECIALS)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def word_id(self, form: str) -> int:
        return self._word_idx.get(form, UNK)

    def lemma_id(self, lemma: str) -> int:
        return self._lemma_idx.get(lemma, UNK)

    def pos_id(self, tag: str) -> int:
        return self._pos_idx.get(tag, UNK)

    def char_ids(self, form: str) -> list[int]:
        return [self._char_idx.get(ch, UNK) for ch in form]

    def label_id(self, label: str) -> int | None:
        """Dense class index, or None for labels unseen in training."""
        return self._label_idx.get(label)

    def label_name(self, idx: int) -> str:
        return self.labels[idx]

    @property
    def top_label_id(self) -> int | None:
        return self._label_idx.get(TOP_LABEL)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "words": self.words,
            "lemmas": self.lemmas,
            "pos": self.pos,
            "chars": self.chars,
            "labels": self.labels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["words"], d["lemmas"], d["pos"], d["chars"], d["labels"], d["threshold"])

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.to_dict() == other.to_dict()


def build_vocab(train, threshold: int = 7) -> Vocabulary:
    """Frequency-filter words/lemmas at ``threshold``; keep POS/chars/labels unfiltered.

    Index assignment is deterministic: descending frequency, ties by first
    occurrence. Tops count as occurrences of the reserved ``<TOP>`` label so
    it lands in the label inventory whenever the corpus marks any top.
    """
    train = list(train)
    if not train:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = {key: Counter() for key in ("word", "lemma", "pos", "char", "label")}
    first = {key: {} for key in counts}

    def see(kind: str, symbol: str, position: int):
        counts[kind][symbol] += 1
        first[kind].setdefault(symbol, position)

    pos_counter = 0
    for g in train:
        for tok in g.tokens:
            see("word", tok.form, pos_counter)
            see("lemma", tok.lemma, pos_counter)
            see("pos", tok.pos, pos_counter)
            for ch in tok.form:
                see("char", ch, pos_counter)
            pos_counter += 1
        for head, dep, label in sorted(g.edges):
            if label == TOP_LABEL:
                raise ValueError(f"corpus uses the reserved label {TOP_LABEL!r}")
            see("label", label, pos_counter)
            pos_counter += 1
        for _t in sorted(g.tops):
            see("label", TOP_LABEL, pos_counter)
            pos_counter += 1

    words = [s for s in _ordered_symbols(counts["word"], first["word"]) if counts["word"][s] >= threshold]
    lemmas = [s for s in _ordered_symbols(counts["lemma"], first["lemma"]) if counts["lemma"][s] >= threshold]
    return Vocabulary(
        words=words,
        lemmas=lemmas,
        pos=_ordered_symbols(counts["pos"], first["pos"]),
        chars=_ordered_symbols(counts["char"], first["char"]),
        labels=_ordered_symbols(counts["label"], first["label"]),
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    graphs: list[SemanticGraph]
    token_count: int = field(init=False)

    def __post_init__(self):
        if not self.graphs:
            raise ValueError("batch must be non-empty")
        self.token_count = sum(len(g) for g in self.graphs)


def batch_by_tokens(graphs, budget: int = 3000, shuffle_seed: int | None = None) -> list[Batch]:
    """Greedy token-budget batching over length-bucketed, seed-shuffled sentences.

    The union of the returned batches is exactly the input corpus; a single
    sentence longer than the budget is an error.
    """
    graphs = list(graphs)
    for g in graphs:
        if len(g) > budget:
            raise ValueError(f"sentence of {len(g)} tokens exceeds the {budget}-token budget")
    order = list(range(len(graphs)))
    rng = np.random.default_rng(shuffle_seed)
    rng.shuffle(order)
    # stable sort by length keeps the shuffled order inside each bucket
    order.sort(key=lambda i: len(graphs[i]))
    batches: list[Batch] = []
    current: list[SemanticGraph] = []
    current_tokens = 0
    for i in order:
        n = len(graphs[i])
        if current and current_tokens + n > budget:
            batches.append(Batch(current))
            current, current_tokens = [], 0
        current.append(graphs[i])
        current_tokens += n
    if current:
        batches.append(Batch(current))
    rng.shuffle(batches)
    return batches


# ---------------------------------------------------------------------------
# bundled sample data


def bundled_corpus(name: str) -> list[SemanticGraph]:
    """Load one of the shipped .sdp samples (``figure_sample`` or ``synthetic_train``)."""
    ref = importlib.resources.files("sdparse.resources").joinpath(f"{name}.sdp")
    return read_sdp(ref.read_text(encoding="utf-8"))
