"""The factorized graph parser: embedding assembly, BiLSTM encoding, four
head/dep projections, a binary edge scorer and a label scorer over every
ordered word pair, plus decoding and the interpolated loss.

Top nodes ride on a virtual ROOT token at matrix position 0: ROOT is
prepended before encoding, can only act as a head, and its outgoing edges
carry the reserved ``<TOP>`` label. An edge is kept at decode time exactly
when its score is >= 0; each kept edge takes its highest-scoring label.

The unfactorized variant drops the edge scorer and classifies every pair
into the label set plus a ``null`` class meaning "no edge".
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .data import SemanticGraph, Vocabulary

NULL_LABEL = "null"  # unfactorized no-edge class; never part of the vocabulary


class ConfigError(ValueError):
    """Bad hyperparameter value or malformed config file."""


_CLASSIFIERS = ("biaffine", "bilinear")
_NONLINEARITIES = ("identity", "relu")


@dataclass
class ModelConfig:
    """Every hyperparameter of the final system plus the variation switches.

    Defaults reproduce the published configuration: biaffine classifiers, no
    nonlinearity in the projections, a diagonal tensor in the label
    classifier but not the edge classifier.
    """

    # hidden sizes
    word_dim: int = 100
    pos_dim: int = 100
    lemma_dim: int = 100
    char_dim: int = 100
    glove_raw_dim: int = 100
    glove_linear_dim: int = 125
    char_lstm_hidden: int = 400
    char_linear_dim: int = 100
    bilstm_hidden: int = 600
    bilstm_layers: int = 3
    head_dep_dim: int = 600
    # dropout rates (drop probability)
    embedding_dropout: float = 0.20
    char_lstm_ff_dropout: float = 0.33
    char_lstm_recur_dropout: float = 0.33
    char_linear_dropout: float = 0.33
    bilstm_ff_dropout: float = 0.45
    bilstm_recur_dropout: float = 0.25
    arc_dropout: float = 0.25
    label_dropout: float = 0.33
    # loss and optimizer
    interpolation: float = 0.025
    learning_rate: float = 1e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.95
    adam_eps: float = 1e-12  # unpublished; small so beta1=0 keeps updates gradient-like
    l2: float = 3e-9
    # input channels
    use_char: bool = False
    use_lemma: bool = False
    use_glove: bool = True
    # architecture variations
    factorized: bool = True
    edge_hidden: bool = True
    label_hidden: bool = True
    classifier: str = "biaffine"
    edge_diagonal: bool = False
    label_diagonal: bool = True
    nonlinearity: str = "identity"
    # training regime
    batch_tokens: int = 3000
    max_steps: int = 75000
    patience: int = 10000
    eval_interval: int = 100
    vocab_threshold: int = 7

    def __post_init__(self):
        if not 0.0 < self.interpolation < 1.0:
            raise ConfigError(f"interpolation must lie in (0, 1), got {self.interpolation}")
        for name in (
            "embedding_dropout", "char_lstm_ff_dropout", "char_lstm_recur_dropout",
            "char_linear_dropout", "bilstm_ff_dropout", "bilstm_recur_dropout",
            "arc_dropout", "label_dropout",
        ):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {rate}")
        if self.classifier not in _CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {_CLASSIFIERS}, got {self.classifier!r}")
        if self.nonlinearity not in _NONLINEARITIES:
            raise ConfigError(f"nonlinearity must be one of {_NONLINEARITIES}, got {self.nonlinearity!r}")
        for name in (
            "word_dim", "pos_dim", "lemma_dim", "char_dim", "glove_raw_dim", "glove_linear_dim",
            "char_lstm_hidden", "char_linear_dim", "bilstm_hidden", "bilstm_layers",
            "head_dep_dim", "batch_tokens", "max_steps", "eval_interval", "vocab_threshold",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.patience < 0:
            raise ConfigError("patience must be non-negative")

    @property
    def input_dim(self) -> int:
        dim = self.word_dim + self.pos_dim
        if self.use_glove:
            dim += self.glove_linear_dim
        if self.use_char:
            dim += self.char_linear_dim
        if self.use_lemma:
            dim += self.lemma_dim
        return dim

    def replaced(self, **changes) -> "ModelConfig":
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    # ---- flat key=value text form ----

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def to_file(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {line_no}: expected key = value, got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
        return cls().replaced(**parse_config_values(values))

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def parse_config_values(values: dict[str, str]) -> dict:
    """Convert raw string values to the field types of ModelConfig."""
    types = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
    out = {}
    for key, val in values.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        kind = types[key]
        if kind == "bool" or kind is bool:
            low = str(val).strip().lower()
            if low in ("true", "1", "yes"):
                out[key] = True
            elif low in ("false", "0", "no"):
                out[key] = False
            else:
                raise ConfigError(f"config key {key!r} expects a boolean, got {val!r}")
        elif kind == "int" or kind is int:
            try:
                out[key] = int(str(val).strip())
            except ValueError:
                raise ConfigError(f"config key {key!r} expects an integer, got {val!r}") from None
        elif kind == "float" or kind is float:
            try:
                out[key] = float(str(val).strip())
            except ValueError:
                raise ConfigError(f"config key {key!r} expects a number, got {val!r}") from None
        else:
            out[key] = str(val).strip()
    return out


# ---------------------------------------------------------------------------
# score container


@dataclass
class ScoreSet:
    """Per-sentence scores: edge matrix and label tensor, both head-major.

    ``edge_scores[j][i]`` scores head j -> dependent i with matrix position 0
    standing for the virtual ROOT; ``label_scores[j][i][k]`` scores label k
    for the same pair. In the unfactorized variant ``edge_scores`` is None
    and the label tensor's last class is the implicit null (no edge) label.
    """

    sentence: SemanticGraph
    label_scores: Tensor
    edge_scores: Tensor | None = None
    decoded: SemanticGraph | None = None

    @property
    def n_tokens(self) -> int:
        return len(self.sentence)


class Parser:
    """Parameter bundle and forward passes for one parser instance."""

    def __init__(
        self,
        vocab: Vocabulary,
        config: ModelConfig,
        seed: int = 0,
        pretrained: layers.PretrainedEmbeddings | None = None,
    ):
        self.vocab = vocab
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5D9]))
        c = config

        self.word_table = layers.EmbeddingTable(
            layers.embedding_init(rng, vocab.n_words, c.word_dim, name="embed.word")
        )
        self.pos_table = layers.EmbeddingTable(
            layers.embedding_init(rng, vocab.n_pos, c.pos_dim, name="embed.pos")
        )
        self.lemma_table = (
            layers.EmbeddingTable(layers.embedding_init(rng, vocab.n_lemmas, c.lemma_dim, name="embed.lemma"))
            if c.use_lemma
            else None
        )
        if c.use_glove:
            if pretrained is None:
                pretrained = layers.PretrainedEmbeddings.random(vocab.words, c.glove_raw_dim, rng)
            if pretrained.dim != c.glove_raw_dim:
                raise ConfigError(
                    f"pretrained vectors are {pretrained.dim}-dimensional, config says {c.glove_raw_dim}"
                )
            self.glove = pretrained
            self.glove_linear = layers.FnnParams.create(rng, pretrained.dim, c.glove_linear_dim, "glove.linear")
        else:
            self.glove = None
            self.glove_linear = None
        if c.use_char:
            self.char = layers.CharEncoderParams.create(
                rng, vocab.n_chars, c.char_dim, c.char_lstm_hidden, c.char_linear_dim,
                pad_id=2, prefix="char",
            )
            self.char_drop = layers.zeros((1, c.char_linear_dim), name="char.drop")
        else:
            self.char = None
            self.char_drop = None

        self.root = Tensor(rng.normal(0, 1.0 / np.sqrt(c.input_dim), (1, c.input_dim)),
                           requires_grad=True, name="root")
        self.bilstm_layers = []
        din = c.input_dim
        for i in range(c.bilstm_layers):
            self.bilstm_layers.append(layers.BiLstmLayer.create(rng, din, c.bilstm_hidden, f"bilstm.l{i}"))
            din = 2 * c.bilstm_hidden
        r_dim = 2 * c.bilstm_hidden

        self.n_labels = vocab.n_labels + (0 if c.factorized else 1)
        affine = c.classifier == "biaffine"
        edge_d = c.head_dep_dim if c.edge_hidden else r_dim
        label_d = c.head_dep_dim if c.label_hidden else r_dim
        if c.factorized:
            if c.edge_hidden:
                self.edge_head_fnn = layers.FnnParams.create(rng, r_dim, c.head_dep_dim, "fnn.edge_head")
                self.edge_dep_fnn = layers.FnnParams.create(rng, r_dim, c.head_dep_dim, "fnn.edge_dep")
            else:
                self.edge_head_fnn = self.edge_dep_fnn = None
            self.edge_scorer = layers.BiaffineParams.create(
                rng, edge_d, 1, diagonal=c.edge_diagonal, include_affine=affine, prefix="edge"
            )
        else:
            self.edge_head_fnn = self.edge_dep_fnn = None
            self.edge_scorer = None
        if c.label_hidden:
            self.label_head_fnn = layers.FnnParams.create(rng, r_dim, c.head_dep_dim, "fnn.label_head")
            self.label_dep_fnn = layers.FnnParams.create(rng, r_dim, c.head_dep_dim, "fnn.label_dep")
        else:
            self.label_head_fnn = self.label_dep_fnn = None
        self.label_scorer = layers.BiaffineParams.create(
            rng, label_d, self.n_labels, diagonal=c.label_diagonal, include_affine=affine, prefix="label"
        )

    # ---- parameter bookkeeping ----

    def named_tensors(self) -> dict[str, Tensor]:
        """All model tensors (including frozen ones) keyed by unique name."""
        out: dict[str, Tensor] = {}

        def put(t: Tensor | None):
            if t is None:
                return
            if t.name is None or t.name in out:
                raise ValueError(f"tensor name missing or duplicated: {t.name!r}")
            out[t.name] = t

        put(self.word_table.table)
        put(self.pos_table.table)
        if self.lemma_table is not None:
            put(self.lemma_table.table)
        if self.glove is not None:
            put(self.glove.table.table)
            put(self.glove.table.special)
            put(self.glove_linear.w)
            put(self.glove_linear.b)
        if self.char is not None:
            for t in self.char.parameters():
                put(t)
            put(self.char_drop)
        put(self.root)
        for layer in self.bilstm_layers:
            for t in layer.parameters():
                put(t)
        for fnn in (self.edge_head_fnn, self.edge_dep_fnn, self.label_head_fnn, self.label_dep_fnn):
            if fnn is not None:
                put(fnn.w)
                put(fnn.b)
        for scorer in (self.edge_scorer, self.label_scorer):
            if scorer is not None:
                for t in scorer.parameters():
                    put(t)
        return out

    def trainable_parameters(self) -> list[Tensor]:
        return [t for t in self.named_tensors().values() if t.requires_grad]

    def load_weights(self, tensors: dict[str, np.ndarray]) -> None:
        named = self.named_tensors()
        missing = sorted(set(named) - set(tensors))
        extra = sorted(set(tensors) - set(named))
        if missing or extra:
            raise CheckpointError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, t in named.items():
            if tensors[name].shape != t.data.shape:
                raise CheckpointError(
                    f"checkpoint tensor {name!r} has shape {tensors[name].shape}, model needs {t.data.shape}"
                )
            t.data[...] = tensors[name]

    # ---- forward passes ----

    def embed_sequence(self, sentence: SemanticGraph, training: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
        """Concatenate the enabled embedding channels for every token.

        At training time one Bernoulli drop decision per token is shared by
        the word-group channels (word form, pretrained, character) while POS
        and lemma draw their own; dropped channels read their learned drop
        rows. Unknowns were already mapped by the vocabulary.
        """
        c = self.config
        vocab = self.vocab
        n = len(sentence)
        forms = sentence.forms
        if training and c.embedding_dropout > 0:
            if rng is None:
                raise ValueError("training-mode embedding dropout needs a random generator")
            rate = c.embedding_dropout
            word_group = rng.random(n) < rate
            pos_drop = rng.random(n) < rate
            lemma_drop = (rng.random(n) < rate) if c.use_lemma else None
        else:
            word_group = pos_drop = np.zeros(n, dtype=bool)
            lemma_drop = np.zeros(n, dtype=bool)

        channels = [layers.embed(self.word_table, [vocab.word_id(f) for f in forms], word_group)]
        if c.use_glove:
            glove_rows = layers.embed(self.glove.table, self.glove.ids(forms), word_group)
            channels.append(layers.fnn_head(glove_rows, self.glove_linear))
        if c.use_char:
            enc = layers.char_encode(
                [vocab.char_ids(f) for f in forms], self.char,
                ff_drop=c.char_lstm_ff_dropout, recur_drop=c.char_lstm_recur_dropout,
                linear_drop=c.char_linear_dropout, training=training, rng=rng,
            )
            if word_group.any():
                keep = Tensor((~word_group).astype(np.float64)[:, None])
                dropped = Tensor(word_group.astype(np.float64)[:, None])
                enc = ad.add(ad.mul(enc, keep), ad.matmul(dropped, self.char_drop))
            channels.append(enc)
        channels.append(layers.embed(self.pos_table, [vocab.pos_id(t.pos) for t in sentence.tokens], pos_drop))
        if c.use_lemma:
            channels.append(
                layers.embed(self.lemma_table, [vocab.lemma_id(t.lemma) for t in sentence.tokens], lemma_drop)
            )
        return ad.concat(channels, axis=1) if len(channels) > 1 else channels[0]

    def encode(self, x: Tensor, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        """Prepend the learned ROOT row and run the stacked BiLSTM."""
        c = self.config
        if x.shape[0] < 1:
            raise ad.DimensionError("cannot encode an empty sentence")
        with_root = ad.concat([self.root, x], axis=0)
        return layers.bilstm(
            with_root, self.bilstm_layers,
            ff_drop=c.bilstm_ff_dropout, recur_drop=c.bilstm_recur_dropout,
            training=training, rng=rng,
        )

    def _project(self, r: Tensor, fnn, rate: float, training: bool, rng) -> Tensor:
        out = layers.fnn_head(r, fnn, self.config.nonlinearity) if fnn is not None else r
        if training and rate > 0:
            out = ad.mul(out, layers.dropout_mask(rng, out.shape, rate))
        return out

    def score(self, r: Tensor, sentence: SemanticGraph, training: bool = False,
              rng: np.random.Generator | None = None) -> ScoreSet:
        """Head/dep projections feeding the edge scorer and the labeler."""
        c = self.config
        if training and (c.arc_dropout > 0 or c.label_dropout > 0) and rng is None:
            raise ValueError("training-mode projection dropout needs a random generator")
        n1 = r.shape[0]
        scorer = layers.biaffine  # the bilinear variant simply has no affine block
        label_head = self._project(r, self.label_head_fnn, c.label_dropout, training, rng)
        label_dep = self._project(r, self.label_dep_fnn, c.label_dropout, training, rng)
        label_dh = scorer(label_dep, label_head, self.label_scorer)  # (dep, head, c)
        label_scores = ad.swap01(label_dh)  # (head, dep, c)
        if not c.factorized:
            return ScoreSet(sentence=sentence, label_scores=label_scores, edge_scores=None)
        edge_head = self._project(r, self.edge_head_fnn, c.arc_dropout, training, rng)
        edge_dep = self._project(r, self.edge_dep_fnn, c.arc_dropout, training, rng)
        edge_dh = scorer(edge_dep, edge_head, self.edge_scorer)  # (dep, head, 1)
        edge_scores = ad.swap01(ad.reshape(edge_dh, (n1, n1)))
        return ScoreSet(sentence=sentence, label_scores=label_scores, edge_scores=edge_scores)

    def forward(self, sentence: SemanticGraph, training: bool = False,
                rng: np.random.Generator | None = None) -> ScoreSet:
        x = self.embed_sequence(sentence, training, rng)
        r = self.encode(x, training, rng)
        return self.score(r, sentence, training, rng)

    # ---- decoding ----

    def decode(self, scores: ScoreSet) -> SemanticGraph:
        """Keep edges scoring >= 0 (argmax != null when unfactorized), label
        each kept edge by argmax with ties to the lowest index, and read tops
        off the ROOT row (a kept ROOT edge marks a top only when its best
        label is the reserved top label). Self-loops and edges into ROOT are
        never emitted.
        """
        n1 = len(scores.sentence) + 1
        lab = scores.label_scores.data
        best = lab.argmax(axis=2)  # first maximum: lowest label index wins ties
        top_id = self.vocab.top_label_id
        edges = set()
        tops = set()
        if self.config.factorized:
            kept = scores.edge_scores.data >= 0.0
        else:
            kept = best != self.vocab.n_labels  # null class is the extra last index
        for j in range(n1):
            for i in range(1, n1):
                if i == j or not kept[j, i]:
                    continue
                k = int(best[j, i])
                if j == 0:
                    if k == top_id:
                        tops.add(i)
                    continue
                edges.add((j, i, self.vocab.label_name(k)))
        decoded = scores.sentence.with_edges(edges, tops)
        scores.decoded = decoded
        return decoded

    def parse(self, sentence: SemanticGraph) -> SemanticGraph:
        """Inference-mode end-to-end parse of one sentence."""
        return self.decode(self.forward(sentence, training=False))

    # ---- loss ----

    def _gold_arrays(self, sentence: SemanticGraph):
        n1 = len(sentence) + 1
        gold_edge = np.zeros((n1, n1))
        gold_label = np.zeros((n1, n1), dtype=np.int64)
        label_known = np.zeros((n1, n1), dtype=bool)
        for head, dep, label in sentence.edges:
            gold_edge[head, dep] = 1.0
            k = self.vocab.label_id(label)
            if k is not None:  # labels unseen in training cannot supervise the labeler
                gold_label[head, dep] = k
                label_known[head, dep] = True
        top_id = self.vocab.top_label_id
        for t in sentence.tops:
            gold_edge[0, t] = 1.0
            if top_id is not None:
                gold_label[0, t] = top_id
                label_known[0, t] = True
        cell_mask = np.ones((n1, n1), dtype=bool)
        cell_mask[:, 0] = False  # ROOT never a dependent; self-loops stay as negatives
        return gold_edge, gold_label, label_known, cell_mask

    def loss_parts(self, scores: ScoreSet, gold: SemanticGraph):
        """Per-sentence loss terms with their cell counts.

        Returns (edge_loss, edge_cells, label_loss, label_cells); the edge
        term is None in the unfactorized variant. Label error reaches the
        labeler only through gold-edge cells — every other cell is masked to
        exactly zero loss and zero gradient.
        """
        n1 = len(gold) + 1
        gold_edge, gold_label, label_known, cell_mask = self._gold_arrays(gold)
        flat_logits = ad.reshape(scores.label_scores, (n1 * n1, self.n_labels))
        if self.config.factorized:
            edge_loss = ad.sigmoid_xent(scores.edge_scores, gold_edge, cell_mask)
            label_mask = ((gold_edge > 0) & label_known & cell_mask).ravel()
            label_loss = ad.softmax_xent(flat_logits, gold_label.ravel(), label_mask)
            return edge_loss, int(cell_mask.sum()), label_loss, int(label_mask.sum())
        null_id = self.vocab.n_labels
        gold_cls = np.where(gold_edge > 0, gold_label, null_id).ravel()
        known = (label_known | (gold_edge == 0)) & cell_mask
        label_loss = ad.softmax_xent(flat_logits, gold_cls, known.ravel())
        return None, 0, label_loss, int(known.sum())

    def loss(self, scores: ScoreSet, gold: SemanticGraph, lam: float | None = None) -> Tensor:
        """Interpolated sentence loss: lam * label + (1 - lam) * edge.

        The unfactorized variant has a single labeler term, so ``lam`` is
        ignored there.
        """
        lam = self.config.interpolation if lam is None else float(lam)
        if not 0.0 < lam < 1.0:
            raise ConfigError(f"interpolation must lie in (0, 1), got {lam}")
        edge_loss, _, label_loss, _ = self.loss_parts(scores, gold)
        if edge_loss is None:
            return label_loss
        return ad.add(ad.scale(label_loss, lam), ad.scale(edge_loss, 1.0 - lam))


# ---------------------------------------------------------------------------
# model directory I/O


def save_model(parser: Parser, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tensors(out / "model.sdpm", {k: t.data for k, t in parser.named_tensors().items()})
    parser.config.to_file(out / "config.txt")
    meta = {"vocab": parser.vocab.to_dict()}
    if parser.glove is not None:
        ordered = sorted(parser.glove.index, key=parser.glove.index.get)
        meta["glove_tokens"] = ordered
    (out / "vocab.json").write_text(json.dumps(meta, ensure_ascii=False, indent=0), encoding="utf-8")


def load_model(model_dir) -> Parser:
    d = Path(model_dir)
    config = ModelConfig.from_file(d / "config.txt")
    meta = json.loads((d / "vocab.json").read_text(encoding="utf-8"))
    vocab = Vocabulary.from_dict(meta["vocab"])
    pretrained = None
    if config.use_glove:
        tokens = meta.get("glove_tokens")
        if tokens is None:
            raise CheckpointError(f"{d}: config enables the pretrained channel but vocab.json has no glove_tokens")
        index = {t: i + 2 for i, t in enumerate(tokens)}
        matrix = np.zeros((len(tokens), config.glove_raw_dim))  # overwritten from the checkpoint
        pretrained = layers.PretrainedEmbeddings(index, matrix, np.random.default_rng(0))
    parser = Parser(vocab, config, seed=0, pretrained=pretrained)
    parser.load_weights(load_tensors(d / "model.sdpm"))
    return parser
