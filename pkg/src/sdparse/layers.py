"""Neural building blocks: embedding lookups with learned drop rows, a
character-window LSTM word encoder, stacked bidirectional LSTMs with
same-mask (variational) dropout, feedforward head/dep projections, and
bilinear/biaffine classifiers.

Everything here is a pure function of parameter tensors, inputs, and an
explicit numpy ``Generator`` for dropout masks, so concurrent evaluation on
disjoint tapes is safe. Dropout is inverted (activations scaled by 1/keep at
training time), which keeps inference a plain forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor


# ---------------------------------------------------------------------------
# initialisation helpers


def glorot(rng: np.random.Generator, rows: int, cols: int, name: str | None = None) -> Tensor:
    limit = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-limit, limit, (rows, cols)), requires_grad=True, name=name)


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def embedding_init(rng: np.random.Generator, rows: int, dim: int, name: str | None = None) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, (rows, dim)) / np.sqrt(dim), requires_grad=True, name=name)


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> Tensor:
    """Inverted-dropout mask: Bernoulli(keep)/keep, as a constant tensor."""
    if rate <= 0.0:
        return Tensor(np.ones(shape))
    keep = 1.0 - rate
    return Tensor((rng.random(shape) < keep).astype(np.float64) / keep)


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    """Row-lookup table with reserved unknown and learned drop rows.

    A frozen table (pretrained vectors) receives no gradient; its unknown and
    drop rows then live in a small trainable ``special`` block so they can
    still train. For trainable tables the special rows are ordinary rows of
    ``table`` and ``special`` is None.
    """

    table: Tensor
    unk_row_index: int = 0
    drop_row_index: int = 1
    frozen: bool = False
    special: Tensor | None = None

    def __post_init__(self):
        v = self.table.shape[0]
        if not (0 <= self.unk_row_index < v and 0 <= self.drop_row_index < v):
            raise ValueError("unk/drop row indices must address table rows")
        if self.frozen:
            if self.special is None or self.special.shape != (2, self.dim):
                raise ValueError("a frozen table needs a 2-row trainable special block")
            if self.table.requires_grad:
                raise ValueError("frozen table must not require gradients")

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def rows(self) -> int:
        return self.table.shape[0]

    def parameters(self) -> list[Tensor]:
        if self.frozen:
            return [self.special]
        return [self.table]


def embed(table: EmbeddingTable, ids, drop_mask) -> Tensor:
    """Gather rows for ``ids``; positions flagged in ``drop_mask`` read the drop row."""
    ids = np.asarray(ids, dtype=np.int64)
    drop = np.asarray(drop_mask, dtype=bool)
    if ids.shape != drop.shape or ids.ndim != 1:
        raise DimensionError("ids and drop_mask must be equal-length flat sequences")
    if ids.size and (ids.min() < 0 or ids.max() >= table.rows):
        raise IndexError(f"embedding id out of range for table with {table.rows} rows")
    effective = np.where(drop, table.drop_row_index, ids)
    if not table.frozen:
        return ad.gather_rows(table.table, effective)
    # frozen table: route unk/drop rows through the trainable special block.
    # The blend masks both values and gradients of the unused side.
    is_special = effective <= 1  # unk=0, drop=1 by construction
    main = ad.gather_rows(table.table, np.where(is_special, 0, effective))
    spec = ad.gather_rows(table.special, np.where(is_special, effective, 0))
    sel = Tensor(is_special.astype(np.float64)[:, None])
    inv = Tensor((~is_special).astype(np.float64)[:, None])
    return ad.add(ad.mul(main, inv), ad.mul(spec, sel))


def load_pretrained_text(path) -> tuple[dict[str, int], np.ndarray]:
    """Parse the one-token-per-line text format: token then d floats.

    Returns (token -> row map, matrix); rows start at index 2 because rows 0
    and 1 are reserved for the trainable unknown and drop vectors.
    """
    vectors: list[np.ndarray] = []
    index: dict[str, int] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
                if dim == 0:
                    raise ValueError(f"{path}:{line_no}: no vector components")
            elif len(vals) != dim:
                raise ValueError(f"{path}:{line_no}: expected {dim} components, got {len(vals)}")
            if token in index:
                continue  # first occurrence wins
            index[token] = len(vectors) + 2
            vectors.append(np.array(vals, dtype=np.float64))
    if not vectors:
        raise ValueError(f"{path}: empty embedding file")
    return index, np.vstack(vectors)


class PretrainedEmbeddings:
    """Frozen pretrained vectors with a trainable unknown row.

    Lookup tries the exact form, then its lowercase; anything else maps to
    the unknown row. When no file is available a seeded random table over the
    supplied forms stands in, so the frozen-channel path always exists.
    """

    def __init__(self, index: dict[str, int], matrix: np.ndarray, rng: np.random.Generator):
        dim = matrix.shape[1]
        if matrix.shape[0] == 0:  # no known tokens: keep one unused row
            matrix = np.zeros((1, dim))
        pad = np.zeros((2, dim))  # rows 0/1 shadowed by the special block
        self.table = EmbeddingTable(
            table=Tensor(np.vstack([pad, matrix]), name="glove.table"),
            frozen=True,
            special=embedding_init(rng, 2, dim, name="glove.special"),
        )
        self.index = index

    @classmethod
    def from_file(cls, path, rng: np.random.Generator) -> "PretrainedEmbeddings":
        index, matrix = load_pretrained_text(path)
        return cls(index, matrix, rng)

    @classmethod
    def random(cls, forms, dim: int, rng: np.random.Generator) -> "PretrainedEmbeddings":
        forms = sorted(set(forms))
        index = {f: i + 2 for i, f in enumerate(forms)}
        matrix = rng.normal(0.0, 1.0, (len(forms), dim)) / np.sqrt(dim)
        return cls(index, matrix, rng)

    @property
    def dim(self) -> int:
        return self.table.dim

    def ids(self, forms) -> np.ndarray:
        out = []
        for f in forms:
            out.append(self.index.get(f) or self.index.get(f.lower()) or 0)
        return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    """Gate parameters for one direction; inputs are (din,) rows, state (hidden,).

    Weight layout: ``wx_*`` is din x hidden, ``wh_*`` is hidden x hidden,
    gates are input / forget / output / cell-candidate.
    """

    wx_i: Tensor
    wx_f: Tensor
    wx_o: Tensor
    wx_g: Tensor
    wh_i: Tensor
    wh_f: Tensor
    wh_o: Tensor
    wh_g: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_g: Tensor
    hidden: int
    direction: str = "fw"

    @classmethod
    def create(cls, rng, din: int, hidden: int, direction: str = "fw", prefix: str = "lstm"):
        def w(gate):
            return glorot(rng, din, hidden, name=f"{prefix}.wx.{gate}")

        def u(gate):
            return glorot(rng, hidden, hidden, name=f"{prefix}.wh.{gate}")

        def b(gate):
            return zeros((hidden,), name=f"{prefix}.b.{gate}")

        return cls(
            wx_i=w("i"), wx_f=w("f"), wx_o=w("o"), wx_g=w("g"),
            wh_i=u("i"), wh_f=u("f"), wh_o=u("o"), wh_g=u("g"),
            b_i=b("i"), b_f=b("f"), b_o=b("o"), b_g=b("g"),
            hidden=hidden, direction=direction,
        )

    def parameters(self) -> list[Tensor]:
        return [
            self.wx_i, self.wx_f, self.wx_o, self.wx_g,
            self.wh_i, self.wh_f, self.wh_o, self.wh_g,
            self.b_i, self.b_f, self.b_o, self.b_g,
        ]

    def fused(self) -> tuple[Tensor, Tensor, Tensor]:
        wx = ad.concat([self.wx_i, self.wx_f, self.wx_o, self.wx_g], axis=1)
        wh = ad.concat([self.wh_i, self.wh_f, self.wh_o, self.wh_g], axis=1)
        b = ad.concat([self.b_i, self.b_f, self.b_o, self.b_g], axis=0)
        return wx, wh, b


def lstm_sequence(
    x: Tensor,
    params: LstmParams,
    ff_mask: Tensor | None = None,
    recur_mask: Tensor | None = None,
) -> Tensor:
    """Run one LSTM direction over the rows of ``x``; returns all hidden states.

    ``ff_mask`` (1 x din) multiplies every input row and ``recur_mask``
    (1 x hidden) multiplies the previous hidden state at every timestep: the
    same-mask recurrent dropout scheme. Passing None skips the multiply.
    """
    n = x.shape[0]
    if n < 1:
        raise DimensionError("lstm_sequence needs at least one timestep")
    h = params.hidden
    if ff_mask is not None:
        x = ad.mul(x, ff_mask)
    wx, wh, b = params.fused()
    pre_x = ad.add(ad.matmul(x, wx), b)  # n x 4h, input projections for all steps
    h_t = Tensor(np.zeros((1, h)))
    c_t = Tensor(np.zeros((1, h)))
    outputs = []
    for t in range(n):
        h_in = ad.mul(h_t, recur_mask) if recur_mask is not None else h_t
        pre = ad.add(ad.slice_axis(pre_x, 0, t, t + 1), ad.matmul(h_in, wh))
        i_g = ad.sigmoid(ad.slice_axis(pre, 1, 0, h))
        f_g = ad.sigmoid(ad.slice_axis(pre, 1, h, 2 * h))
        o_g = ad.sigmoid(ad.slice_axis(pre, 1, 2 * h, 3 * h))
        g_g = ad.tanh(ad.slice_axis(pre, 1, 3 * h, 4 * h))
        c_t = ad.add(ad.mul(f_g, c_t), ad.mul(i_g, g_g))
        h_t = ad.mul(o_g, ad.tanh(c_t))
        outputs.append(h_t)
    return ad.concat(outputs, axis=0) if n > 1 else outputs[0]


@dataclass
class BiLstmLayer:
    fw: LstmParams
    bw: LstmParams

    @classmethod
    def create(cls, rng, din, hidden, prefix):
        return cls(
            fw=LstmParams.create(rng, din, hidden, "fw", f"{prefix}.fw"),
            bw=LstmParams.create(rng, din, hidden, "bw", f"{prefix}.bw"),
        )

    def parameters(self):
        return self.fw.parameters() + self.bw.parameters()


def bilstm(
    x: Tensor,
    layers: list[BiLstmLayer],
    ff_drop: float = 0.0,
    recur_drop: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Stacked bidirectional LSTM; each layer consumes the previous layer's
    concatenated forward+backward states and returns the top layer's.

    During training one feedforward mask and one recurrent mask are sampled
    per layer and direction and reused at every timestep.
    """
    if x.shape[0] < 1:
        raise DimensionError("bilstm needs a non-empty sequence")
    if training and (ff_drop > 0 or recur_drop > 0) and rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    out = x
    for layer in layers:
        din = out.shape[1]
        h = layer.fw.hidden
        if training:
            masks = [
                dropout_mask(rng, (1, din), ff_drop),
                dropout_mask(rng, (1, h), recur_drop),
                dropout_mask(rng, (1, din), ff_drop),
                dropout_mask(rng, (1, h), recur_drop),
            ]
        else:
            masks = [None, None, None, None]
        fw_states = lstm_sequence(out, layer.fw, masks[0], masks[1])
        bw_states = ad.flip_rows(lstm_sequence(ad.flip_rows(out), layer.bw, masks[2], masks[3]))
        out = ad.concat([fw_states, bw_states], axis=1)
    return out


# ---------------------------------------------------------------------------
# character-level word encoder


@dataclass
class CharEncoderParams:
    table: EmbeddingTable  # character embeddings
    lstm: LstmParams  # consumes concatenated 3-character windows
    linear_w: Tensor  # hidden -> output
    linear_b: Tensor
    pad_id: int  # boundary symbol for words shorter than 3 characters

    @classmethod
    def create(cls, rng, n_chars, char_dim, hidden, out_dim, pad_id, prefix="char"):
        return cls(
            table=EmbeddingTable(embedding_init(rng, n_chars, char_dim, name=f"{prefix}.table")),
            lstm=LstmParams.create(rng, 3 * char_dim, hidden, "fw", f"{prefix}.lstm"),
            linear_w=glorot(rng, hidden, out_dim, name=f"{prefix}.linear.w"),
            linear_b=zeros((out_dim,), name=f"{prefix}.linear.b"),
            pad_id=pad_id,
        )

    @property
    def out_dim(self):
        return self.linear_w.shape[1]

    def parameters(self):
        return self.table.parameters() + self.lstm.parameters() + [self.linear_w, self.linear_b]


def char_windows(char_ids: list[int], pad_id: int) -> list[tuple[int, int, int]]:
    """Sliding trigram windows over a word's characters, stride 1.

    Words shorter than three characters are padded with the boundary symbol
    so every word yields max(1, len - 2) windows.
    """
    if not char_ids:
        raise ValueError("char_windows needs at least one character")
    ids = list(char_ids)
    while len(ids) < 3:
        ids.append(pad_id)
    return [tuple(ids[i : i + 3]) for i in range(len(ids) - 2)]


def char_encode(
    words: list[list[int]],
    params: CharEncoderParams,
    ff_drop: float = 0.0,
    recur_drop: float = 0.0,
    linear_drop: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encode each word's character ids into one row: embed characters, run
    the window LSTM, linearly transform its end state.

    Returns an n x out_dim matrix for n words.
    """
    if not words:
        raise ValueError("char_encode needs at least one word")
    if training and (ff_drop > 0 or recur_drop > 0 or linear_drop > 0) and rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    dc = params.table.dim
    rows = []
    for char_ids in words:
        windows = char_windows(char_ids, params.pad_id)
        flat = [c for w in windows for c in w]
        emb = embed(params.table, flat, np.zeros(len(flat), dtype=bool))
        stacked = ad.reshape(emb, (len(windows), 3 * dc))
        if training:
            ff = dropout_mask(rng, (1, 3 * dc), ff_drop)
            rec = dropout_mask(rng, (1, params.lstm.hidden), recur_drop)
        else:
            ff = rec = None
        states = lstm_sequence(stacked, params.lstm, ff, rec)
        end = ad.slice_axis(states, 0, len(windows) - 1, len(windows))
        out = ad.add(ad.matmul(end, params.linear_w), params.linear_b)
        if training and linear_drop > 0:
            out = ad.mul(out, dropout_mask(rng, (1, params.out_dim), linear_drop))
        rows.append(out)
    return ad.concat(rows, axis=0) if len(rows) > 1 else rows[0]


# ---------------------------------------------------------------------------
# feedforward heads and biaffine classifiers


@dataclass
class FnnParams:
    w: Tensor  # din x dout
    b: Tensor

    @classmethod
    def create(cls, rng, din, dout, prefix):
        return cls(w=glorot(rng, din, dout, name=f"{prefix}.w"), b=zeros((dout,), name=f"{prefix}.b"))

    def parameters(self):
        return [self.w, self.b]


_NONLINEARITIES = {"identity": ad.identity, "relu": ad.relu}


def fnn_head(r: Tensor, params: FnnParams, nonlinearity: str = "identity") -> Tensor:
    """Single affine layer followed by the configured nonlinearity."""
    if nonlinearity not in _NONLINEARITIES:
        raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
    if r.shape[1] != params.w.shape[0]:
        raise DimensionError(f"fnn expects {params.w.shape[0]} input features, got {r.shape[1]}")
    return _NONLINEARITIES[nonlinearity](ad.add(ad.matmul(r, params.w), params.b))


@dataclass
class BiaffineParams:
    """Weights for score(x1, x2) = x1^T U x2 + W [x1; x2] + b.

    ``u`` is d x c x d, or c x d in diagonal form (each class's matrix is
    diagonal). ``w``/``b`` are only present when the affine term over the
    concatenated inputs is enabled (biaffine); without them this is the plain
    bilinear classifier.
    """

    u: Tensor
    w: Tensor | None
    b: Tensor | None
    diagonal: bool
    include_affine: bool
    n_classes: int

    @classmethod
    def create(cls, rng, d, n_classes, diagonal, include_affine, prefix, init_scale=1.0):
        if diagonal:
            u = Tensor(rng.normal(0, init_scale / np.sqrt(d), (n_classes, d)), requires_grad=True, name=f"{prefix}.u")
        else:
            u = Tensor(rng.normal(0, init_scale / d, (d, n_classes, d)), requires_grad=True, name=f"{prefix}.u")
        w = glorot(rng, n_classes, 2 * d, name=f"{prefix}.w") if include_affine else None
        b = zeros((n_classes,), name=f"{prefix}.b") if include_affine else None
        return cls(u=u, w=w, b=b, diagonal=diagonal, include_affine=include_affine, n_classes=n_classes)

    @property
    def d(self):
        return self.u.shape[-1]

    def parameters(self):
        out = [self.u]
        if self.include_affine:
            out.extend([self.w, self.b])
        return out


def biaffine(h_dep: Tensor, h_head: Tensor, params: BiaffineParams) -> Tensor:
    """Score every (dependent, head) pair for every class.

    Returns an n x n x c tensor with score[i, j, k] =
    h_dep[i]^T U[:, k, :] h_head[j] (+ affine term when enabled).
    """
    n, d = h_dep.shape
    if h_head.shape != (n, d) or d != params.d:
        raise DimensionError(
            f"biaffine got dep {h_dep.shape}, head {h_head.shape}, expected width {params.d}"
        )
    c = params.n_classes
    head_t = ad.swap01(h_head)  # d x n
    if params.include_affine:
        w_dep = ad.swap01(ad.slice_axis(params.w, 1, 0, d))  # d x c
        w_head = ad.swap01(ad.slice_axis(params.w, 1, d, 2 * d))
        a_dep = ad.matmul(h_dep, w_dep)  # n x c
        a_head = ad.matmul(h_head, w_head)
    per_class = []
    for k in range(c):
        if params.diagonal:
            u_k = ad.slice_axis(params.u, 0, k, k + 1)  # 1 x d
            s_k = ad.matmul(ad.mul(h_dep, u_k), head_t)
        else:
            u_k = ad.reshape(ad.slice_axis(params.u, 1, k, k + 1), (d, d))
            s_k = ad.matmul(ad.matmul(h_dep, u_k), head_t)
        if params.include_affine:
            s_k = ad.add(s_k, ad.slice_axis(a_dep, 1, k, k + 1))  # column: dep term
            s_k = ad.add(s_k, ad.swap01(ad.slice_axis(a_head, 1, k, k + 1)))  # row: head term
            s_k = ad.add(s_k, ad.slice_axis(params.b, 0, k, k + 1))
        per_class.append(ad.reshape(s_k, (n, n, 1)))
    return ad.concat(per_class, axis=2) if c > 1 else per_class[0]


def bilinear(h_dep: Tensor, h_head: Tensor, params: BiaffineParams) -> Tensor:
    """Bilinear scores: the biaffine form without its affine term."""
    if params.include_affine:
        raise ValueError("bilinear expects parameters without the affine block")
    return biaffine(h_dep, h_head, params)
