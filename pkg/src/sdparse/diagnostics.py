"""Finite-difference verification of every differentiable operation.

Each check builds a small scalar loss from random inputs in [-2, 2], runs the
tape backward pass, and compares against central finite differences (step
1e-5 in 64-bit floats). The suite covers the tensor core, the neural layers,
and the complete parser loss on a three-token sentence, and is shared by the
command-line ``gradcheck`` subcommand and the acceptance tests.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .data import SemanticGraph, Token, build_vocab
from .model import ModelConfig, Parser

TOLERANCE = 1e-4


def _u(rng, *shape):
    return rng.uniform(-2.0, 2.0, shape)


def core_op_checks(rng: np.random.Generator):
    """(name, builder, params) for every tensor-core operation."""
    checks = []

    def check(name, params, builder):
        checks.append((name, builder, params))

    a = Tensor(_u(rng, 3, 4), requires_grad=True)
    b = Tensor(_u(rng, 4, 2), requires_grad=True)
    check("matmul", [a, b], lambda: ad.sum_all(ad.tanh(ad.matmul(a, b))))

    c1 = Tensor(_u(rng, 2, 3), requires_grad=True)
    c2 = Tensor(_u(rng, 2, 2), requires_grad=True)
    check("concat", [c1, c2], lambda: ad.sum_all(ad.tanh(ad.concat([c1, c2], axis=1))))

    e1 = Tensor(_u(rng, 3, 3), requires_grad=True)
    e2 = Tensor(_u(rng, 3), requires_grad=True)
    check("add", [e1, e2], lambda: ad.sum_all(ad.tanh(ad.add(e1, e2))))
    check("multiply", [e1, e2], lambda: ad.sum_all(ad.tanh(ad.mul(e1, e2))))
    check("scale", [e1], lambda: ad.sum_all(ad.tanh(ad.scale(e1, -1.7))))

    s1 = Tensor(_u(rng, 3, 3), requires_grad=True)
    check("sigmoid", [s1], lambda: ad.sum_all(ad.sigmoid(s1)))
    check("tanh", [s1], lambda: ad.sum_all(ad.tanh(s1)))
    relu_in = _u(rng, 3, 3)
    relu_in = np.where(np.abs(relu_in) < 0.05, 0.3, relu_in)  # avoid the kink
    r1 = Tensor(relu_in, requires_grad=True)
    check("relu", [r1], lambda: ad.sum_all(ad.tanh(ad.relu(r1))))
    check("identity", [s1], lambda: ad.sum_all(ad.identity(s1)))

    sl = Tensor(_u(rng, 4, 5), requires_grad=True)
    check("slice_axis", [sl], lambda: ad.sum_all(ad.tanh(ad.slice_axis(sl, 1, 1, 4))))
    gt = Tensor(_u(rng, 5, 3), requires_grad=True)
    check("gather_rows", [gt], lambda: ad.sum_all(ad.tanh(ad.gather_rows(gt, [4, 0, 4, 2]))))
    rs = Tensor(_u(rng, 2, 6), requires_grad=True)
    check("reshape", [rs], lambda: ad.sum_all(ad.tanh(ad.reshape(rs, (3, 4)))))
    sw = Tensor(_u(rng, 3, 4), requires_grad=True)
    check("swap01", [sw], lambda: ad.sum_all(ad.tanh(ad.swap01(sw))))
    fl = Tensor(_u(rng, 4, 3), requires_grad=True)
    check("flip_rows", [fl], lambda: ad.sum_all(ad.tanh(ad.flip_rows(fl))))
    check("sum_all", [s1], lambda: ad.sum_all(s1))

    sm = Tensor(_u(rng, 4, 3), requires_grad=True)
    sm_gold = rng.integers(0, 3, 4)
    sm_mask = np.array([True, False, True, True])
    check("softmax_xent", [sm], lambda: ad.softmax_xent(sm, sm_gold, sm_mask))
    sg = Tensor(_u(rng, 3, 4), requires_grad=True)
    sg_gold = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
    sg_mask = rng.uniform(size=(3, 4)) > 0.3
    check("sigmoid_xent", [sg], lambda: ad.sigmoid_xent(sg, sg_gold, sg_mask))
    return checks


def layer_checks(rng: np.random.Generator):
    """(name, builder, params) for every neural-layer operation."""
    checks = []

    table = layers.EmbeddingTable(layers.embedding_init(rng, 6, 4, name="t"))
    ids = [2, 5, 2, 0]
    mask = [False, True, False, False]
    checks.append(
        ("embed", lambda: ad.sum_all(ad.tanh(layers.embed(table, ids, mask))), [table.table])
    )

    frozen = layers.EmbeddingTable(
        table=Tensor(rng.normal(size=(5, 3))),
        frozen=True,
        special=Tensor(rng.normal(size=(2, 3)), requires_grad=True),
    )
    checks.append(
        (
            "embed_frozen",
            lambda: ad.sum_all(ad.tanh(layers.embed(frozen, [0, 3, 4], [False, True, False]))),
            [frozen.special],
        )
    )

    char = layers.CharEncoderParams.create(rng, 6, 2, 3, 2, pad_id=2, prefix="c")
    words = [[3, 4], [4, 3, 5, 4]]
    checks.append(
        ("char_encode", lambda: ad.sum_all(ad.tanh(layers.char_encode(words, char))), char.parameters())
    )

    lstm = layers.LstmParams.create(rng, 3, 3, prefix="l")
    lx = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    ff = Tensor((rng.random((1, 3)) < 0.67).astype(float) / 0.67)
    rec = Tensor((rng.random((1, 3)) < 0.75).astype(float) / 0.75)
    checks.append(
        (
            "lstm_sequence(masked)",
            lambda: ad.sum_all(layers.lstm_sequence(lx, lstm, ff, rec)),
            lstm.parameters() + [lx],
        )
    )

    stack = [layers.BiLstmLayer.create(rng, 3, 2, "b0"), layers.BiLstmLayer.create(rng, 4, 2, "b1")]
    bx = Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True)
    stack_params = [p for layer in stack for p in layer.parameters()] + [bx]
    checks.append(
        ("bilstm", lambda: ad.sum_all(ad.tanh(layers.bilstm(bx, stack))), stack_params)
    )

    fnn = layers.FnnParams.create(rng, 4, 3, "f")
    fx = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    checks.append(
        ("fnn_head(identity)", lambda: ad.sum_all(ad.tanh(layers.fnn_head(fx, fnn))), fnn.parameters() + [fx])
    )
    rx = Tensor(np.where(np.abs(_u(rng, 3, 4)) < 0.05, 0.4, _u(rng, 3, 4)), requires_grad=True)
    checks.append(
        ("fnn_head(relu)", lambda: ad.sum_all(ad.tanh(layers.fnn_head(rx, fnn, "relu"))), fnn.parameters() + [rx])
    )

    for diagonal in (False, True):
        for affine in (True, False):
            p = layers.BiaffineParams.create(rng, 3, 2, diagonal, affine, prefix="s")
            dep = Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True)
            head = Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True)
            name = f"biaffine(diag={diagonal},affine={affine})"

            def builder(dep=dep, head=head, p=p):
                return ad.sum_all(ad.tanh(layers.biaffine(dep, head, p)))

            checks.append((name, builder, p.parameters() + [dep, head]))
    return checks


def end_to_end_check(rng: np.random.Generator):
    """Full parser loss on a three-token sentence, every parameter tensor."""

    def graph(words, edges, tops, sid):
        toks = tuple(Token(i + 1, w, w + "l", p) for i, (w, p) in enumerate(words))
        return SemanticGraph(toks, frozenset(edges), frozenset(tops), sent_id=sid)

    corpus = [
        graph([("ab", "N"), ("cd", "V"), ("ef", "N")], {(2, 1, "x"), (2, 3, "y")}, {2}, "1"),
        graph([("cd", "V"), ("ef", "N")], {(1, 2, "x")}, {1}, "2"),
    ]
    vocab = build_vocab(corpus, threshold=1)
    config = ModelConfig(
        word_dim=4, pos_dim=3, lemma_dim=3, char_dim=3, glove_raw_dim=4, glove_linear_dim=5,
        char_lstm_hidden=4, char_linear_dim=4, bilstm_hidden=5, bilstm_layers=1,
        head_dep_dim=6, use_char=True, use_lemma=True,
    )
    parser = Parser(vocab, config, seed=int(rng.integers(0, 2**31)))
    sentence = corpus[0]

    def builder():
        return parser.loss(parser.forward(sentence, training=False), sentence)

    return "end_to_end_loss(3 tokens)", builder, parser.trainable_parameters()


def run_gradient_suite(seed: int = 0) -> list[tuple[str, float]]:
    """Every check with its worst relative error, in a stable order."""
    rng = np.random.default_rng(seed)
    all_checks = core_op_checks(rng) + layer_checks(rng) + [end_to_end_check(rng)]
    results = []
    for name, builder, params in all_checks:
        results.append((name, ad.gradcheck(builder, params)))
    return results
