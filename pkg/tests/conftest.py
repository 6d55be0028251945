"""Shared helpers: desk-sized model configurations, corpus generators, and
the independent brute-force oracles used by module and acceptance tests."""

import itertools

import numpy as np

from sdparse.data import SemanticGraph, TOP_LABEL, Token, build_vocab
from sdparse.model import ModelConfig, Parser

# small but structurally complete dims for fast tests
DESK = dict(
    word_dim=12,
    pos_dim=6,
    lemma_dim=6,
    char_dim=6,
    glove_raw_dim=8,
    glove_linear_dim=8,
    char_lstm_hidden=10,
    char_linear_dim=8,
    bilstm_hidden=20,
    bilstm_layers=1,
    head_dep_dim=12,
)


def desk_config(**overrides) -> ModelConfig:
    return ModelConfig(**{**DESK, **overrides})


def quiet_config(**overrides) -> ModelConfig:
    """Desk sizes with all dropout off: fastest deterministic convergence."""
    rates = dict(
        embedding_dropout=0.0,
        char_lstm_ff_dropout=0.0,
        char_lstm_recur_dropout=0.0,
        char_linear_dropout=0.0,
        bilstm_ff_dropout=0.0,
        bilstm_recur_dropout=0.0,
        arc_dropout=0.0,
        label_dropout=0.0,
    )
    return ModelConfig(**{**DESK, **rates, **overrides})


# ---------------------------------------------------------------------------
# random corpus generators


def random_valid_graph(rng: np.random.Generator, max_n: int = 7, labels=("ARG1", "ARG2", "BV", "MOD")):
    n = int(rng.integers(1, max_n + 1))
    tokens = tuple(
        Token(i + 1, f"w{rng.integers(0, 20)}", f"l{rng.integers(0, 9)}", f"P{rng.integers(0, 4)}")
        for i in range(n)
    )
    edges = set()
    for h in range(1, n + 1):
        for d in range(1, n + 1):
            if h != d and rng.random() < 0.25:
                edges.add((h, d, labels[rng.integers(0, len(labels))]))
    tops = {i for i in range(1, n + 1) if rng.random() < 0.2}
    return SemanticGraph(tokens, frozenset(edges), frozenset(tops))


def token_only_graph(rng: np.random.Generator, n: int):
    return SemanticGraph(tuple(Token(i + 1, f"w{rng.integers(0, 12)}") for i in range(n)))


# ---------------------------------------------------------------------------
# independent oracles (kept brute-force on purpose)


def oracle_decode(edge, label, top_id, label_names, factorized=True, n_labels=None):
    """Per-cell thresholding + argmax decoder: triple loop, no vectorization."""
    n1 = label.shape[0]
    edges, tops = set(), set()
    for j in range(n1):
        for i in range(n1):
            if i == 0 or i == j:
                continue
            best, best_k = max((v, -k) for k, v in enumerate(label[j, i]))
            k = -best_k
            keep = edge[j, i] >= 0.0 if factorized else k != n_labels
            if not keep:
                continue
            if j == 0:
                if k == top_id:
                    tops.add(i)
            else:
                edges.add((j, i, label_names[k]))
    return edges, tops


def oracle_score(gold, pred, include_tops=True):
    """Set-intersection corpus scorer; returns (LP, LR, LF, UP, UR, UF, EM)."""

    def edge_set(g):
        s = set(g.edges)
        if include_tops:
            s |= {(0, t, TOP_LABEL) for t in g.tops}
        return s

    ltp = lfp = lfn = utp = ufp = ufn = exact = 0
    for g, p in zip(gold, pred):
        ge, pe = edge_set(g), edge_set(p)
        ltp += len(ge & pe)
        lfp += len(pe - ge)
        lfn += len(ge - pe)
        gu = {(h, d) for h, d, _ in ge}
        pu = {(h, d) for h, d, _ in pe}
        utp += len(gu & pu)
        ufp += len(pu - gu)
        ufn += len(gu - pu)
        exact += ge == pe

    def ratio(a, b):
        return a / b if b else 0.0

    lp, lr = ratio(ltp, ltp + lfp), ratio(ltp, ltp + lfn)
    up, ur = ratio(utp, utp + ufp), ratio(utp, utp + ufn)
    lf = 2 * lp * lr / (lp + lr) if lp + lr else 0.0
    uf = 2 * up * ur / (up + ur) if up + ur else 0.0
    return lp, lr, lf, up, ur, uf, ratio(exact, len(list(gold)))


def oracle_rank_sum_two_sided(a, b):
    """Exhaustive enumeration over rank assignments with naive midranks."""
    pooled = list(a) + list(b)
    srt = sorted(pooled)
    ranks = []
    for v in pooled:
        positions = [i + 1 for i, s in enumerate(srt) if s == v]
        ranks.append(sum(positions) / len(positions))
    n_a = len(a)
    w_obs = sum(ranks[:n_a])
    lo = hi = total = 0
    for combo in itertools.combinations(range(len(pooled)), n_a):
        w = sum(ranks[i] for i in combo)
        total += 1
        if w <= w_obs + 1e-12:
            lo += 1
        if w >= w_obs - 1e-12:
            hi += 1
    return w_obs, min(1.0, 2.0 * min(lo / total, hi / total))
