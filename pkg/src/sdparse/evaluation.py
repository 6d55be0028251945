"""Labeled/unlabeled precision, recall, and F1 over predicted vs gold edge
sets, micro-averaged across a corpus, plus exact-match rate, per-label
counts, and top-node precision/recall.

With ``include_tops`` (the default) top designations count as extra edges
from the virtual ROOT, labeled ``<TOP>``, in both the labeled and unlabeled
tallies — the same convention the parser uses to predict them. F1 is defined
as 0 whenever precision + recall is 0.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .data import SemanticGraph, TOP_LABEL


class AlignmentError(ValueError):
    """Gold and predicted corpora do not line up sentence for sentence."""


@dataclass
class LabelCount:
    gold: int = 0
    predicted: int = 0
    correct: int = 0


@dataclass
class EvalReport:
    labeled_precision: float
    labeled_recall: float
    labeled_f1: float
    unlabeled_precision: float
    unlabeled_recall: float
    unlabeled_f1: float
    exact_match: float
    top_precision: float
    top_recall: float
    per_label: dict[str, LabelCount] = field(default_factory=dict)
    sentences: int = 0

    def key_values(self) -> str:
        """Machine-readable summary lines."""
        pairs = [
            ("LP", self.labeled_precision),
            ("LR", self.labeled_recall),
            ("LF", self.labeled_f1),
            ("UP", self.unlabeled_precision),
            ("UR", self.unlabeled_recall),
            ("UF", self.unlabeled_f1),
            ("EM", self.exact_match),
        ]
        return "\n".join(f"{k}={v:.4f}" for k, v in pairs)

    def table(self) -> str:
        rows = [
            f"{'':10} {'precision':>10} {'recall':>10} {'F1':>10}",
            f"{'labeled':10} {self.labeled_precision:10.4f} {self.labeled_recall:10.4f} {self.labeled_f1:10.4f}",
            f"{'unlabeled':10} {self.unlabeled_precision:10.4f} {self.unlabeled_recall:10.4f} {self.unlabeled_f1:10.4f}",
            f"{'tops':10} {self.top_precision:10.4f} {self.top_recall:10.4f} {'':>10}",
            f"exact match {self.exact_match:.4f} over {self.sentences} sentences",
        ]
        return "\n".join(rows)


def _ratio(num: int, denom: int) -> float:
    return num / denom if denom else 0.0


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r else 0.0


def score_graphs(gold, pred, include_tops: bool = True) -> EvalReport:
    """Micro-averaged edge-overlap metrics for aligned corpora.

    Labeled true positives are exact (head, dependent, label) matches;
    unlabeled ones ignore the label. Raises AlignmentError (naming the
    sentence) when the corpora differ in length or token counts.
    """
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise AlignmentError(f"corpus sizes differ: {len(gold)} gold vs {len(pred)} predicted")
    ltp = lfp = lfn = 0
    utp = ufp = ufn = 0
    top_tp = top_fp = top_fn = 0
    exact = 0
    per_label: dict[str, LabelCount] = defaultdict(LabelCount)
    for idx, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise AlignmentError(f"sentence {idx}: token counts differ ({len(g)} vs {len(p)})")
        g_edges = set(g.edges)
        p_edges = set(p.edges)
        if include_tops:
            g_edges |= {(0, t, TOP_LABEL) for t in g.tops}
            p_edges |= {(0, t, TOP_LABEL) for t in p.tops}
        ltp += len(g_edges & p_edges)
        lfp += len(p_edges - g_edges)
        lfn += len(g_edges - p_edges)
        g_unlab = {(h, d) for h, d, _ in g_edges}
        p_unlab = {(h, d) for h, d, _ in p_edges}
        utp += len(g_unlab & p_unlab)
        ufp += len(p_unlab - g_unlab)
        ufn += len(g_unlab - p_unlab)
        top_tp += len(g.tops & p.tops)
        top_fp += len(p.tops - g.tops)
        top_fn += len(g.tops - p.tops)
        if g_edges == p_edges:
            exact += 1
        for _, _, label in g_edges:
            per_label[label].gold += 1
        for e in p_edges:
            per_label[e[2]].predicted += 1
            if e in g_edges:
                per_label[e[2]].correct += 1

    lp, lr = _ratio(ltp, ltp + lfp), _ratio(ltp, ltp + lfn)
    up, ur = _ratio(utp, utp + ufp), _ratio(utp, utp + ufn)
    return EvalReport(
        labeled_precision=lp,
        labeled_recall=lr,
        labeled_f1=_f1(lp, lr),
        unlabeled_precision=up,
        unlabeled_recall=ur,
        unlabeled_f1=_f1(up, ur),
        exact_match=_ratio(exact, len(gold)),
        top_precision=_ratio(top_tp, top_tp + top_fp),
        top_recall=_ratio(top_tp, top_tp + top_fn),
        per_label=dict(sorted(per_label.items())),
        sentences=len(gold),
    )
