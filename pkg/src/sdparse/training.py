"""Training loop: token-budget batches, Adam with the published optimizer
settings, periodic dev validation with best-checkpoint tracking, early
stopping after a fixed number of stagnant steps, and exact save/resume.

One training step is one batch update. The batch loss is the mean over cells
(not the sum): per-sentence losses are combined weighted by their cell
counts, so the interpolation constant balances the two terms the same way at
any batch size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState
from .checkpoint import load_tensors, save_tensors
from .data import Batch, SemanticGraph, batch_by_tokens, build_vocab
from .evaluation import EvalReport, score_graphs
from .layers import PretrainedEmbeddings
from .model import ModelConfig, Parser, load_model, save_model

_SHUFFLE_TAG = 0xBA7C
_DROPOUT_TAG = 0xD309


class TrainingDiverged(RuntimeError):
    """Non-finite loss; aborts the run with a diagnostic."""


@dataclass
class MetricsRow:
    step: int
    train_loss: float
    dev_uf1: float
    dev_lf1: float

    def line(self) -> str:
        return f"{self.step}\t{self.train_loss:.6f}\t{self.dev_uf1:.4f}\t{self.dev_lf1:.4f}"


@dataclass
class TrainResult:
    parser: Parser
    metrics: list[MetricsRow]
    best_lf1: float | None
    stop_reason: str
    steps: int

    def metrics_text(self) -> str:
        return "\n".join(r.line() for r in self.metrics) + ("\n" if self.metrics else "")


def evaluate_dev(parser: Parser, graphs, include_tops: bool = True) -> EvalReport | None:
    """Inference-mode parse + score; None for an empty dev set (no early stopping)."""
    graphs = list(graphs)
    if not graphs:
        return None
    predictions = [parser.parse(g) for g in graphs]
    return score_graphs(graphs, predictions, include_tops=include_tops)


class TrainingRun:
    """Resumable training loop state around one Parser."""

    def __init__(
        self,
        train_graphs,
        dev_graphs,
        config: ModelConfig,
        seed: int = 0,
        pretrained: PretrainedEmbeddings | None = None,
        parser: Parser | None = None,
    ):
        self.train_graphs = list(train_graphs)
        self.dev_graphs = list(dev_graphs)
        if not self.train_graphs:
            raise ValueError("training needs a non-empty corpus")
        self.config = config
        self.seed = int(seed)
        if parser is None:
            vocab = build_vocab(self.train_graphs, config.vocab_threshold)
            parser = Parser(vocab, config, seed=seed, pretrained=pretrained)
        self.parser = parser
        self.params = parser.trainable_parameters()
        self.adam = AdamState(self.params)
        self.dropout_rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, _DROPOUT_TAG])
        )
        self.step = 0
        self.epoch = 0
        self.batch_index = 0
        self.best_lf1: float | None = None
        self.last_improve_step = 0
        self.window_sum = 0.0
        self.window_count = 0
        self.metrics: list[MetricsRow] = []
        self.best_weights: dict[str, np.ndarray] | None = None
        self.stop_reason: str | None = None
        # once run() finishes it loads the best weights into the parser; the
        # live (latest) weights are parked here so save/resume stays exact
        self._final_live_weights: dict[str, np.ndarray] | None = None

    # ---- one batch update ----

    def _epoch_batches(self) -> list[Batch]:
        return batch_by_tokens(
            self.train_graphs,
            budget=self.config.batch_tokens,
            shuffle_seed=[self.seed, self.epoch, _SHUFFLE_TAG],
        )

    def _batch_loss(self, batch: Batch):
        lam = self.config.interpolation
        parts = []
        edge_total = 0
        label_total = 0
        for g in batch.graphs:
            scores = self.parser.forward(g, training=True, rng=self.dropout_rng)
            edge_loss, ec, label_loss, lc = self.parser.loss_parts(scores, g)
            parts.append((edge_loss, ec, label_loss, lc))
            edge_total += ec
            label_total += lc
        total = None

        def accumulate(acc, term):
            return term if acc is None else ad.add(acc, term)

        edge_term = None
        label_term = None
        for edge_loss, ec, label_loss, lc in parts:
            if edge_loss is not None and ec:
                edge_term = accumulate(edge_term, ad.scale(edge_loss, ec / edge_total))
            if lc:
                label_term = accumulate(label_term, ad.scale(label_loss, lc / label_total))
        if edge_term is None:  # unfactorized: single labeler term
            return label_term
        if label_term is not None:
            total = ad.add(ad.scale(label_term, lam), ad.scale(edge_term, 1.0 - lam))
        else:
            total = ad.scale(edge_term, 1.0 - lam)
        return total

    def _train_step(self, batch: Batch) -> float:
        c = self.config
        with ad.Tape() as tape:
            loss = self._batch_loss(batch)
            value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(
                f"non-finite loss {value} at step {self.step + 1} "
                f"(batch of {len(batch.graphs)} sentences, {batch.token_count} tokens)"
            )
        ad.backward(tape, loss)
        for p in self.params:  # params absent from this batch's tape have zero gradient
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        ad.adam_step(
            self.params, self.adam,
            lr=c.learning_rate, beta1=c.adam_beta1, beta2=c.adam_beta2,
            eps=c.adam_eps, l2=c.l2,
        )
        ad.zero_grad(self.params)
        return value

    # ---- validation / bookkeeping ----

    def _validate(self) -> None:
        mean_loss = self.window_sum / self.window_count if self.window_count else float("nan")
        self.window_sum = 0.0
        self.window_count = 0
        report = evaluate_dev(self.parser, self.dev_graphs)
        if report is None:
            self.metrics.append(MetricsRow(self.step, mean_loss, float("nan"), float("nan")))
            return
        lf1 = report.labeled_f1
        self.metrics.append(MetricsRow(self.step, mean_loss, report.unlabeled_f1, lf1))
        if self.best_lf1 is None or lf1 > self.best_lf1:  # ties do not reset stagnation
            self.best_lf1 = lf1
            self.last_improve_step = self.step
            self.best_weights = {
                name: t.data.copy() for name, t in self.parser.named_tensors().items()
            }
        if self.step - self.last_improve_step >= self.config.patience:
            self.stop_reason = "early_stopping"

    def run(self) -> TrainResult:
        """Iterate batches until the step cap or the stagnation window fires."""
        c = self.config
        while self.stop_reason is None:
            batches = self._epoch_batches()
            while self.batch_index < len(batches):
                batch = batches[self.batch_index]
                self.batch_index += 1
                self.step += 1
                value = self._train_step(batch)
                self.window_sum += value
                self.window_count += 1
                if self.step % c.eval_interval == 0:
                    self._validate()
                if self.step >= c.max_steps:
                    self.stop_reason = self.stop_reason or "max_steps"
                if self.stop_reason:
                    break
            else:
                self.epoch += 1
                self.batch_index = 0
        if self.best_weights is not None:
            self._final_live_weights = {
                name: t.data.copy() for name, t in self.parser.named_tensors().items()
            }
            self.parser.load_weights(self.best_weights)
        return TrainResult(
            parser=self.parser,
            metrics=list(self.metrics),
            best_lf1=self.best_lf1,
            stop_reason=self.stop_reason,
            steps=self.step,
        )

    # ---- save / resume ----

    def save(self, out_dir) -> None:
        """Write the parse artifact (best weights) plus exact resume state."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(self.parser, out)  # best weights after run(), live ones mid-run
        live = self._final_live_weights or {
            name: t.data for name, t in self.parser.named_tensors().items()
        }
        save_tensors(out / "live.sdpm", live)
        moments = {}
        for p, m, v in zip(self.params, self.adam.m, self.adam.v):
            moments[f"m.{p.name}"] = m
            moments[f"v.{p.name}"] = v
        save_tensors(out / "moments.sdpm", moments)
        if self.best_weights is not None:
            save_tensors(out / "best.sdpm", self.best_weights)
        state = {
            "seed": self.seed,
            "step": self.step,
            "epoch": self.epoch,
            "batch_index": self.batch_index,
            "adam_t": self.adam.t,
            "best_lf1": self.best_lf1,
            "last_improve_step": self.last_improve_step,
            "window_sum": self.window_sum,
            "window_count": self.window_count,
            "stop_reason": self.stop_reason,
            "rng_state": self.dropout_rng.bit_generator.state,
            "metrics": [[r.step, r.train_loss, r.dev_uf1, r.dev_lf1] for r in self.metrics],
        }
        (out / "train_state.json").write_text(json.dumps(state), encoding="utf-8")
        (out / "metrics.tsv").write_text(
            "\n".join(r.line() for r in self.metrics) + ("\n" if self.metrics else ""),
            encoding="utf-8",
        )

    @classmethod
    def resume(cls, out_dir, train_graphs, dev_graphs) -> "TrainingRun":
        out = Path(out_dir)
        parser = load_model(out)
        parser.load_weights(load_tensors(out / "live.sdpm"))  # continue from the latest step
        state = json.loads((out / "train_state.json").read_text(encoding="utf-8"))
        run = cls(train_graphs, dev_graphs, parser.config, seed=state["seed"], parser=parser)
        moments = load_tensors(out / "moments.sdpm")
        for i, p in enumerate(run.params):
            run.adam.m[i][...] = moments[f"m.{p.name}"]
            run.adam.v[i][...] = moments[f"v.{p.name}"]
        run.adam.t = state["adam_t"]
        run.step = state["step"]
        run.epoch = state["epoch"]
        run.batch_index = state["batch_index"]
        run.best_lf1 = state["best_lf1"]
        run.last_improve_step = state["last_improve_step"]
        run.window_sum = state["window_sum"]
        run.window_count = state["window_count"]
        run.stop_reason = state["stop_reason"]
        run.dropout_rng.bit_generator.state = state["rng_state"]
        run.metrics = [MetricsRow(int(s), l, u, f) for s, l, u, f in state["metrics"]]
        if (out / "best.sdpm").exists():
            run.best_weights = load_tensors(out / "best.sdpm")
        if run.stop_reason == "max_steps" and run.step < run.config.max_steps:
            run.stop_reason = None  # the cap moved; the stagnation verdict would stand
        return run


def train(
    train_graphs,
    dev_graphs,
    config: ModelConfig,
    seed: int = 0,
    out_dir=None,
    pretrained: PretrainedEmbeddings | None = None,
) -> TrainResult:
    """Train from scratch; writes the best checkpoint and metrics when ``out_dir`` is set.

    The returned parser carries the best-validation weights (final weights
    when there is no dev set).
    """
    run = TrainingRun(train_graphs, dev_graphs, config, seed=seed, pretrained=pretrained)
    result = run.run()
    if out_dir is not None:
        run.save(out_dir)
    return result
