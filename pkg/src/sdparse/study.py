"""Architecture-variation study: train N seeded replicas per variant on one
dataset and compare each variant against the baseline with Wilcoxon rank-sum
tests.

The canonical variant families: unfactorized (labeler-only), omitting the
hidden layers (edge classifier, label classifier, or both), bilinear instead
of biaffine classifiers, a non-diagonal tensor in the labeler or a diagonal
tensor in the edge scorer, and the ReLU nonlinearity.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .model import ConfigError, ModelConfig
from .training import TrainingDiverged, train

logger = logging.getLogger(__name__)

VARIANT_DELTAS: dict[str, dict] = {
    "unfactorized": {"factorized": False},
    "no_edge_hidden": {"edge_hidden": False},
    "no_label_hidden": {"label_hidden": False},
    "no_hidden": {"edge_hidden": False, "label_hidden": False},
    "bilinear": {"classifier": "bilinear"},
    "nondiagonal_labeler": {"label_diagonal": False},
    "diagonal_edge": {"edge_diagonal": True},
    "relu": {"nonlinearity": "relu"},
}


@dataclass(frozen=True)
class VariantSpec:
    name: str
    deltas: tuple[tuple[str, object], ...]

    @classmethod
    def named(cls, name: str) -> "VariantSpec":
        if name not in VARIANT_DELTAS:
            raise ConfigError(f"unknown variant {name!r}; known: {sorted(VARIANT_DELTAS)}")
        return cls(name=name, deltas=tuple(sorted(VARIANT_DELTAS[name].items())))

    def apply(self, base: ModelConfig) -> ModelConfig:
        return base.replaced(**dict(self.deltas))


def figure_variants() -> list[VariantSpec]:
    """Every canonical variant family, in a stable order."""
    return [VariantSpec.named(name) for name in VARIANT_DELTAS]


# ---------------------------------------------------------------------------
# Wilcoxon rank-sum


def _midranks(pooled: list[float]) -> list[float]:
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        mid = (i + j) / 2.0 + 1.0  # ranks are 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    return ranks


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def rank_sum(a, b, tail: str = "two-sided", exact_limit: int = 16) -> tuple[float, float]:
    """Wilcoxon rank-sum: W = sum of sample a's midranks in the pooled ranking.

    The p-value is exact (full enumeration over rank assignments) when the
    pooled size is at most ``exact_limit``, otherwise a normal approximation
    with tie-corrected variance. ``tail`` is "two-sided" (default),
    "greater" (a tends larger), or "less". Identical samples give p = 1.
    """
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    if len(a) < 2 or len(b) < 2:
        raise ValueError("rank_sum needs at least two observations per sample")
    if tail not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown tail {tail!r}")
    n_a, n = len(a), len(a) + len(b)
    pooled = a + b
    ranks = _midranks(pooled)
    w = sum(ranks[:n_a])

    if n <= exact_limit:
        at_or_below = 0
        at_or_above = 0
        total = 0
        for combo in itertools.combinations(range(n), n_a):
            total += 1
            w_c = sum(ranks[i] for i in combo)
            if w_c <= w + 1e-12:
                at_or_below += 1
            if w_c >= w - 1e-12:
                at_or_above += 1
        p_low = at_or_below / total
        p_high = at_or_above / total
        if tail == "greater":
            p = p_high
        elif tail == "less":
            p = p_low
        else:
            p = min(1.0, 2.0 * min(p_low, p_high))
        return w, p

    mean = n_a * (n + 1) / 2.0
    ties = {}
    for r in pooled:
        ties[r] = ties.get(r, 0) + 1
    tie_term = sum(t**3 - t for t in ties.values())
    var = (n_a * (n - n_a) / 12.0) * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:  # every pooled value identical
        return w, 1.0
    z = (w - mean) / math.sqrt(var)
    if tail == "greater":
        p = _norm_sf(z)
    elif tail == "less":
        p = 1.0 - _norm_sf(z)
    else:
        p = min(1.0, 2.0 * _norm_sf(abs(z)))
    return w, p


# ---------------------------------------------------------------------------
# the study harness


@dataclass
class ReplicaResult:
    variant: str
    replica: int
    seed: int
    lf1: float | None
    error: str | None = None


@dataclass
class StudyResult:
    replicas: int
    results: list[ReplicaResult]
    comparisons: dict[str, tuple[float, float]]  # variant -> (W, p) vs baseline
    excluded: list[str] = field(default_factory=list)

    def scores(self, variant: str) -> list[float]:
        return [r.lf1 for r in self.results if r.variant == variant and r.lf1 is not None]

    def results_table(self) -> str:
        lines = ["variant\treplica\tseed\tLF1"]
        for r in self.results:
            lf1 = f"{r.lf1:.4f}" if r.lf1 is not None else f"failed:{r.error}"
            lines.append(f"{r.variant}\t{r.replica}\t{r.seed}\t{lf1}")
        return "\n".join(lines) + "\n"

    def comparison_table(self) -> str:
        lines = ["variant\tW\tp"]
        for name, (w, p) in self.comparisons.items():
            lines.append(f"{name}\t{w:.1f}\t{p:.4g}")
        return "\n".join(lines) + "\n"


def _run_one(job, train_fn):
    variant_name, replica, seed, config, train_graphs, dev_graphs = job
    try:
        result = train_fn(train_graphs, dev_graphs, config, seed)
        lf1 = result.best_lf1
        if lf1 is None:  # no dev improvement recorded; score the final model
            from .training import evaluate_dev

            report = evaluate_dev(result.parser, dev_graphs)
            lf1 = report.labeled_f1 if report else None
        if lf1 is None:
            return ReplicaResult(variant_name, replica, seed, None, "no dev score")
        return ReplicaResult(variant_name, replica, seed, float(lf1))
    except (TrainingDiverged, ConfigError, ValueError) as exc:
        logger.warning("replica failed: %s seed=%s: %s", variant_name, seed, exc)
        return ReplicaResult(variant_name, replica, seed, None, str(exc))


def run_study(
    base_config: ModelConfig,
    variants: list[VariantSpec],
    replicas: int,
    train_graphs,
    dev_graphs,
    seeds: list[int] | None = None,
    step_budget: int | None = 3000,
    jobs: int = 1,
    tail: str = "two-sided",
    train_fn=None,
) -> StudyResult:
    """Train ``replicas`` seeded models for the baseline and every variant,
    collect dev LF1, and rank-sum each variant against the baseline.

    Training failures are recorded per replica and the study continues; a
    variant with fewer than two successful replicas is excluded from the
    comparisons with a warning. ``step_budget`` overrides max_steps (the
    study protocol shortens training); None keeps the base setting.
    """
    if replicas < 2:
        raise ValueError("a study needs at least two replicas per variant")
    if seeds is None:
        seeds = list(range(1, replicas + 1))
    if len(seeds) != replicas:
        raise ValueError(f"need {replicas} seeds, got {len(seeds)}")
    if train_fn is None:
        train_fn = lambda tr, dv, cfg, seed: train(tr, dv, cfg, seed=seed)  # noqa: E731

    base = base_config if step_budget is None else base_config.replaced(max_steps=step_budget)
    jobs_list = []
    for name, config in [("baseline", base)] + [(v.name, v.apply(base)) for v in variants]:
        for replica, seed in enumerate(seeds):
            jobs_list.append((name, replica, seed, config, train_graphs, dev_graphs))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda j: _run_one(j, train_fn), jobs_list))
    else:
        results = [_run_one(j, train_fn) for j in jobs_list]

    study = StudyResult(replicas=replicas, results=results, comparisons={})
    baseline_scores = study.scores("baseline")
    if len(baseline_scores) < 2:
        logger.warning("baseline has %d successful replicas; no comparisons", len(baseline_scores))
        study.excluded = ["baseline"] + [v.name for v in variants]
        return study
    for v in variants:
        scores = study.scores(v.name)
        if len(scores) < 2:
            logger.warning("variant %s has %d successful replicas; excluded", v.name, len(scores))
            study.excluded.append(v.name)
            continue
        study.comparisons[v.name] = rank_sum(baseline_scores, scores, tail=tail)
    return study


# ---------------------------------------------------------------------------
# study manifest


def parse_manifest(text: str) -> dict:
    """Parse the study manifest: key = value lines.

    Keys: ``variants`` (comma-separated canonical names), ``replicas``,
    ``steps`` (per-run step budget), ``seeds`` (comma-separated, optional),
    ``tail`` (optional), plus any ModelConfig field as a base override.
    """
    from .model import parse_config_values

    variants: list[str] = []
    replicas = 2
    steps = 3000
    seeds = None
    tail = "two-sided"
    overrides: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"manifest line {line_no}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        if key == "variants":
            variants = [v.strip() for v in val.split(",") if v.strip()]
        elif key == "replicas":
            replicas = int(val)
        elif key == "steps":
            steps = int(val)
        elif key == "seeds":
            seeds = [int(s) for s in val.split(",") if s.strip()]
        elif key == "tail":
            tail = val
        else:
            overrides[key] = val
    if not variants:
        raise ConfigError("manifest names no variants")
    specs = [VariantSpec.named(name) for name in variants]
    return {
        "variants": specs,
        "replicas": replicas,
        "steps": steps,
        "seeds": seeds,
        "tail": tail,
        "config_overrides": parse_config_values(overrides),
    }


def load_manifest(path) -> dict:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))
