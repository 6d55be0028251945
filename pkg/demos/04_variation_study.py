"""A miniature architecture-variation study: seeded replicas per variant,
dev LF1 per replica, and rank-sum comparisons against the baseline.

Run: python demos/04_variation_study.py   (a couple of minutes on one core)
"""

from sdparse import ModelConfig, bundled_corpus, figure_variants, rank_sum, run_study
from sdparse.study import VariantSpec

graphs = bundled_corpus("synthetic_train")

print("canonical variant families:")
for v in figure_variants():
    print(f"  {v.name:20s} {dict(v.deltas)}")

# The rank-sum statistic on its own: W is the first sample's rank sum; with
# pooled sizes this small the two-sided p-value is computed by full
# enumeration of rank assignments.
w, p = rank_sum([1, 2], [3, 4])
print(f"\nrank_sum([1,2], [3,4]) -> W={w:.0f}, p={p:.3f}")

base = ModelConfig(
    word_dim=12, pos_dim=6, glove_raw_dim=8, glove_linear_dim=8,
    bilstm_hidden=16, bilstm_layers=1, head_dep_dim=12,
    embedding_dropout=0.0, bilstm_ff_dropout=0.0, bilstm_recur_dropout=0.0,
    arc_dropout=0.0, label_dropout=0.0,
    learning_rate=5e-3, eval_interval=20, patience=60, batch_tokens=200,
)
variants = [VariantSpec.named("bilinear"), VariantSpec.named("unfactorized")]

print("\nrunning 3 replicas x (baseline + 2 variants), 120-step budget ...")
study = run_study(
    base, variants, replicas=3,
    train_graphs=graphs, dev_graphs=graphs,
    seeds=[1, 2, 3], step_budget=120,
)
print("\nper-replica results:")
print(study.results_table())
print("comparisons vs baseline:")
print(study.comparison_table())
