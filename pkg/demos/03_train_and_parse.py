"""Train a small parser on the bundled corpus, watch it memorize, then parse
and score. Takes about half a minute on one core.

Run: python demos/03_train_and_parse.py
"""

from sdparse import ModelConfig, bundled_corpus, evaluate_dev, score_graphs, train

graphs = bundled_corpus("synthetic_train")

# Desk-scale hyperparameters: every channel enabled (characters and lemmas
# included), sizes shrunk from the published configuration, dropout off so
# twenty sentences memorize quickly.
config = ModelConfig(
    word_dim=16, pos_dim=8, lemma_dim=8, char_dim=8,
    glove_raw_dim=12, glove_linear_dim=12,
    char_lstm_hidden=16, char_linear_dim=12,
    bilstm_hidden=32, bilstm_layers=1, head_dep_dim=24,
    use_char=True, use_lemma=True,
    embedding_dropout=0.0, char_lstm_ff_dropout=0.0, char_lstm_recur_dropout=0.0,
    char_linear_dropout=0.0, bilstm_ff_dropout=0.0, bilstm_recur_dropout=0.0,
    arc_dropout=0.0, label_dropout=0.0,
    learning_rate=5e-3, max_steps=500, patience=100, eval_interval=25,
    batch_tokens=200,
)

print("training on", len(graphs), "sentences ...")
result = train(graphs, graphs, config, seed=42)
print("\nstep\tloss\tUF1\tLF1")
for row in result.metrics:
    print(row.line())
print(f"\nstopped after {result.steps} steps ({result.stop_reason}), best LF1 {result.best_lf1:.3f}")

# Parse with the returned (best-checkpoint) model and score against gold.
parser = result.parser
predictions = [parser.parse(g) for g in graphs]
report = score_graphs(graphs, predictions)
print("\n" + report.table())

# A concrete parse:
g = graphs[0]
p = predictions[0]
print("\nsentence :", " ".join(g.forms))
print("gold     :", sorted(g.edges))
print("predicted:", sorted(p.edges))
assert evaluate_dev(parser, graphs).labeled_f1 == report.labeled_f1
