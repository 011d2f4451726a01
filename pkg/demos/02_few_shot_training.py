"""Train the graph model on the built-in confounder task and compare it
with whole-series 1-NN baselines on identical evaluation episodes.

Every series shares a strong low-frequency component that carries no class
information; the class lives in one mid-frequency band. Distance baselines
latch onto the confounder while the band-relation model isolates the
informative band. A short budget keeps this demo around a minute:

    python demos/02_few_shot_training.py
"""

import numpy as np

from specprop import engine, synthetic

train_ds, test_ds = synthetic.synthetic_pair("synthetic", seed=2024)
print(f"train: {len(train_ds)} series, classes {train_ds.classes}, "
      f"length {train_ds.length}")

config = engine.RunConfig(way=2, shot=1, queries=3, bands=8, layers=3,
                          epochs=4, episodes_per_epoch=50,
                          eval_episodes=150, seed=0)

print("\ntraining (4 epochs x 50 episodes)...")
store, train_metrics = engine.train(train_ds, config)
losses = np.array(train_metrics.loss_curve)
print(f"loss: start {losses[:10].mean():.3f} -> end {losses[-10:].mean():.3f} "
      f"({train_metrics.wall_clock_s:.0f}s)")

model = engine.evaluate(test_ds, store, config)
euclid = engine.baseline_evaluate(test_ds, config, distance="euclid")
dtw = engine.baseline_evaluate(test_ds, config, distance="dtw")

print(f"\ngraph model     {model.mean_acc:5.1f} +- {model.ci95:.1f}")
print(f"1-NN euclidean  {euclid.mean_acc:5.1f} +- {euclid.ci95:.1f}")
print(f"1-NN dtw        {dtw.mean_acc:5.1f} +- {dtw.ci95:.1f}")
print("\n(the same episode stream is used for every method; "
      "re-running reproduces these numbers exactly)")
