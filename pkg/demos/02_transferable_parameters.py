"""
Which parameters move when the device changes?
==============================================

Pretrain a cost model briefly on server measurements, then score every scalar
of the network with |w * dL/dw| on a batch measured on the embedded device and
keep the top half.  The per-layer share of kept scalars shows where the
adaptation signal concentrates.
"""
import numpy as np

from moses_lab import data, lottery, model, tuner
from moses_lab.config import default_source_device, default_target_device, load_tasks
from moses_lab.model import RankingBatch, TrainHyper
from moses_lab.oracle import measure_many
from moses_lab.space import build_space, encode_batch, sample_configs

tasks = load_tasks()
store = data.generate_dataset(default_source_device(), tasks, 600, seed=0)
pre = tuner.pretrain(store, tasks, TrainHyper(max_epochs=5)).params

task = tasks[0]
values = sample_configs(build_space(task), np.random.default_rng(1), 64)
recs = measure_many(default_target_device(), task, values, seed=0)
batch = RankingBatch(encode_batch(task, values), [r.throughput_gflops for r in recs], task.id)
print(f"ranking accuracy of the server model on embedded data: "
      f"{model.pairwise_accuracy(model.predict_batch(pre, batch.features), batch.labels):.3f}")

g = model.gradients(pre, batch)
xi = lottery.xi_scores(pre, g)
for rho in (0.01, 0.3, 0.5, 0.7):
    mask = lottery.partition(xi, ratio=rho)
    # share of each layer's scalars that are transferable
    shares = [w.mean() for w, _ in pre.layers(mask.bits)]
    print(f"rho={rho:<5} kept={mask.n_transferable:>7d}  per-layer share W1/W2/W3 = " +
          " / ".join(f"{s:.2f}" for s in shares))

# one masked phase: transferable step, then decay of the rest
mask = lottery.partition(xi, ratio=0.5)
after = lottery.variant_decay(lottery.transferable_step(pre, g, mask, 0.001), mask, 0.001, 0.01)
print("ranking loss before / after one masked step:",
      round(model.pairwise_ranking_loss(model.predict_batch(pre, batch.features), batch.labels), 5),
      round(model.pairwise_ranking_loss(model.predict_batch(after, batch.features), batch.labels), 5))
