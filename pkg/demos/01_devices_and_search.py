"""
Two simulated devices and an oracle-guided search
=================================================

The same eight tasks have very different best configurations on the server
and the embedded device.  Here we look at that gap, then let the evolutionary
search run with the noise-free throughput as its scorer.
"""
import numpy as np

from moses_lab.config import default_source_device, default_target_device, load_tasks
from moses_lab.oracle import noise_free_throughput, true_best
from moses_lab.search import SearchParams, evolve
from moses_lab.space import build_space, default_config

tasks = load_tasks()
server, embedded = default_source_device(), default_target_device()

# best configuration per task on each device, found by full enumeration
print(f"{'task':16s} {'server best':28s} {'embedded best':28s}")
for task in tasks:
    s_cfg, _ = true_best(server, task)
    e_cfg, _ = true_best(embedded, task)
    print(f"{task.id:16s} {str(s_cfg):28s} {str(e_cfg):28s}")

# how much does the server optimum lose when it is shipped to the embedded device as-is?
lost = []
for task in tasks:
    s_cfg, _ = true_best(server, task)
    e_cfg, e_lat = true_best(embedded, task)
    thr = noise_free_throughput(embedded, task, np.asarray([s_cfg]))[0]
    lost.append(task.work_gflops / thr * 1000 / e_lat)
print("slowdown of the server optimum on the embedded device:", np.round(lost, 1))

# the untuned median configuration, for reference
raw = sum(task.work_gflops / noise_free_throughput(embedded, task, np.asarray([default_config(build_space(task))]))[0]
          * 1000 for task in tasks)
best = sum(true_best(embedded, t)[1] for t in tasks)
print(f"embedded end-to-end latency: median config {raw:.1f} ms, optimum {best:.2f} ms")

# search power with a perfect scorer
task = tasks[0]
_, opt = true_best(embedded, task)
for seed in range(5):
    out = evolve(lambda v: noise_free_throughput(embedded, task, v), build_space(task), task, SearchParams(seed=seed))
    lat = task.work_gflops / out[0].score * 1000
    print(f"seed {seed}: search best {lat:.3f} ms vs optimum {opt:.3f} ms")
