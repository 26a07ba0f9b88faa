"""
Server -> embedded: comparing adaptation strategies
===================================================

The full experiment from the shipped run configuration: 8 tasks x 6000 server
records, 30 epochs of pretraining, then 64 trials per task on the embedded
device for every strategy and seed.  Takes a few minutes on one core.
"""
import statistics

from moses_lab import experiment
from moses_lab.metrics import build_report

setup = experiment.prepare(experiment.load_setup())
print("pretraining loss, first/last epoch:", round(setup.epoch_losses[0], 4), round(setup.epoch_losses[-1], 4))

strategies = ["Raw"] + setup.doc["strategies"]
result = experiment.compare(setup, strategies)
print(build_report(result.rows, "markdown").decode())

for name in strategies:
    lat = [result.report(name, s).end_latency_ms for s in setup.doc["seeds"]]
    print(f"{name:16s} median end-to-end latency {statistics.median(lat):10.2f} ms")
print("timings (s):", {k: round(v, 1) for k, v in setup.timings.items()})
