"""Cross-device cost-model adaptation lab: simulated devices, an MLP cost model,
lottery-ticket style transferable-parameter fine-tuning and an evolutionary tuner."""

__version__ = "0.1.0"
