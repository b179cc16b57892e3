"""limnolearn: simulated-lake pretraining and physics-constrained fine-tuning."""

__version__ = "0.1.0"
