"""pfdl: a deterministic desk-scale lab for personalized federated
domain-incremental learning on synthetic domain-shifted tasks."""

__version__ = "0.1.0"
