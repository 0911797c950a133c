"""Hierarchical federated learning simulator: Fed-BAC with HierFAVG and IFCA baselines."""

__version__ = "0.1.0"
