"""Experiment runner: scenarios, replication grids, regret against the oracle, witness search."""
