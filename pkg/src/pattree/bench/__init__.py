"""Verification oracles, baselines, metrics and the benchmark harness."""
