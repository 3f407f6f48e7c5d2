"""feedlab: a desk-scale content-ecosystem laboratory.

Simulates a social graph with known creator behavior, learns creation-response
models from the simulated logs, turns them into per-creator feedback-sensitivity
utilities, blends those utilities into feed ranking, and measures the impact
with consumer A/B tests and ego-cluster network experiments.
"""

__version__ = "0.1.0"
