"""Label-limited dynamic node classification toolkit.

Core library for training time-aware node classifiers when only
final-timestamp labels are available, plus the baselines, metrics and
dataset tooling needed to compare methods under that constraint.
"""

__version__ = "0.1.0"
