"""advforge: build and evolve adversarial-text robustness benchmarks.

Pipeline: train victim classifiers, generate substitution attacks against
them, filter and human-annotate the candidates into a benchmark, then score
new models on it.
"""

__version__ = "0.1.0"
