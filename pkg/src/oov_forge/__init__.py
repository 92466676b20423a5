"""oov-forge: few-shot inference of embeddings for out-of-vocabulary words.

A small, auditable stack: a reverse-mode autodiff tensor core, corpus and
episode tooling, a hierarchical attention regressor trained to predict
oracle embeddings from K masked contexts plus character morphology, a
two-stage meta-learning adaptation step, closed-form baselines, and a
Spearman-correlation evaluation harness.
"""

__version__ = "0.1.0"
