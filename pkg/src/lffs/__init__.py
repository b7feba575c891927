"""Low-frequency few-shot learning: frequency-regularized self-distillation,
progressive radius curriculum, transductive finetuning, weighted spectral
ensembling, and an l-inf adversarial evaluation harness."""

__version__ = "0.1.0"
