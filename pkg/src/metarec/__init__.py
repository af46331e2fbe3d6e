"""Contrastive sequential recommendation with meta-optimized learnable
view augmenters: model, losses, two-stage trainer, evaluation, and the
experiment harness behind the ``metarec`` CLI."""

__version__ = "0.1.0"
