"""vitgrade: a ViT engine for 4-level ordinal tortuosity grading.

Library surface: model (forward/backprop/attention masks), optim
(recipes), metrics (weighted one-vs-rest), data + synth (ingestion and the
synthetic fiber generator), ckpt (PTF container), pipeline (runs) and the
`vitgrade` CLI.
"""

__version__ = "0.1.0"

from . import ckpt, data, kernels, metrics, model, optim, pipeline, synth  # noqa: F401
