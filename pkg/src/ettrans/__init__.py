"""Translate frozen task-model feature sequences into primary-task predictions.

Subpackages:

* ``nn_core``        differentiable primitives with analytic gradients
* ``temporal_align`` FPS resampling, window planning, feature extraction
* ``task_models``    small trainable per-task models (trunk + head)
* ``translator``     projection, token assembly, encoder stack, decoders
* ``synth_tasks``    seeded synthetic multi-task datasets and Bayes ceilings
* ``training``       losses, Adam, the two-stage procedure
* ``metrics``        accuracy, AP, localization error, edit distance
* ``harness``        config files, feature cache, experiment runner
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    harness,
    metrics,
    nn_core,
    synth_tasks,
    task_models,
    temporal_align,
    training,
    translator,
)
