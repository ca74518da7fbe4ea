"""Ensemble singing-voice synthesis: interaction-aware modeling toolkit.

Subpackages cover score I/O and note encoding (:mod:`esvs.score`),
synchronized segmentation and padding (:mod:`esvs.preprocess`), acoustic
feature handling and a synthetic duet corpus (:mod:`esvs.features`),
hand-rolled differentiable regressors (:mod:`esvs.models`), training
objectives including cross-part difference losses (:mod:`esvs.losses`),
experiment orchestration (:mod:`esvs.trainer`), objective metrics
(:mod:`esvs.evaluator`), waveform rendering (:mod:`esvs.synthesizer`),
and numeric kernels with an optional compiled backend (:mod:`esvs.kernels`).
"""

__version__ = "0.1.0"
