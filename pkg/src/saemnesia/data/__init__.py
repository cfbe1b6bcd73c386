"""
Labeled activation datasets, the synthetic generator and linear probes.
"""

from .dataset import (
    OBJECT,
    STYLE,
    DOMAINS,
    UNLABELED,
    Concept,
    Dataset,
    DatasetError,
    ActivationSample,
)
from .synth_activations import SynthError, SynthSpec, build_spec, generate, make_near_duplicates
from .probe import ProbeError, LinearProbe, ProbeAccuracy, probe_train, probe_eval

__all__ = [
    "OBJECT",
    "STYLE",
    "DOMAINS",
    "UNLABELED",
    "Concept",
    "Dataset",
    "DatasetError",
    "ActivationSample",
    "SynthError",
    "SynthSpec",
    "build_spec",
    "generate",
    "make_near_duplicates",
    "ProbeError",
    "LinearProbe",
    "ProbeAccuracy",
    "probe_train",
    "probe_eval",
]
