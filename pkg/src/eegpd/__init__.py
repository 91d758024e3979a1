"""Multi-center resting-state EEG band-power classification toolkit."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    config,
    evaluate,
    harmonize,
    io,
    learn,
    models,
    preprocess,
    select,
    spectral,
    synth,
)
