"""Facial action-unit forecasting from glasses-mounted IMUs.

Subpackages cover the full pipeline: synthetic data generation with exact
ground truth (`synth`), signal preprocessing and artifact removal
(`signal_prep`), the sequence models (`model`), training harnesses
(`train`), real-time streaming inference (`stream_infer`), face
reconstruction and metrics (`face`), wire/dataset formats (`wire`,
`dataset`), the job layer (`pipeline`), and the HTTP service + CLI.
"""

from .aus import AU_CHANNELS, AU_CODES, AU_INDEX, NUM_AU

__version__ = "0.1.0"

__all__ = ["AU_CHANNELS", "AU_CODES", "AU_INDEX", "NUM_AU", "__version__"]
