"""Massive-MIMO CSI feedback with base-station-side channel learning.

A library and experiment driver for the feedback scheme where machine
learning lives only at the base station: the BS trains a channel predictor,
distils it into a lightweight transition matrix reported to user equipment,
and UEs feed back only quantized prediction-error updates. Includes multiuser
feedback-selection schedulers and the evaluation metrics to compare schemes.
"""

__version__ = "0.1.0"

from . import channel, feedback, metrics, predictors, protocol, quantizer  # noqa: F401
