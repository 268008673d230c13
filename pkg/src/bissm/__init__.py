"""Bidirectional dynamic state-space models for time-series anomaly detection.

Trains encoder, decoder and forward/backward transition networks on normal
data, scores test windows by the Mahalanobis distance of their one-step
reconstruction error, and filters hidden states in both directions with an
unscented Kalman filter.
"""

__version__ = "0.1.0"
