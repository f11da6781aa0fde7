"""Desk-scale CQI measurement and prediction testbed.

Synthesizes or ingests per-resource-block SINR at 1 ms granularity, maps it to
CQI, and predicts the next subframe's CQI with a small convolutional-recurrent
network trained under an asymmetric loss.
"""

__version__ = "0.1.0"
