"""Degradation forecasting toolkit for power-MOSFET on-resistance drift.

Stacked-LSTM forecaster with exact BPTT training, classical Kalman and
particle-filter baselines, evaluation metrics, and a deterministic
edge-cloud retraining simulator, all driven from a single CLI.
"""

__version__ = "0.1.0"
