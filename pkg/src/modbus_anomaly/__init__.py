"""Modbus/TCP anomaly detection: capture dissection, packet features, classifiers."""

__version__ = "0.1.0"
