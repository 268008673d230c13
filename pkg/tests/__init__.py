"""Test suite for the bissm anomaly detection pipeline."""
