"""Experiment runner: configs, reproducible initial data, sweeps and reports."""
