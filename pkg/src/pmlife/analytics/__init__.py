"""Analyses over store snapshots: activity, fees, oracle risk, calibration and bucket fits."""
