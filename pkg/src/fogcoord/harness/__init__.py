"""Scenario files, checkers, metrics, sweeps and the command line."""
