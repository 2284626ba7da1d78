"""Training regimes, checkpoints, comparison runs and the command line."""
