"""Command-line harness for the shear-flow stability experiments."""
