"""Numerical core: grids, profiles, resolvent solvers, time steppers and persistence."""
