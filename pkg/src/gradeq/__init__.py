"""Online gradient-equilibrium learners, pipelines and diagnostics."""

__version__ = "0.1.0"
