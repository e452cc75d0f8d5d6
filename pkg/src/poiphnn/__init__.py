"""Learning-guided solving of polynomial-objective integer programs."""

__version__ = "0.1.0"
