"""Day-horizon residential flexibility: simulation, scheduling and learning."""

__version__ = "0.1.0"
