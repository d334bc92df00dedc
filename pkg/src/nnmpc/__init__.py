"""Neural NARX models and receding-horizon control of a simulated multi-zone building."""

__version__ = "0.1.0"
