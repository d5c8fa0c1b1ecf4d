"""Nash control and communication scheduling for LQ games with intermittent state access."""

__version__ = "0.1.0"
