"""Max-min fair channel allocation: distributed auction, slotted MAC, simulator."""

__version__ = "0.1.0"
