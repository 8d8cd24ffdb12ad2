"""Online learning to rank under the dependent click model."""

__version__ = "0.1.0"
