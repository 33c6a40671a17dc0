"""memheat — null controllability of heat equations with memory, at desk scale."""

__version__ = "0.1.0"
