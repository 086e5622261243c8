"""BER analysis of MIMO underwater wireless optical links."""

__version__ = "0.1.0"
