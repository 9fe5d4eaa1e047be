"""Dual-polarization soliton transmission with common/differential phase precoding."""

__version__ = "0.1.0"
