"""Waveform/phasor hybrid co-simulation with boundary error indices."""

__version__ = "0.1.0"
