"""Simulation of a post-selected linear-optical CNOT gate fed by a pulsed
quantum-dot single-photon source with partially distinguishable photons."""

__version__ = "0.1.0"
