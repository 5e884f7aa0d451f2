"""Cascaded optical phase synchronization of two remote nodes.

Local loops at each node, fast loops at the midpoint and a photon-counting
global loop are simulated together; the analysis tools identify the loops
and evaluate fringe sweeps.
"""

__version__ = "0.1.0"
