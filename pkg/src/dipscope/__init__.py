"""Deep-image-prior fitting with spectral diagnostics.

Fits small convolutional and fully-connected models to noisy 1D/2D signals
from a fixed noise input, and measures how fast each frequency of the target
is picked up along the optimization trajectory.
"""

__version__ = "0.1.0"
