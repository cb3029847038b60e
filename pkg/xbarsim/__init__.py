"""
xbarsim - memristive crossbar inference simulator.

This package simulates memristive devices, maps trained dense and
convolutional layers onto crossbars, applies device non-idealities and
runs seeded parameter sweeps over the resulting inference accuracy.
"""

try:
    # Try to get version from setuptools-scm
    from importlib.metadata import PackageNotFoundError, version

    try:
        __version__ = version("xbarsim")
    except PackageNotFoundError:
        # Final fallback if package not installed
        __version__ = "0.1.0"
except ImportError:
    __version__ = "0.1.0"
__description__ = "Memristive crossbar DNN inference simulator"

# Main modules
from . import config
from . import device
from . import crossbar
from . import mapping
from . import nonideality
from . import network
from . import harness

__all__ = ["config", "device", "crossbar", "mapping", "nonideality", "network", "harness"]
