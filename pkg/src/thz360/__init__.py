"""Multi-user 360-degree video streaming over multi-AP THz links."""

__version__ = "0.1.0"
