"""HDG solver for networks of Timoshenko beams."""

__version__ = "0.1.0"
