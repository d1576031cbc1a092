"""Unit conventions and boundary conversions.

Internally every frequency-like quantity (Omega, Delta, V0, effective couplings)
is angular, in rad/us. Times are in us, lengths in um. Configs, CLI flags and
CSV columns use plain MHz (cycles/us) with ``_mhz`` key suffixes; these helpers
are the single conversion point.
"""

import math

TWO_PI = 2.0 * math.pi


def mhz(value):
    """Convert plain MHz to angular rad/us."""
    return TWO_PI * value


def to_mhz(value):
    """Convert angular rad/us back to plain MHz (for reports and CSV)."""
    return value / TWO_PI
