"""Behavioral application authentication with a fuzzy vault.

An application's runtime behavior (daily network/security attribute counts,
summarised over a sliding window) is encoded into a set of 16-bit codes.  A
key is split across the coefficients of a polynomial over GF(2^61 - 1), the
codes become the x-coordinates of genuine points, and chaff points hide them.
A later, noisy observation of the same behavior unlocks the key again.
"""

from baafe.errors import BaafeError

__version__ = "0.1.0"

__all__ = ["BaafeError", "__version__"]
