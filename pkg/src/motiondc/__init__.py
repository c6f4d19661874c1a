"""Retrospective rigid-motion correction for multi-coil Cartesian MRI.

The corrupted k-space is split into the columns of the dominant pose (DP)
and the rest (RP); a cascade of two-branch units denoises both and a data
consistency layer pins the DP columns to the measurement.
"""

__version__ = "0.1.0"
