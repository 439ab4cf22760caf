"""Quaternion flow matching on SE(3) frames, with flow rectification.

Submodules: ``quat`` (quaternion algebra), ``so3_stats`` (IGSO(3) and noise),
``interpolants``, ``solvers``, ``model`` (endpoint model, training,
rectification), ``frames`` (backbone geometry and auxiliary losses),
``bench`` (stability benchmarks and Monte Carlo checks), ``toy`` and ``cli``.
"""

__version__ = "0.1.0"
