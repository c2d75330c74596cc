"""qmap: exact stochastic thermodynamics of system-bath collision maps.

Kraus dilations, two-point-measurement trajectory ensembles,
fluctuation-theorem checks, map concatenation and the repeated-interaction
Lindblad limit, at desk scale (dense complex matrices, dims <= 2^14).
"""

import os as _os

# QMAP_THREADS caps the BLAS worker count; it must take effect before the
# first numpy import in this process, hence before the submodule imports.
_threads = _os.environ.get("QMAP_THREADS", "")
if _threads.isdigit() and int(_threads) > 0:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)

from . import concat, cptpmap, lindblad, linalg, model, thermo, trajectories
from . import cli
from .errors import QmapError

__all__ = [
    "cli",
    "concat",
    "cptpmap",
    "lindblad",
    "linalg",
    "model",
    "thermo",
    "trajectories",
    "QmapError",
]

__version__ = "0.1.0"
