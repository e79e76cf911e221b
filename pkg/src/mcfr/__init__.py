"""Frame + event multi-domain visual tracking lab.

Core pipeline: synthesize or load frame sequences, simulate an event camera
over them, stack events into count/timestamp grids, run the fusion network
(spiking event branch, convolutional frame branch, shared common branch),
track online, and evaluate. A FastAPI service (mcfr.service) wraps the
pipeline; the CLI (mcfr.cli) is a thin client over the same handlers.

MCFR_THREADS caps BLAS parallelism (0 or unset = library default). It must
take effect before numpy spins up its thread pools, hence the env fiddling
at import time.
"""

import os as _os

_threads = _os.environ.get("MCFR_THREADS", "0")
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
