"""Fast ball-harmonic expansions of volumes sampled on cubic grids."""
import warnings as _warnings

# numba probes for an optional TBB layer and complains when it is too old;
# the OpenMP/workqueue layers are used instead, so the notice is noise
_warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

__version__ = "0.1.0"
