from .errors import *
from .core import *
from .linalg import *
from .gaussian import *
from .models import *
from .multigrid import *
from .rates import *
from .samplers import *
from .diagnostics import *
from .config import load_config, RunConfig
from .sweep import run_sweep, write_sweep_csv
