from .params import *
from .kinetics import *
from .hydraulics import *
from .slug import *
from .tempering import *
from .plant import *
from .narx import *
from .network import *
from .bll import *
from .surrogate import *
from .mpc import *
from .excitation import *
from .harness import *
from .config import *
from .errors import *

from importlib.metadata import version

__version__ = version("slugmpc")
