from . import autodiff
from .autodiff import Tape, Tensor, backward, no_grad
from .backend import *
from .checkpoint import *
from .compositing import *
from .config import *
from .dataio import *
from .encoding import *
from .errors import *
from .experiments import *
from .field import *
from .metrics import *
from .optim import *
from .renderer import *
from .sampling import *
from .spectools import *
from .synthetic import *
from .trainer import *


mp_configure()
