from .errors import *
from .search_space import *
from .kernels import *
from .hwcounters import *
from .devicesim import *
from .dataset import *
from .predictor import *
from .baselines import *
from .eval import *
from .io_utils import *
