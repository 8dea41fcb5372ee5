__version__ = "0.1.0"
from .model import *
from .environment import *
from .allocate import *
from .oracle import *
from .mac import *
from .learning import *
from .predictor import *
from .agents import *
from .orchestrator import *
from .harness import *
