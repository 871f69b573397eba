from .check_inputs import *
from .precoding import *
from .wmmse import *
from .channel_sim import *
from .site_profiles import *
from .channel_data import *
from . import autodiff
from .parameters import *
from .papp_model import *
from .mldg_train import *
from .complexity import *
from .run_config import *
from .export import *
from .import_results import *
from .cli import main
