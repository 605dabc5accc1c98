from .io import IO
from .io import str2bool
from .io import str2floats
from .io import str2ints
