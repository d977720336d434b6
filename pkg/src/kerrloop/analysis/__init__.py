from .phase import *
from .switching import *
from .regression import *
from .sweep import *
