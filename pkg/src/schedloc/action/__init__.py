from .bound import bound as bound
from .calibrate import calibrate as calibrate
from .localize import localize as localize
from .reproduce import reproduce as reproduce
from .simulate import simulate as simulate
