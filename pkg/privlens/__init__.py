from .__version__ import __version__  # noqa: F401
from .config import RunConfig, load_config  # noqa: F401
from .optics import PSFStack, compute_psf  # noqa: F401
from .sensor import capture  # noqa: F401
from .zernike import ZernikeCoefficients, noll_to_nm  # noqa: F401
