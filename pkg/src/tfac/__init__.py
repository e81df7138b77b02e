"""Fast L1 time stepping for the time-fractional Allen-Cahn equation."""
from ._accel import BACKEND
from .frackernel import (
    SoeApprox,
    build_soe,
    complementary_kernels,
    direct_kernel_row,
    fast_kernel_row,
    mittag_leffler,
    omega,
)
from .mesh import AdaptiveParams, TimeMesh, concat_mesh, graded_mesh, random_tail_mesh

__version__ = "0.1.0"
