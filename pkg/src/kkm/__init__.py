"""Mini-batch kernel k-means with landmark-sparsified centroids and a
row-wise data-parallel inner loop."""

from kkm.errors import CapacityError, FormatError, InputError, StateError
from kkm.kernels import KernelSpec, eval_kernel, kernel_block, estimate_d_max
from kkm.sampling import BatchPlan, Landmarks, stride_partition, block_partition, sample_landmarks
from kkm.engine import GdConfig, ClusterState, inner_gd_loop
from kkm.lifecycle import GlobalState, RunConfig, RunResult, run_clustering, predict
from kkm.data import DataSet

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "FormatError",
    "InputError",
    "StateError",
    "KernelSpec",
    "eval_kernel",
    "kernel_block",
    "estimate_d_max",
    "BatchPlan",
    "Landmarks",
    "stride_partition",
    "block_partition",
    "sample_landmarks",
    "GdConfig",
    "ClusterState",
    "inner_gd_loop",
    "GlobalState",
    "RunConfig",
    "RunResult",
    "run_clustering",
    "predict",
    "DataSet",
]
