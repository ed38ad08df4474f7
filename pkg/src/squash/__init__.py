"""Geo-indexed sparse history-feature store for multi-traversal LiDAR.

Past drives through a route are fused into compact, spatially quantized
feature grids, geo-indexed every few metres; a live scan is endowed with
per-point history features through a low-latency lazy sparse-convolution
query. See README.md for the pipeline and file formats.
"""

from ._kernels import default_backend, resolve_backend
from .builder import (
    Anchor,
    SquashRecord,
    aggregate,
    build_all,
    build_squash,
    config_fingerprint,
    route_anchors,
)
from .errors import (
    ChecksumError,
    ConfigurationError,
    EmptyBuildError,
    EmptySelectionError,
    GridTooLargeError,
    MagicMismatchError,
    RecordNotFoundError,
    SquashError,
    StoreError,
    TruncatedFileError,
    ValidationError,
    VersionMismatchError,
)
from .featurizer import (
    FcnWeights,
    FeaturizerSpec,
    featurize,
    load_fcn_weights,
    random_fcn_weights,
    save_fcn_weights,
)
from .geometry import Pose6DoF, compose, load_poses_csv, save_poses_csv, transform_points
from .pointcloud import PointCloud, load_hpc, save_hpc
from .query import (
    EndowedPointCloud,
    QueryKernel,
    averaging_kernel,
    load_kernel,
    query,
    query_latency_probe,
    random_kernel,
    save_kernel,
)
from .scan_model import (
    BuildConfig,
    Traversal,
    anchor_locations,
    combine_dense,
    load_route,
    load_traversal,
    save_route,
    save_traversal,
)
from .sim import (
    NoiseModel,
    Scene,
    SceneSpec,
    auc_score,
    best_threshold_accuracy,
    ephemerality_benchmark,
    generate_scene,
    perturb_pose,
    run_ephemerality,
)
from .sparse_grid import SparseFeatureGrid, kernel_offsets, quantize, quantize_points
from .store import (
    SquashStore,
    deserialize_record,
    load_record,
    load_store,
    save_record,
    save_store,
    serialize_record,
)

__version__ = "0.1.0"
