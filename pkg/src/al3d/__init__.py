"""Active-learning data selection machinery for LiDAR 3D object detection.

Library layout:

- :mod:`al3d.types` / :mod:`al3d.io` -- domain types and file formats
- :mod:`al3d.geometry` -- rotated box IoU, point membership, NMS
- :mod:`al3d.clustering` -- seeded k-means and confident-group picking
- :mod:`al3d.uncertainty` -- entropy scoring and two-model constructions
- :mod:`al3d.box_bank` -- confident-object bank with iterative refinement
- :mod:`al3d.pseudo_scene` -- background mining and object pasting
- :mod:`al3d.selection` -- budgeted, diversity- and class-aware selection
- :mod:`al3d.calibration` -- confidence-binned calibration error
- :mod:`al3d.simulator` -- seeded synthetic world and multi-round harness
- :mod:`al3d.cli` -- batch command-line surface
"""

from .errors import (
    Al3dError,
    ConfigError,
    EmptyInputError,
    FormatError,
    InvariantError,
    IoError,
    MissingDataError,
    ParseError,
)
from .types import (
    Box3D,
    ClassSet,
    Detection,
    IgnoreRegion,
    Pool,
    RegionKind,
    Scene,
    Source,
    filter_ignore_frames,
)
from .geometry import iou_3d, iou_bev, nms, points_in_box, remove_points_in_boxes
from .clustering import KMeansResult, confident_group, kmeans, representative_features
from .uncertainty import (
    ClassWeights,
    box_entropy,
    ensemble_merge,
    intersect_predictions,
    scene_uncertainty,
)
from .box_bank import BankEntry, BoxBank, extract_confident, mine_false_positives, refine
from .pseudo_scene import PseudoScene, compose, emit_dataset, mine_background
from .selection import (
    CandidateScene,
    SelectionConfig,
    SelectionResult,
    class_caps,
    scene_similarity,
    select,
    update_feature_bank,
)
from .calibration import ReliabilityReport, match_predictions, reliability
from .simulator import (
    CalibrationMode,
    DetectorSkill,
    HarnessConfig,
    RoundsReport,
    SkillSchedule,
    WorldConfig,
    gen_world,
    run_rounds,
    surrogate_detect,
)

__version__ = "0.1.0"
