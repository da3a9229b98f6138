"""Detection-prompted segmentation toolkit for large herbarium sheets."""

from .errors import BackendError, PatchError
from .raster import (
    BoundingBox,
    ConnectedComponent,
    StructuringElement,
    connected_components,
    dilate,
    erode,
    load_image,
    load_mask,
    mask_from_nonblack,
    opening,
    save_image,
    save_mask,
)
from .tiling import PatchPlan, make_plan, select_patch_size, split, stitch
from .prompting import (
    Detector,
    DetectorConfig,
    HeuristicDetector,
    MaskOracleDetector,
    ModelDetector,
    PromptSet,
    multi_region_prompt,
    plant_to_box_ratio,
    single_box_prompt,
)
from .segmentation import (
    OnnxPromptSegmenter,
    PipelineConfig,
    RegionGrowConfig,
    RegionGrowingSegmenter,
    SegmentationResult,
    Segmenter,
    SegmenterCapabilities,
    segment_image,
)
from .evaluation import EvaluationRecord, TaxonReport, dice, evaluate_set, iou
from .analytics import CoverageStat, HeatMap, coverage, crop_to_content, heatmap
from .dataset import DatasetConfig, SplitManifest, build_detection_dataset, split_ids

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
