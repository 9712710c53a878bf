from .dataset import (
    DatasetManifest,
    ManifestEntry,
    Sample,
    SampleStore,
    batch_indices,
    batch_iterator,
    load_manifest,
    write_manifest,
)
from .preprocess import (
    MAPILLARY_V12_DRIVABLE_IDS,
    PhotometricConfig,
    crop_top_quarter,
    filter_by_road_fraction,
    flip_augment,
    merge_road_classes,
    photometric_augment,
    resize_and_random_crop,
)
from .synth import SynthSceneParams, generate_synth_scene, sample_scene_params

__all__ = [
    "DatasetManifest", "ManifestEntry", "Sample", "SampleStore", "batch_indices", "batch_iterator",
    "load_manifest", "write_manifest", "MAPILLARY_V12_DRIVABLE_IDS", "PhotometricConfig",
    "crop_top_quarter", "filter_by_road_fraction", "flip_augment", "merge_road_classes",
    "photometric_augment", "resize_and_random_crop", "SynthSceneParams", "generate_synth_scene",
    "sample_scene_params",
]
