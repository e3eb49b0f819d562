from .synthesis import (
    BurstSample,
    CameraParams,
    FrameTransform,
    SynthesisConfig,
    add_noise,
    crop_burst,
    downsample_bilinear,
    mosaic,
    oracle_flow,
    oracle_flows,
    pack_raw,
    sample_camera,
    sample_transforms,
    synthesize_burst,
    unpack_raw,
    unprocess,
    warp,
)
from .dataset import (
    BurstDataset,
    InMemoryDataset,
    procedural_image,
    read_sample,
    synthesize_dataset,
    write_dataset,
    write_procedural_images,
    write_sample,
)
