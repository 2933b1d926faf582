"""Generative background augmentation: isolate a subject, synthesize a new scene, composite."""

from .backends.base import BackendSet
from .backends.mock import mock_backends
from .compositor import CompositeOutput, merge, resize_background
from .core import (
    BoundingBox,
    Channels,
    ClassLabel,
    ImageBuffer,
    MaskedSubject,
    SubjectMask,
    cutout_subject,
    tight_bbox,
)
from .geometry import AffineMatrix, AffineParams, AffineRanges, Flip, apply_affine, to_matrix
from .isolation import SuperclassTable, isolate
from .manifest import validate_manifest
from .orchestrator import AugmentConfig, AugTask, DatasetManifest, load_dataset, plan, run, scan_directory
from .prompts import (
    AvoidList,
    CaptionResult,
    ModalitySets,
    PromptSpec,
    load_library,
    obtain_caption,
    render_prompt,
    sample_spec,
    sanitize_caption,
    space_size,
)

__version__ = "0.1.0"
