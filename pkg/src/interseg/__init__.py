"""Deterministic interaction-simulation engine for 3D interactive segmentation."""

__version__ = "0.1.0"

from .agents import AgentState, FollowupSchedule, followup_probability, next_interaction_kind
from .autozoom import (
    RefinementPlan,
    Roi,
    ZoomConfig,
    ZoomResult,
    initial_roi,
    needs_zoom_out,
    plan_refinement,
    run_autozoom,
    zoom_ladder,
)
from .bench import (
    MetricsReport,
    ScribbleStack,
    SessionConfig,
    SessionLog,
    aggregate,
    emit,
    run_expert_scribbles,
    run_session,
    session_rng,
)
from .errors import (
    ErrorComponent,
    compute_error_components,
    sample_slice,
    select_component,
)
from .prompts import (
    DECAY,
    Geometry,
    InteractionRecord,
    PromptChannels,
    apply_interaction,
    generate_malformed_segmentation,
    point_probabilities,
    sample_point_location,
    simulate_bbox2d,
    simulate_bbox3d,
    simulate_lasso,
    simulate_point,
    simulate_refinement_prompt,
    simulate_scribble,
)
from .rng import make_rng, stream_id
from .sampling import (
    AmbiguityRules,
    CaseEntry,
    CaseObjects,
    DatasetSpec,
    TargetSpec,
    augment,
    case_sampling_weights,
    extract_patch,
    instances_from_semantic,
    pick_center,
    sample_target,
)
from .segmenters import (
    GtOracle,
    NoisyOracle,
    RegionGrow,
    Segmenter,
    SegmenterError,
    SubprocessSegmenter,
    build_segmenter,
    prompt_mass,
)
from .volcore import (
    SliceRef,
    Volume3D,
    connected_components,
    dice,
    directional_edt,
    edt,
    edt_squared,
    mask_bbox,
    morphology,
    perlin2d,
    perlin3d,
    resample,
    skeletonize2d,
    warp2d,
)
from .volio import (
    CaseManifest,
    LoadedCase,
    VolioError,
    load_case,
    load_manifest,
    read_nifti,
    read_raw,
    read_volume,
    write_nifti,
    write_raw,
    zscore,
)
