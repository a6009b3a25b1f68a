"""Interpretable event prediction for synthetic MOBA telemetry.

The pipeline: simulate matches with planted causal structure, encode per-second
frames into windowed model inputs, train LSTM/Transformer classifiers on four
in-game events, attribute predictions to input dimensions with integrated or
smoothed gradients, and score explanation quality with the fidelity metric.
"""

from .attribution import (
    AttributionMap,
    IntegratedGradients,
    RandomAttribution,
    SmoothGrad,
    integrated_gradients,
    render_report,
    smoothgrad,
    top_k,
)
from .datagen import (
    DeathEvent,
    EventInstance,
    Frame,
    GameRecord,
    GeneratorConfig,
    extract_event_instances,
    generate_game,
    generate_games,
    load_dataset,
    save_dataset,
)
from .encoding import (
    EmbeddingLayer,
    FeatureGroup,
    FeatureSchema,
    SequenceWindow,
    WindowEncoder,
    build_window,
    embed,
    encode_frame,
    encode_record,
    fit_normalization,
    mini_schema_skeleton,
    stack_windows,
    task_windows,
)
from .fidelity import (
    FidelityJob,
    FidelityReport,
    MaskedSet,
    build_masked_sets,
    fidelity_sweep,
    mask_top_k,
    run_fidelity,
)
from .models import (
    LstmConfig,
    SequenceClassifier,
    TransformerConfig,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"
