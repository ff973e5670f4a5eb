"""Frequency-domain detector for machine-generated text embeddings.

The pipeline pools a record's token embeddings, applies a trainable linear
adapter, moves the result into the frequency domain, drops the low band,
rescales the surviving bands against frozen corpus statistics, and
classifies from the inverse transform.  A margin loss on the modulus
spectra pulls same-label records together across domains.

Layers, bottom to top: `numerics` (transforms), `spectral` (bands and
corpus statistics), `model` (forward/backward and the optimizer),
`alignment` (the margin loss), `data` (records and the synthetic corpus),
`perturb` (token-level edits and per-band shift measurement), `trainer`
(loops and experiment runners), `report` (artifacts), `cli`.
"""

from .alignment import AlignmentBatch, fsa_loss
from .data import (
    EmbeddingRecord,
    RecordFormatError,
    RecordHeader,
    SplitPlan,
    SynthConfig,
    build_split,
    read_manifest,
    read_records,
    synth_dg_split,
    synth_generate,
    write_manifest,
    write_records,
)
from .model import (
    DetectorModel,
    DivergedError,
    PipelineConfig,
    backward,
    forward,
    forward_batch,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
)
from .numerics import OneSidedSpectrum, dft, idft, modulus, n_one_sided, to_one_sided
from .perturb import (
    PERTURBATION_KINDS,
    TOKEN_KINDS,
    affected_count,
    mae_shift,
    perturb,
)
from .spectral import (
    BandPartition,
    GlobalSpectrumStats,
    PartitionPolicy,
    compute_band_partition,
    compute_global_stats,
)
from .trainer import (
    EvalReport,
    TrainConfig,
    ablation_run,
    confusion_to_report,
    evaluate,
    mae_populations,
    split_mae_report,
    tau_sweep,
    train,
    training_stats,
    write_history,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentBatch",
    "BandPartition",
    "DetectorModel",
    "DivergedError",
    "EmbeddingRecord",
    "EvalReport",
    "GlobalSpectrumStats",
    "OneSidedSpectrum",
    "PERTURBATION_KINDS",
    "PartitionPolicy",
    "PipelineConfig",
    "RecordFormatError",
    "RecordHeader",
    "SplitPlan",
    "SynthConfig",
    "TOKEN_KINDS",
    "TrainConfig",
    "ablation_run",
    "affected_count",
    "backward",
    "build_split",
    "compute_band_partition",
    "compute_global_stats",
    "confusion_to_report",
    "dft",
    "evaluate",
    "forward",
    "forward_batch",
    "fsa_loss",
    "idft",
    "load_checkpoint",
    "mae_populations",
    "mae_shift",
    "modulus",
    "n_one_sided",
    "perturb",
    "predict_labels",
    "read_manifest",
    "read_records",
    "save_checkpoint",
    "split_mae_report",
    "synth_dg_split",
    "synth_generate",
    "tau_sweep",
    "to_one_sided",
    "train",
    "training_stats",
    "write_history",
    "write_manifest",
    "write_records",
]
