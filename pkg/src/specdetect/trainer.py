"""Training loop and evaluation harness.

One run: freeze corpus band statistics, loop epochs of shuffled batches,
minimize CE + fsa_weight * alignment per batch with AdamW, track the best
validation-F1 checkpoint.  Diagnostic runners (split-MAE table, module
ablation grid, tau sweep) reuse the same train/evaluate pair so their rows
are comparable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from .alignment import AlignmentBatch, fsa_loss
from .model import (
    FEATURE_AXIS,
    FSR_BATCH,
    FSR_OFF,
    TOKEN_AXIS,
    AdamHyper,
    DetectorModel,
    DivergedError,
    PipelineConfig,
    adamw_step,
    backward,
    cross_entropy_batch,
    forward_batch,
    optimizer_init,
    pool,
    predict_labels,
)
from .numerics import fourier_kernel, n_one_sided
from .spectral import (
    CORPUS_AVERAGE,
    PER_SAMPLE,
    GlobalSpectrumStats,
    PartitionPolicy,
    compute_global_stats,
)

log = logging.getLogger(__name__)

# Table-2-shaped grid: every on/off combination of the three modules.
MODULE_GRID = tuple(
    {"lff_enabled": a, "fsr_enabled": b, "fsa_enabled": c}
    for a, b, c in product((False, True), repeat=3)
)

# Table-3-shaped grid: which single band survives, plus the keep-all row.
BAND_GRID = (
    {"lff_enabled": False, "band_keep": (True, False, False)},
    {"lff_enabled": False, "band_keep": (False, True, False)},
    {"lff_enabled": False, "band_keep": (False, False, True)},
    {"lff_enabled": False, "band_keep": (True, True, True)},
)

DEFAULT_SEEDS = tuple(range(10))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-5
    weight_decay: float = 0.01
    tau: float = 0.6
    xi: float = 1.0
    fsa_weight: float = 1.0
    eval_interval: int = 1
    seed: int = 0
    lff_enabled: bool = True
    fsr_enabled: bool = True
    fsa_enabled: bool = True
    band_keep: tuple[bool, bool, bool] | None = None
    band_source: str = PER_SAMPLE
    fsr_inference: str = FSR_BATCH
    spectral_axis: str = FEATURE_AXIS
    # Recompute band statistics with the live adapter at each epoch start.
    # Off by default: stats are measured once and stay frozen for the run.
    refresh_stats: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.fsa_enabled and self.batch_size < 2:
            raise ValueError("fsa_enabled needs batch_size >= 2 to form pairs")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be positive")
        if not (self.lr > 0 and np.isfinite(self.lr)):
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.fsa_weight < 0:
            raise ValueError("fsa_weight must be nonnegative")
        # Delegate tau/xi/toggle validation so errors surface at config time.
        self.pipeline()

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            tau=self.tau,
            xi=self.xi,
            lff_enabled=self.lff_enabled,
            fsr_enabled=self.fsr_enabled,
            fsa_enabled=self.fsa_enabled,
            band_keep=self.band_keep,
            band_source=self.band_source,
            fsr_inference=self.fsr_inference,
            spectral_axis=self.spectral_axis,
        )

    def hyper(self) -> AdamHyper:
        return AdamHyper(lr=self.lr, weight_decay=self.weight_decay)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    f1: float
    true_pos: int
    false_pos: int
    false_neg: int
    true_neg: int

    @property
    def total(self) -> int:
        return self.true_pos + self.false_pos + self.false_neg + self.true_neg


def confusion_to_report(tp: int, fp: int, fn: int, tn: int) -> EvalReport:
    """Accuracy and binary F1 with the generated class (label 1) positive.

    Degenerate denominators give 0 rather than an error: a model that never
    predicts the positive class has F1 0, not undefined.
    """
    total = tp + fp + fn + tn
    if total == 0:
        raise ValueError("empty test set")
    accuracy = (tp + tn) / total
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return EvalReport(accuracy, f1, tp, fp, fn, tn)


def _policy_for(config: TrainConfig, records) -> PartitionPolicy:
    if config.band_source == CORPUS_AVERAGE:
        return PartitionPolicy.averaged(
            config.tau,
            [r.t_num for r in records],
            [r.s_num for r in records],
        )
    return PartitionPolicy(tau=config.tau)


def _token_stats(records, adapter_fn, policy: PartitionPolicy) -> GlobalSpectrumStats:
    """Corpus band statistics along the token axis.

    Each record's modulus vector is the per-bin magnitude of its centered
    token-axis transform, averaged over neurons: the same quantity the
    forward pass rescales.  All records must share one token count since the
    statistics live on a single bin grid.
    """
    records = list(records)
    if not records:
        raise ValueError("empty training set")
    if any(not r.has_tokens for r in records):
        raise ValueError("token-axis statistics need token matrices")
    t = records[0].t_num
    if any(r.t_num != t for r in records):
        raise ValueError("token-axis statistics need one shared token count")
    m = n_one_sided(t)
    kern = fourier_kernel(t)[:m]
    total_mid = total_high = 0.0
    count_mid = count_high = 0
    for rec in records:
        # The adapter is a linear map, so it applies row-wise to the matrix.
        z = adapter_fn(np.asarray(rec.payload, dtype=np.float64))
        mean = z.mean(axis=0, keepdims=True)
        spec = kern @ (z - mean).astype(np.complex128)
        spec[0] += t * mean[0]
        mod = np.abs(spec).mean(axis=1)
        part = policy.partition_for(m, rec.t_num, rec.s_num)
        total_mid += float(np.sum(mod[part.band_slice("mid")]))
        count_mid += part.band_size("mid")
        total_high += float(np.sum(mod[part.band_slice("high")]))
        count_high += part.band_size("high")
    return GlobalSpectrumStats(
        mu_bar_mid=total_mid / count_mid if count_mid else 0.0,
        mu_bar_high=total_high / count_high if count_high else 0.0,
        n_bins=m,
        policy=policy,
    )


def training_stats(
    config: TrainConfig, train_set, model: DetectorModel | None = None
) -> GlobalSpectrumStats:
    """Corpus statistics exactly as `train` freezes them before its loop.

    With no model the adapter is the identity map, matching a freshly
    initialized model; passing a model measures through its live adapter
    (the per-epoch refresh path).
    """
    train_set = list(train_set)
    if not train_set:
        raise ValueError("empty train set")
    policy = _policy_for(config, train_set)
    adapter = model.adapter_fn() if model is not None else (lambda signal: signal)
    if config.spectral_axis == TOKEN_AXIS:
        return _token_stats(train_set, adapter, policy)
    return compute_global_stats(train_set, adapter, policy)


def _batch_step(model, records, labels, stats, config):
    """Forward, both loss terms, and parameter gradients for one batch."""
    tape = forward_batch(model, records, stats)
    # A blown-up forward is divergence, not a caller error: the loss guards
    # below would reject the non-finite values with the wrong exception.
    if not (np.all(np.isfinite(tape.logits)) and np.all(np.isfinite(tape.moduli))):
        raise DivergedError("diverged")
    ce, grad_logits = cross_entropy_batch(tape.logits, labels)
    fsa = 0.0
    grad_moduli = None
    if config.fsa_enabled:
        if len(records) < 2:
            log.warning("batch of one sample: skipping the alignment term")
        else:
            fsa, gmod = fsa_loss(AlignmentBatch(tape.moduli, labels, xi=config.xi))
            grad_moduli = config.fsa_weight * gmod
    loss = ce + config.fsa_weight * fsa
    grads = backward(model, tape, grad_logits, grad_moduli_from_fsa=grad_moduli)
    return loss, ce, fsa, grads


def train(config: TrainConfig, train_set, valid_set):
    """Run the training loop; return (best model, per-epoch history).

    Band statistics are measured once up front through the identity-state
    adapter and stay frozen (unless refresh_stats).  Batches reshuffle every
    epoch under the run seed; the last partial batch is kept.  Validation
    runs every eval_interval epochs and always after the final one; the
    returned model is the checkpoint with the best validation F1, earliest
    epoch winning ties.  epochs=0 returns the initialized model untouched.
    """
    train_set = list(train_set)
    valid_set = list(valid_set)
    if not train_set:
        raise ValueError("empty train set")
    d = train_set[0].d
    model = DetectorModel.initialize(d, config.pipeline(), seed=config.seed)
    stats = training_stats(config, train_set)
    if config.epochs == 0:
        return model, []

    opt_state = optimizer_init(model.params(), config.hyper())
    labels_all = np.array([r.label for r in train_set])
    rng = np.random.default_rng((config.seed, 0x5AFF1E))
    history: list[dict] = []
    best = (-1.0, model)

    for epoch in range(1, config.epochs + 1):
        if config.refresh_stats:
            stats = training_stats(config, train_set, model)
        order = rng.permutation(len(train_set))
        losses, ces, fsas = [], [], []
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            records = [train_set[i] for i in idx]
            try:
                loss, ce, fsa, grads = _batch_step(
                    model, records, labels_all[idx], stats, config
                )
                if not np.isfinite(loss):
                    raise DivergedError("diverged")
                params, opt_state = adamw_step(model.params(), grads, opt_state)
            except DivergedError as err:
                raise DivergedError(
                    f"diverged at epoch {epoch}, batch {bi + 1}"
                ) from err
            model = model.with_params(params)
            losses.append(loss)
            ces.append(ce)
            fsas.append(fsa)

        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "ce": float(np.mean(ces)),
            "fsa": float(np.mean(fsas)),
            "valid_acc": None,
            "valid_f1": None,
        }
        if epoch % config.eval_interval == 0 or epoch == config.epochs:
            report = evaluate(model, valid_set, stats)
            row["valid_acc"] = report.accuracy
            row["valid_f1"] = report.f1
            if report.f1 > best[0]:
                best = (report.f1, model)
        history.append(row)
    return best[1], history


def evaluate(model: DetectorModel, test_set, stats: GlobalSpectrumStats) -> EvalReport:
    """Accuracy and binary F1 over a test set.

    The whole set runs as one batch so the rescaling factors are a property
    of the corpus being scored, not of an arbitrary batching; with
    fsr_inference=off the factors are pinned to 1.  Token-axis sets are
    grouped by token count since bins must agree within a batch.
    """
    test_set = list(test_set)
    if not test_set:
        raise ValueError("empty test set")
    override = (1.0, 1.0) if model.config.fsr_inference == FSR_OFF else None
    if model.config.spectral_axis == TOKEN_AXIS:
        groups: dict[int, list] = {}
        for rec in test_set:
            groups.setdefault(rec.t_num, []).append(rec)
        batches = [groups[t] for t in sorted(groups)]
    else:
        batches = [test_set]
    tp = fp = fn = tn = 0
    for records in batches:
        tape = forward_batch(model, records, stats, alpha_override=override)
        preds = predict_labels(tape.logits)
        for rec, pred in zip(records, preds):
            if rec.label == 1:
                tp += pred == 1
                fn += pred == 0
            else:
                fp += pred == 1
                tn += pred == 0
    return confusion_to_report(int(tp), int(fp), int(fn), int(tn))


DEFAULT_MAE_PAIRS = (
    ("Train_m", "Test_m"),
    ("Train_m", "Test_h"),
    ("Test_m", "Test_h"),
    ("Train_h", "Test_h"),
)


def _representation_moduli(model: DetectorModel, records) -> np.ndarray:
    """Modulus spectra of the model's feature representation.

    The diagnostic reads the adapter output itself, before any masking or
    rescaling: those are detection-time stages, while this table asks what
    training did to the representation the encoder stand-in produces.
    """
    x = np.stack([pool(r) for r in records])
    n = x.shape[1]
    kern = fourier_kernel(n)[: n_one_sided(n)]
    z = x @ model.adapter_w.T + model.adapter_b
    means = z.mean(axis=1, keepdims=True)
    spectra = (z - means) @ kern.T
    spectra[:, 0] += n * means[:, 0]
    return np.abs(spectra)


def split_mae_report(
    populations: dict,
    model: DetectorModel,
    policy: PartitionPolicy | None = None,
    pairs=DEFAULT_MAE_PAIRS,
    max_pairs: int = 1000,
    seed: int = 0,
):
    """Mean pairwise distance between representation modulus spectra.

    A cell value is the mean over sampled cross-pairs of the entrywise
    mean absolute difference between the two populations' modulus spectra.
    Sampling is seeded and capped at max_pairs per cell.  With a partition
    policy the per-band means are reported alongside the overall value,
    using band edges from the paired populations' average token and
    sentence counts.
    """
    moduli = {}
    counts = {}
    for name in {n for pair in pairs for n in pair}:
        records = populations.get(name) or []
        if not records:
            raise ValueError(f"empty cell: {name}")
        moduli[name] = _representation_moduli(model, records)
        counts[name] = (
            float(np.mean([r.t_num for r in records])),
            float(np.mean([r.s_num for r in records])),
        )
    rng = np.random.default_rng(seed)
    rows = []
    for name_a, name_b in pairs:
        ma, mb = moduli[name_a], moduli[name_b]
        total = len(ma) * len(mb)
        if total <= max_pairs:
            ia, ib = np.meshgrid(np.arange(len(ma)), np.arange(len(mb)), indexing="ij")
            ia, ib = ia.ravel(), ib.ravel()
        else:
            ia = rng.integers(0, len(ma), size=max_pairs)
            ib = rng.integers(0, len(mb), size=max_pairs)
        per_bin = np.mean(np.abs(ma[ia] - mb[ib]), axis=0)
        row = {"pair": f"{name_a}:{name_b}", "mae": float(per_bin.mean())}
        if policy is not None:
            t_avg = (counts[name_a][0] + counts[name_b][0]) / 2.0
            s_avg = (counts[name_a][1] + counts[name_b][1]) / 2.0
            part = policy.partition_for(len(per_bin), max(1, round(t_avg)), max(1, round(s_avg)))
            for band in ("low", "mid", "high"):
                lo, hi = getattr(part, band)
                row[f"mae_{band}"] = float(per_bin[lo : hi + 1].mean()) if hi >= lo else 0.0
        rows.append(row)
    return rows


def mae_populations(train_set, test_set) -> dict:
    """Label-split populations named like the diagnostic table rows."""
    return {
        "Train_m": [r for r in train_set if r.label == 1],
        "Train_h": [r for r in train_set if r.label == 0],
        "Test_m": [r for r in test_set if r.label == 1],
        "Test_h": [r for r in test_set if r.label == 0],
    }


def _combo_label(overrides: dict) -> str:
    if "band_keep" in overrides:
        names = ("low", "mid", "high")
        kept = [n for n, k in zip(names, overrides["band_keep"]) if k]
        return "keep-" + "+".join(kept)
    bits = []
    for key, short in (("lff_enabled", "LFF"), ("fsr_enabled", "FSR"), ("fsa_enabled", "FSA")):
        if overrides.get(key, True):
            bits.append(short)
    return "+".join(bits) if bits else "none"


def ablation_run(
    base: TrainConfig,
    toggle_grid,
    train_set,
    valid_set,
    test_set,
    seeds=DEFAULT_SEEDS,
):
    """Train one model per toggle combination per seed; report held-out F1.

    Every combination sees the same seed schedule so rows differ only in
    the modules enabled.
    """
    rows = []
    for overrides in toggle_grid:
        f1s = []
        for seed in seeds:
            cfg = replace(base, seed=seed, **overrides)
            model, _ = train(cfg, train_set, valid_set)
            stats = training_stats(cfg, train_set)
            f1s.append(evaluate(model, test_set, stats).f1)
        rows.append(
            {
                "combo": _combo_label(overrides),
                "f1_mean": float(np.mean(f1s)),
                "f1_runs": f1s,
            }
        )
    return rows


def tau_sweep(
    base: TrainConfig,
    tau_values,
    train_set,
    valid_set,
    test_set,
    seeds=DEFAULT_SEEDS,
):
    """One seeded run per tau value; report mean held-out F1 per tau."""
    rows = []
    for tau in tau_values:
        if not (0.0 <= tau <= 1.0):
            raise ValueError("tau must lie in [0, 1]")
        f1s = []
        for seed in seeds:
            cfg = replace(base, tau=tau, seed=seed)
            model, _ = train(cfg, train_set, valid_set)
            stats = training_stats(cfg, train_set)
            f1s.append(evaluate(model, test_set, stats).f1)
        rows.append({"tau": tau, "f1_mean": float(np.mean(f1s)), "f1_runs": f1s})
    return rows


def write_history(path, history) -> None:
    """History as JSON lines, one object per epoch."""
    with open(path, "w", encoding="utf-8") as handle:
        for row in history:
            handle.write(json.dumps(row) + "\n")
