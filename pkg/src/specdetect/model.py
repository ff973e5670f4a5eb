"""Trainable detection pipeline and its hand-written reverse pass.

The model is deliberately small: a d -> d linear adapter (identity at
initialization, the stand-in for backbone fine-tuning) feeding the spectral
pipeline, and a linear head mapping reconstructed features to two logits.
Forward composes

    z = adapter(pool(x))
    S = one-sided spectrum of z
    S' = band mask            (drops the low band under LFF, or any keep mask)
    S'' = band rescaling      (alpha_mid / alpha_high toward frozen global means)
    f = inverse transform of S''
    logits = head(f)

Backward is written out by hand against the packed spectrum-gradient
convention of `numerics` (dL/d(re) + 1j*dL/d(im) per one-sided bin).  The
rescaling factors alpha are treated as constants: they are batch statistics,
not differentiated paths, and finite-difference checks must hold them fixed.

Everything here runs batched over B samples; the per-record `forward` is the
B = 1 case.  `spectral_axis` selects the transform direction: "feature"
(default) runs one DFT over the pooled length-d vector, "token" runs one DFT
per neuron along the token axis of the raw token matrix (experimental; every
record in a batch then needs the same token count).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import fourier_kernel, one_sided_weights, n_one_sided
from .spectral import (
    PER_SAMPLE,
    CORPUS_AVERAGE,
    BandPartition,
    GlobalSpectrumStats,
    band_multiplier,
    compute_alphas,
)

__all__ = [
    "FEATURE_AXIS",
    "TOKEN_AXIS",
    "FSR_BATCH",
    "FSR_OFF",
    "PARAM_NAMES",
    "PipelineConfig",
    "DetectorModel",
    "AdamHyper",
    "OptimizerState",
    "BatchContext",
    "BatchTape",
    "DivergedError",
    "pool",
    "forward",
    "forward_batch",
    "cross_entropy",
    "cross_entropy_batch",
    "backward",
    "predict_labels",
    "optimizer_init",
    "adamw_step",
    "encode_config",
    "decode_config",
    "save_checkpoint",
    "load_checkpoint",
]

FEATURE_AXIS = "feature"
TOKEN_AXIS = "token"
FSR_BATCH = "batch"
FSR_OFF = "off"

KEEP_ALL = (True, True, True)
KEEP_MID_HIGH = (False, True, True)

PARAM_NAMES = ("adapter_w", "adapter_b", "head_w", "head_b")

CHECKPOINT_MAGIC = b"MGPM"
CHECKPOINT_VERSION = 1


class DivergedError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass(frozen=True)
class PipelineConfig:
    """Module toggles and knobs for one detector.

    band_keep defaults to None and is resolved at construction: low-frequency
    filtering forces (False, True, True); with LFF off the default keeps all
    three bands.  Passing an explicit mask that contradicts lff_enabled is an
    error rather than a silent override.
    """

    tau: float = 0.6
    xi: float = 1.0
    lff_enabled: bool = True
    fsr_enabled: bool = True
    fsa_enabled: bool = True
    band_keep: tuple[bool, bool, bool] | None = None
    band_source: str = PER_SAMPLE
    fsr_inference: str = FSR_BATCH
    spectral_axis: str = FEATURE_AXIS

    def __post_init__(self):
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError("tau must lie in [0, 1]")
        if not (self.xi > 0 and np.isfinite(self.xi)):
            raise ValueError("xi must be positive")
        if self.band_source not in (PER_SAMPLE, CORPUS_AVERAGE):
            raise ValueError(f"unknown band_source: {self.band_source!r}")
        if self.fsr_inference not in (FSR_BATCH, FSR_OFF):
            raise ValueError(f"unknown fsr_inference: {self.fsr_inference!r}")
        if self.spectral_axis not in (FEATURE_AXIS, TOKEN_AXIS):
            raise ValueError(f"unknown spectral_axis: {self.spectral_axis!r}")
        keep = self.band_keep
        if keep is None:
            keep = KEEP_MID_HIGH if self.lff_enabled else KEEP_ALL
        else:
            keep = tuple(bool(b) for b in keep)
            if len(keep) != 3:
                raise ValueError("band_keep needs exactly three flags")
            if self.lff_enabled and keep != KEEP_MID_HIGH:
                raise ValueError(
                    "lff_enabled requires band_keep (False, True, True)"
                )
        object.__setattr__(self, "band_keep", keep)


@dataclass
class DetectorModel:
    adapter_w: np.ndarray  # d x d
    adapter_b: np.ndarray  # d
    head_w: np.ndarray  # 2 x d
    head_b: np.ndarray  # 2
    config: PipelineConfig

    def __post_init__(self):
        blocks = {
            name: np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            for name in PARAM_NAMES
        }
        if blocks["adapter_w"].ndim != 2 or blocks["adapter_w"].shape[0] != blocks["adapter_w"].shape[1]:
            raise ValueError("adapter_w must be square")
        d = blocks["adapter_w"].shape[0]
        shapes = _param_shapes(d)
        for name, block in blocks.items():
            if block.shape != shapes[name]:
                raise ValueError(f"{name} must have shape {shapes[name]}")
            if not np.all(np.isfinite(block)):
                raise ValueError(f"{name} contains non-finite values")
            setattr(self, name, block)

    @property
    def d(self) -> int:
        return self.adapter_w.shape[0]

    @classmethod
    def initialize(cls, d: int, config: PipelineConfig, seed: int = 0) -> "DetectorModel":
        """Identity adapter, zero head, zero biases.

        The zero head matters: the first optimizer step then grows the head
        along the class-mean difference of the features the pipeline actually
        exposes, so the band mask decides which signal the model locks onto
        before the adapter has moved anywhere.  The seed is accepted for
        callers that swap in a randomized variant.
        """
        if d < 1:
            raise ValueError("dimension must be positive")
        del seed
        return cls(
            adapter_w=np.eye(d),
            adapter_b=np.zeros(d),
            head_w=np.zeros((2, d)),
            head_b=np.zeros(2),
            config=config,
        )

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name).copy() for name in PARAM_NAMES}

    def with_params(self, params: dict[str, np.ndarray]) -> "DetectorModel":
        return DetectorModel(config=self.config, **{n: params[n] for n in PARAM_NAMES})

    def adapter_fn(self):
        """Signal -> signal callable for corpus statistics passes."""
        return lambda x: self.adapter_w @ np.asarray(x, dtype=np.float64) + self.adapter_b


@dataclass(frozen=True)
class BatchContext:
    """Batch mean band moduli feeding the rescaling factors."""

    mu_mid: float
    mu_high: float


@dataclass
class BatchTape:
    """Every intermediate the backward pass needs, batched over B samples.

    Feature axis: inputs (B, d), adapted (B, d), spectra/reconstructed (B, m)
    complex, multiplier (B, m) real.  Token axis: inputs and adapted are
    (B, t, d), spectra/reconstructed (B, m, d) with m bins along the token
    frequency axis, and token_features holds the pre-pooling inverse (B, t, d).
    moduli is always (B, m): per-bin magnitudes, averaged over neurons on the
    token axis, exactly what the alignment loss consumes.
    """

    config: PipelineConfig
    signal_length: int
    partitions: list[BandPartition]
    alphas: tuple[float, float]
    inputs: np.ndarray
    adapted: np.ndarray
    spectra: np.ndarray
    multiplier: np.ndarray
    reconstructed: np.ndarray
    moduli: np.ndarray
    features: np.ndarray
    logits: np.ndarray
    token_features: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return self.logits.shape[0]


def pool(record) -> np.ndarray:
    """Per-sample feature vector: pooled payloads pass through, token
    matrices are mean-pooled over the token axis."""
    payload = np.asarray(getattr(record, "payload", record), dtype=np.float64)
    if payload.ndim == 1:
        return payload
    if payload.ndim == 2:
        if payload.shape[0] == 0:
            raise ValueError("empty token matrix")
        return payload.mean(axis=0)
    raise ValueError("payload must be a vector or a token matrix")


def _token_matrix(record) -> np.ndarray:
    payload = np.asarray(getattr(record, "payload", record), dtype=np.float64)
    if payload.ndim != 2 or payload.shape[0] == 0:
        raise ValueError("token-axis mode needs a token matrix")
    return payload


def _record_counts(record, fallback_rows: int) -> tuple[int, int]:
    t_num = int(getattr(record, "t_num", fallback_rows))
    s_num = int(getattr(record, "s_num", 1))
    return t_num, s_num


def _mask_multipliers(partitions, keep, alpha_mid=1.0, alpha_high=1.0) -> np.ndarray:
    return np.stack(
        [band_multiplier(p, keep, alpha_mid, alpha_high) for p in partitions]
    )


def _pooled_mu(moduli: np.ndarray, partitions, name: str) -> float:
    # Mean over all (sample, bin) entries of the band; matches the corpus
    # statistics convention so reconstruction lands exactly on the targets.
    total = 0.0
    count = 0
    for row, part in zip(moduli, partitions):
        sl = part.band_slice(name)
        total += float(np.sum(row[sl]))
        count += part.band_size(name)
    return total / count if count else 0.0


def _resolve_alphas(config, stats, masked_moduli, partitions, alpha_override):
    if not config.fsr_enabled:
        return 1.0, 1.0
    if alpha_override is not None:
        return float(alpha_override[0]), float(alpha_override[1])
    mu_mid = _pooled_mu(masked_moduli, partitions, "mid")
    mu_high = _pooled_mu(masked_moduli, partitions, "high")
    return compute_alphas(stats, mu_mid, mu_high)


def forward_batch(
    model: DetectorModel,
    records,
    stats: GlobalSpectrumStats,
    alpha_override: tuple[float, float] | None = None,
) -> BatchTape:
    """Run the full pipeline over a batch of records.

    With FSR enabled and no alpha_override, the rescaling factors come from
    this batch's own masked spectra, pooled across samples, against the
    frozen corpus means in `stats`.  Passing alpha_override reuses factors
    computed elsewhere (the per-record surface, or a finite-difference
    harness holding alphas fixed).
    """
    records = list(records)
    if not records:
        raise ValueError("empty batch")
    if model.config.spectral_axis == TOKEN_AXIS:
        return _forward_token(model, records, stats, alpha_override)

    x = np.stack([pool(r) for r in records])
    b, d = x.shape
    if d != model.d:
        raise ValueError("record dimension does not match the model")
    n = d
    m = n_one_sided(n)
    if stats.n_bins != m:
        raise ValueError("stats do not match the spectrum size")
    kern = fourier_kernel(n)[:m]

    z = x @ model.adapter_w.T + model.adapter_b
    # Centered transform: the mean is removed before the kernel product and
    # restored into bin 0, so constant offsets land exactly in the DC bin.
    means = z.mean(axis=1, keepdims=True)
    spectra = (z - means) @ kern.T
    spectra[:, 0] += n * means[:, 0]

    partitions = [
        stats.policy.partition_for(m, *_record_counts(r, fallback_rows=0))
        for r in records
    ]
    keep = model.config.band_keep
    masked = spectra * _mask_multipliers(partitions, keep)
    alphas = _resolve_alphas(
        model.config, stats, np.abs(masked), partitions, alpha_override
    )
    multiplier = _mask_multipliers(partitions, keep, *alphas)
    reconstructed = spectra * multiplier

    weights = one_sided_weights(n)
    features = ((weights * reconstructed) @ np.conj(kern)).real / n
    logits = features @ model.head_w.T + model.head_b
    return BatchTape(
        config=model.config,
        signal_length=n,
        partitions=partitions,
        alphas=alphas,
        inputs=x,
        adapted=z,
        spectra=spectra,
        multiplier=multiplier,
        reconstructed=reconstructed,
        moduli=np.abs(reconstructed),
        features=features,
        logits=logits,
    )


def _forward_token(model, records, stats, alpha_override) -> BatchTape:
    mats = [_token_matrix(r) for r in records]
    t = mats[0].shape[0]
    if any(mat.shape != (t, model.d) for mat in mats):
        raise ValueError("token-axis batches need one shared token count")
    x = np.stack(mats)  # B x t x d
    m = n_one_sided(t)
    if stats.n_bins != m:
        raise ValueError("stats do not match the spectrum size")
    kern = fourier_kernel(t)[:m]

    z = x @ model.adapter_w.T + model.adapter_b
    means = z.mean(axis=1, keepdims=True)
    spectra = np.matmul(kern, (z - means).astype(np.complex128))
    spectra[:, 0, :] += t * means[:, 0, :]

    partitions = [
        stats.policy.partition_for(m, *_record_counts(r, fallback_rows=t))
        for r in records
    ]
    keep = model.config.band_keep
    mask = _mask_multipliers(partitions, keep)
    # Per-bin magnitudes averaged over neurons: the one modulus vector per
    # sample that alignment, rescaling, and corpus statistics all share.
    masked_moduli = np.abs(spectra * mask[:, :, None]).mean(axis=2)
    alphas = _resolve_alphas(model.config, stats, masked_moduli, partitions, alpha_override)
    multiplier = _mask_multipliers(partitions, keep, *alphas)
    reconstructed = spectra * multiplier[:, :, None]

    weights = one_sided_weights(t)
    token_features = np.matmul(np.conj(kern).T, weights[:, None] * reconstructed).real / t
    features = token_features.mean(axis=1)
    logits = features @ model.head_w.T + model.head_b
    return BatchTape(
        config=model.config,
        signal_length=t,
        partitions=partitions,
        alphas=alphas,
        inputs=x,
        adapted=z,
        spectra=spectra,
        multiplier=multiplier,
        reconstructed=reconstructed,
        moduli=np.abs(reconstructed).mean(axis=2),
        features=features,
        logits=logits,
        token_features=token_features,
    )


def forward(
    model: DetectorModel,
    record,
    stats: GlobalSpectrumStats,
    batch_context: BatchContext | None = None,
) -> tuple[np.ndarray, BatchTape]:
    """Single-record surface over the batched pipeline.

    With FSR enabled the caller must supply the batch mean moduli through
    batch_context; a record is not a batch statistic by itself.
    """
    override = None
    if model.config.fsr_enabled:
        if batch_context is None:
            raise ValueError("fsr_enabled forward needs a batch_context")
        override = compute_alphas(stats, batch_context.mu_mid, batch_context.mu_high)
    tape = forward_batch(model, [record], stats, alpha_override=override)
    return tape.logits[0], tape


def cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Two-class softmax cross-entropy, stabilized; grad = softmax - onehot."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape != (2,):
        raise ValueError("logits must have length 2")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    loss = float(np.logaddexp(0.0, z[1 - label] - z[label]))
    shifted = z - z.max()
    soft = np.exp(shifted)
    soft /= soft.sum()
    grad = soft
    grad[label] -= 1.0
    return loss, grad


def cross_entropy_batch(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy; grads carry the 1/B factor already."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or z.shape[1] != 2 or z.shape[0] != y.size:
        raise ValueError("mismatched logits and labels")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    b = y.size
    rows = np.arange(b)
    losses = np.logaddexp(0.0, z[rows, 1 - y] - z[rows, y])
    shifted = z - z.max(axis=1, keepdims=True)
    soft = np.exp(shifted)
    soft /= soft.sum(axis=1, keepdims=True)
    grads = soft
    grads[rows, y] -= 1.0
    return float(losses.mean()), grads / b


def predict_labels(logits: np.ndarray) -> np.ndarray:
    """Argmax predictions; an exact tie goes to label 0 (first index wins)."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    return np.argmax(z, axis=1)


def backward(
    model: DetectorModel,
    tape: BatchTape,
    grad_logits: np.ndarray,
    grad_moduli_from_fsa: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Accumulate parameter gradients from the classification path and,
    optionally, the alignment path joining at the modulus spectra.

    The rescaling factors recorded on the tape are constants here; upstream
    gradients must already carry any batch-mean scaling.
    """
    if tape.config != model.config:
        raise ValueError("tape does not match the model configuration")
    gl = np.asarray(grad_logits, dtype=np.float64)
    if gl.shape != tape.logits.shape:
        raise ValueError("grad_logits shape does not match the tape")

    grads = {
        "head_w": gl.T @ tape.features,
        "head_b": gl.sum(axis=0),
    }
    gfeat = gl @ model.head_w

    n = tape.signal_length
    m = n_one_sided(n)
    kern = fourier_kernel(n)[:m]
    weights = one_sided_weights(n)

    if model.config.spectral_axis == TOKEN_AXIS:
        t = n
        b = tape.batch_size
        gtok = np.broadcast_to(gfeat[:, None, :] / t, tape.inputs.shape)
        gspec = (weights[:, None] / t) * np.matmul(kern, gtok.astype(np.complex128))
        if grad_moduli_from_fsa is not None:
            gmod = np.asarray(grad_moduli_from_fsa, dtype=np.float64)
            if gmod.shape != tape.moduli.shape:
                raise ValueError("grad_moduli shape does not match the tape")
            mags = np.abs(tape.reconstructed)
            scale = np.divide(
                gmod[:, :, None] / tape.inputs.shape[2],
                mags,
                out=np.zeros_like(mags),
                where=mags > 0.0,
            )
            gspec = gspec + scale * tape.reconstructed
        gspec = tape.multiplier[:, :, None] * gspec
        gz = np.matmul(kern.real.T, gspec.real) + np.matmul(kern.imag.T, gspec.imag)
        grads["adapter_w"] = np.einsum("bti,btj->ij", gz, tape.inputs)
        grads["adapter_b"] = gz.sum(axis=(0, 1))
        return grads

    gspec = (weights / n) * (gfeat @ kern.T)
    if grad_moduli_from_fsa is not None:
        gmod = np.asarray(grad_moduli_from_fsa, dtype=np.float64)
        if gmod.shape != tape.moduli.shape:
            raise ValueError("grad_moduli shape does not match the tape")
        scale = np.divide(
            gmod, tape.moduli, out=np.zeros_like(gmod), where=tape.moduli > 0.0
        )
        gspec = gspec + scale * tape.reconstructed
    gspec = tape.multiplier * gspec
    gz = gspec.real @ kern.real + gspec.imag @ kern.imag
    grads["adapter_w"] = gz.T @ tape.inputs
    grads["adapter_b"] = gz.sum(axis=0)
    return grads


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass(frozen=True)
class OptimizerState:
    step_count: int
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    hyper: AdamHyper = field(default_factory=AdamHyper)


def optimizer_init(params: dict[str, np.ndarray], hyper: AdamHyper | None = None) -> OptimizerState:
    zeros = lambda: {k: np.zeros_like(v) for k, v in params.items()}
    return OptimizerState(
        step_count=0,
        first_moment=zeros(),
        second_moment=zeros(),
        hyper=hyper if hyper is not None else AdamHyper(),
    )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One decoupled-weight-decay update; pure, bit-deterministic."""
    h = state.hyper
    step = state.step_count + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise DivergedError("diverged")
        m = h.beta1 * state.first_moment[name] + (1.0 - h.beta1) * g
        v = h.beta2 * state.second_moment[name] + (1.0 - h.beta2) * g * g
        m_hat = m / (1.0 - h.beta1**step)
        v_hat = v / (1.0 - h.beta2**step)
        new_params[name] = (
            theta - h.lr * m_hat / (np.sqrt(v_hat) + h.eps) - h.lr * h.weight_decay * theta
        )
        # Finite inputs can still overflow the update itself; that is
        # divergence, not a caller error.
        if not np.all(np.isfinite(new_params[name])):
            raise DivergedError("diverged")
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(
        state, step_count=step, first_moment=new_m, second_moment=new_v
    )


_CONFIG_BOOL = {"true": True, "false": False}


def encode_config(config: PipelineConfig) -> str:
    keep = ",".join("true" if b else "false" for b in config.band_keep)
    lines = [
        f"tau={config.tau!r}",
        f"xi={config.xi!r}",
        f"lff_enabled={str(config.lff_enabled).lower()}",
        f"fsr_enabled={str(config.fsr_enabled).lower()}",
        f"fsa_enabled={str(config.fsa_enabled).lower()}",
        f"band_keep={keep}",
        f"band_source={config.band_source}",
        f"fsr_inference={config.fsr_inference}",
        f"spectral_axis={config.spectral_axis}",
    ]
    return "\n".join(lines) + "\n"


def decode_config(text: str) -> PipelineConfig:
    fields: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        keep = tuple(_CONFIG_BOOL[b] for b in fields["band_keep"].split(","))
        return PipelineConfig(
            tau=float(fields["tau"]),
            xi=float(fields["xi"]),
            lff_enabled=_CONFIG_BOOL[fields["lff_enabled"]],
            fsr_enabled=_CONFIG_BOOL[fields["fsr_enabled"]],
            fsa_enabled=_CONFIG_BOOL[fields["fsa_enabled"]],
            band_keep=keep,
            band_source=fields["band_source"],
            fsr_inference=fields["fsr_inference"],
            spectral_axis=fields["spectral_axis"],
        )
    except KeyError as exc:
        raise ValueError(f"config block missing field {exc.args[0]!r}") from None


def _write_block(handle, array: np.ndarray) -> None:
    handle.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_exact(handle, count: int) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise ValueError("truncated checkpoint")
    return data


def _read_block(handle, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    data = _read_exact(handle, 8 * count)
    return np.frombuffer(data, dtype="<f8").reshape(shape).copy()


def _param_shapes(d: int) -> dict[str, tuple[int, ...]]:
    return {"adapter_w": (d, d), "adapter_b": (d,), "head_w": (2, d), "head_b": (2,)}


def save_checkpoint(path, model: DetectorModel, optimizer_state: OptimizerState | None = None) -> None:
    """Binary little-endian snapshot of parameters, config, and optionally
    the optimizer moments (needed to resume training bit-exactly)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, model.d))
        for name in PARAM_NAMES:
            _write_block(fh, getattr(model, name))
        blob = encode_config(model.config).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        if optimizer_state is None:
            fh.write(struct.pack("<B", 0))
            return
        fh.write(struct.pack("<B", 1))
        h = optimizer_state.hyper
        fh.write(
            struct.pack(
                "<Q5d", optimizer_state.step_count, h.lr, h.beta1, h.beta2, h.eps, h.weight_decay
            )
        )
        for moments in (optimizer_state.first_moment, optimizer_state.second_moment):
            for name in PARAM_NAMES:
                _write_block(fh, moments[name])


def load_checkpoint(path) -> tuple[DetectorModel, OptimizerState | None]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise ValueError("bad magic")
        version, d = struct.unpack("<II", _read_exact(fh, 8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        shapes = _param_shapes(d)
        blocks = {name: _read_block(fh, shapes[name]) for name in PARAM_NAMES}
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config = decode_config(_read_exact(fh, cfg_len).decode("utf-8"))
        model = DetectorModel(config=config, **blocks)
        (flag,) = struct.unpack("<B", _read_exact(fh, 1))
        if flag == 0:
            return model, None
        step, lr, beta1, beta2, eps, decay = struct.unpack("<Q5d", _read_exact(fh, 48))
        first = {name: _read_block(fh, shapes[name]) for name in PARAM_NAMES}
        second = {name: _read_block(fh, shapes[name]) for name in PARAM_NAMES}
        state = OptimizerState(
            step_count=step,
            first_moment=first,
            second_moment=second,
            hyper=AdamHyper(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=decay),
        )
        return model, state
