"""Frequency-band bookkeeping: partitioning, masking, and batch rescaling.

A one-sided spectrum of n_bins entries is split into three contiguous bands.
The low band width scales inversely with the document's token count, and the
mid/high boundary interpolates (via tau) between a sentence-count-driven
cutoff and the remainder of the spectrum:

    d_low = ceil(n_bins / t_num)
    d_mid = ceil((n_bins / s_num) * tau + (n_bins - d_low) * (1 - tau))

both clamped into [0, n_bins - 1] with d_mid >= d_low.  Bands are then
low = [0, d_low], mid = [d_low + 1, d_mid], high = [d_mid + 1, n_bins - 1];
a band whose range is empty stays empty.

Rescaling: each batch's mid and high mean moduli are pulled onto frozen
corpus-level means by one multiplicative factor per band.  The factors are
treated as constants during differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .numerics import OneSidedSpectrum, dft, from_one_sided, idft, modulus, to_one_sided

__all__ = [
    "BandPartition",
    "GlobalSpectrumStats",
    "PartitionPolicy",
    "apply_band_mask",
    "band_multiplier",
    "batch_band_moduli",
    "compute_alphas",
    "compute_band_partition",
    "compute_global_stats",
    "load_stats",
    "reconstruct_spectrum",
    "save_stats",
    "spectrum_to_features",
]

PER_SAMPLE = "per_sample"
CORPUS_AVERAGE = "corpus_average"


@dataclass(frozen=True)
class BandPartition:
    """Inclusive [start, end] bin ranges; end < start means the band is empty."""

    n_bins: int
    low: tuple[int, int]
    mid: tuple[int, int]
    high: tuple[int, int]

    def band_slice(self, name: str) -> slice:
        start, end = getattr(self, name)
        return slice(start, end + 1)

    def band_size(self, name: str) -> int:
        start, end = getattr(self, name)
        return max(0, end - start + 1)


def compute_band_partition(n_bins: int, t_num: int, s_num: int, tau: float) -> BandPartition:
    if n_bins < 1 or t_num < 1 or s_num < 1:
        raise ValueError("invalid counts")
    if not (0.0 <= tau <= 1.0) or not math.isfinite(tau):
        raise ValueError("tau must lie in [0, 1]")
    d_low = math.ceil(n_bins / t_num)
    d_low = min(max(d_low, 0), n_bins - 1)
    d_mid = math.ceil((n_bins / s_num) * tau + (n_bins - d_low) * (1.0 - tau))
    d_mid = min(max(d_mid, 0), n_bins - 1)
    d_mid = max(d_mid, d_low)
    return BandPartition(
        n_bins=n_bins,
        low=(0, d_low),
        mid=(d_low + 1, d_mid),
        high=(d_mid + 1, n_bins - 1),
    )


@dataclass(frozen=True)
class PartitionPolicy:
    """How partitions are derived for a corpus.

    per_sample: every record contributes its own token/sentence counts.
    corpus_average: one shared partition from rounded corpus-mean counts.
    """

    tau: float = 0.6
    band_source: str = PER_SAMPLE
    avg_t_num: int | None = None
    avg_s_num: int | None = None

    def __post_init__(self):
        if self.band_source not in (PER_SAMPLE, CORPUS_AVERAGE):
            raise ValueError(f"unknown band_source: {self.band_source!r}")
        if self.band_source == CORPUS_AVERAGE and (
            self.avg_t_num is None or self.avg_s_num is None
        ):
            raise ValueError("corpus_average policy needs avg_t_num and avg_s_num")

    def partition_for(self, n_bins: int, t_num: int, s_num: int) -> BandPartition:
        if self.band_source == CORPUS_AVERAGE:
            t_num, s_num = self.avg_t_num, self.avg_s_num
        return compute_band_partition(n_bins, t_num, s_num, self.tau)

    @staticmethod
    def averaged(tau: float, t_nums: Sequence[int], s_nums: Sequence[int]) -> "PartitionPolicy":
        if len(t_nums) == 0:
            raise ValueError("empty corpus")
        return PartitionPolicy(
            tau=tau,
            band_source=CORPUS_AVERAGE,
            avg_t_num=max(1, round(float(np.mean(t_nums)))),
            avg_s_num=max(1, round(float(np.mean(s_nums)))),
        )


def band_multiplier(
    partition: BandPartition,
    keep: tuple[bool, bool, bool],
    alpha_mid: float = 1.0,
    alpha_high: float = 1.0,
) -> np.ndarray:
    """Per-bin real multiplier combining a keep/drop mask with band rescaling."""
    mult = np.zeros(partition.n_bins)
    for name, kept, alpha in (
        ("low", keep[0], 1.0),
        ("mid", keep[1], alpha_mid),
        ("high", keep[2], alpha_high),
    ):
        if kept:
            mult[partition.band_slice(name)] = alpha
    return mult


def apply_band_mask(
    spectrum: OneSidedSpectrum, partition: BandPartition, keep: tuple[bool, bool, bool]
) -> OneSidedSpectrum:
    """Zero every bin of each dropped band; kept bins pass through unchanged."""
    if partition.n_bins != spectrum.n_bins:
        raise ValueError("partition does not match the spectrum")
    bins = spectrum.bins * band_multiplier(partition, keep)
    return OneSidedSpectrum(bins=bins, original_length=spectrum.original_length)


def _pooled_band_mean(
    moduli: Sequence[np.ndarray], partitions: Sequence[BandPartition], name: str
) -> float:
    total = 0.0
    count = 0
    for mod, part in zip(moduli, partitions):
        sl = part.band_slice(name)
        total += float(np.sum(mod[sl]))
        count += part.band_size(name)
    return total / count if count else 0.0


def _normalize_partitions(spectra_count, partition) -> list[BandPartition]:
    if isinstance(partition, BandPartition):
        return [partition] * spectra_count
    parts = list(partition)
    if len(parts) != spectra_count:
        raise ValueError("need one partition per spectrum")
    return parts


def batch_band_moduli(spectra: Sequence[OneSidedSpectrum], partition) -> tuple[float, float]:
    """Mean modulus over all (sample, bin) entries of the mid and high bands.

    `partition` is either one shared BandPartition or a sequence aligned with
    `spectra`.  Entries pool across the whole batch; an empty band gives 0.
    """
    spectra = list(spectra)
    if not spectra:
        raise ValueError("empty batch")
    parts = _normalize_partitions(len(spectra), partition)
    moduli = [modulus(s) for s in spectra]
    return (
        _pooled_band_mean(moduli, parts, "mid"),
        _pooled_band_mean(moduli, parts, "high"),
    )


@dataclass(frozen=True)
class GlobalSpectrumStats:
    """Frozen corpus-level mean moduli used as rescaling targets."""

    mu_bar_mid: float
    mu_bar_high: float
    n_bins: int
    policy: PartitionPolicy


def compute_alphas(stats: GlobalSpectrumStats, mu_mid: float, mu_high: float) -> tuple[float, float]:
    """Rescaling factors alpha = mu_bar / mu, with alpha = 1 when mu is 0."""
    alpha_mid = stats.mu_bar_mid / mu_mid if mu_mid > 0.0 else 1.0
    alpha_high = stats.mu_bar_high / mu_high if mu_high > 0.0 else 1.0
    return alpha_mid, alpha_high


def reconstruct_spectrum(
    spectrum: OneSidedSpectrum,
    partition: BandPartition,
    alpha_mid: float,
    alpha_high: float,
) -> OneSidedSpectrum:
    """Scale the mid band by alpha_mid and the high band by alpha_high."""
    if partition.n_bins != spectrum.n_bins:
        raise ValueError("partition does not match the spectrum")
    bins = spectrum.bins.copy()
    bins[partition.band_slice("mid")] *= alpha_mid
    bins[partition.band_slice("high")] *= alpha_high
    return OneSidedSpectrum(bins=bins, original_length=spectrum.original_length)


def spectrum_to_features(spectrum: OneSidedSpectrum) -> np.ndarray:
    """Mirror back to the full Hermitian layout and invert to the signal domain."""
    return idft(from_one_sided(spectrum))


def compute_global_stats(
    training_samples: Iterable,
    adapter_fn,
    policy: PartitionPolicy,
) -> GlobalSpectrumStats:
    """Fold corpus-level mean band moduli over embedding records.

    Each record is pooled, pushed through `adapter_fn` (a signal -> signal
    callable, typically the model's adapter in its initial state), and
    transformed; mid/high moduli pool over all (record, bin) entries, with
    each record contributing its own partition under `policy`.  The record
    order of the iterator is the accumulation order, so results are
    deterministic.  The returned stats are meant to be frozen for a run.
    """
    total_mid = total_high = 0.0
    count_mid = count_high = 0
    n_bins = None
    for record in training_samples:
        spec = to_one_sided(dft(adapter_fn(record.pooled())))
        if n_bins is None:
            n_bins = spec.n_bins
        elif n_bins != spec.n_bins:
            raise ValueError("mixed spectrum sizes in one corpus")
        part = policy.partition_for(spec.n_bins, record.t_num, record.s_num)
        mod = modulus(spec)
        total_mid += float(np.sum(mod[part.band_slice("mid")]))
        count_mid += part.band_size("mid")
        total_high += float(np.sum(mod[part.band_slice("high")]))
        count_high += part.band_size("high")
    if n_bins is None:
        raise ValueError("empty training set")
    return GlobalSpectrumStats(
        mu_bar_mid=total_mid / count_mid if count_mid else 0.0,
        mu_bar_high=total_high / count_high if count_high else 0.0,
        n_bins=n_bins,
        policy=policy,
    )


def save_stats(path, stats: GlobalSpectrumStats, header_lines: Sequence[str] = ()) -> None:
    """Write stats as key=value lines; '#' lines are ignored on read."""
    lines = [f"# {h}" for h in header_lines]
    lines += [
        f"mu_bar_mid={stats.mu_bar_mid!r}",
        f"mu_bar_high={stats.mu_bar_high!r}",
        f"n_bins={stats.n_bins}",
        f"tau={stats.policy.tau!r}",
        f"band_source={stats.policy.band_source}",
    ]
    if stats.policy.band_source == CORPUS_AVERAGE:
        lines.append(f"avg_t_num={stats.policy.avg_t_num}")
        lines.append(f"avg_s_num={stats.policy.avg_s_num}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_stats(path) -> GlobalSpectrumStats:
    fields: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    try:
        policy = PartitionPolicy(
            tau=float(fields["tau"]),
            band_source=fields["band_source"],
            avg_t_num=int(fields["avg_t_num"]) if "avg_t_num" in fields else None,
            avg_s_num=int(fields["avg_s_num"]) if "avg_s_num" in fields else None,
        )
        return GlobalSpectrumStats(
            mu_bar_mid=float(fields["mu_bar_mid"]),
            mu_bar_high=float(fields["mu_bar_high"]),
            n_bins=int(fields["n_bins"]),
            policy=policy,
        )
    except KeyError as exc:
        raise ValueError(f"stats file missing field {exc}") from exc
