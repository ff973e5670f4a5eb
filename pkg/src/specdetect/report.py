"""Delimited reports and the figures rendered next to them.

Every artifact opens with the run's effective configuration so a table can
be traced back to the exact invocation that produced it: CSV files carry
`# key=value` comment lines above the header row, JSON artifacts embed a
"config" object, and the history log puts the config on its first line.
"""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

__all__ = [
    "config_lines",
    "write_csv",
    "write_stats_json",
    "write_history_log",
    "save_history_figure",
    "save_band_shift_figure",
    "save_f1_bar_figure",
    "save_tau_figure",
]


def config_lines(config: dict) -> list[str]:
    return [f"{key}={config[key]}" for key in sorted(config)]


def write_csv(path, fieldnames, rows, config: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for line in config_lines(config):
            handle.write(f"# {line}\n")
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path) -> tuple[dict, list[dict]]:
    """Inverse of write_csv: (config, rows) with string values."""
    config = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        header_lines = []
        for line in handle:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\n").partition("=")
                config[key] = value
            else:
                header_lines.append(line)
                break
        rows = list(csv.DictReader(header_lines + handle.readlines()))
    return config, rows


def write_stats_json(path, stats, config: dict) -> None:
    payload = {
        "config": dict(sorted(config.items())),
        "mu_bar_mid": stats.mu_bar_mid,
        "mu_bar_high": stats.mu_bar_high,
        "n_bins": stats.n_bins,
        "tau": stats.policy.tau,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")


def write_history_log(path, history, config: dict) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps({"config": dict(sorted(config.items()))}) + "\n")
        for row in history:
            handle.write(json.dumps(row) + "\n")


def _finish(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_history_figure(path, history) -> None:
    epochs = [row["epoch"] for row in history]
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in ("train_loss", "ce", "fsa"):
        ax_loss.plot(epochs, [row[key] for row in history], label=key)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    scored = [(row["epoch"], row["valid_f1"]) for row in history if row["valid_f1"] is not None]
    if scored:
        ax_f1.plot(*zip(*scored), marker="o")
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("validation F1")
    ax_f1.set_ylim(-0.02, 1.02)
    _finish(fig, path)


def save_band_shift_figure(path, rows) -> None:
    """Grouped bars: per perturbation kind, the three band shifts."""
    kinds = [row["kind"] for row in rows]
    x = range(len(kinds))
    width = 0.27
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(kinds), 3.5))
    for offset, band in zip((-width, 0.0, width), ("low", "mid", "high")):
        ax.bar(
            [i + offset for i in x],
            [float(row[f"mae_{band}"]) for row in rows],
            width=width,
            label=band,
        )
    ax.set_xticks(list(x))
    ax.set_xticklabels(kinds, rotation=20, ha="right")
    ax.set_ylabel("modulus MAE shift")
    ax.legend(title="band")
    _finish(fig, path)


def save_f1_bar_figure(path, rows, label_key="combo") -> None:
    labels = [row[label_key] for row in rows]
    fig, ax = plt.subplots(figsize=(1.8 + 1.1 * len(labels), 3.5))
    ax.bar(range(len(labels)), [float(row["f1_mean"]) for row in rows])
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("mean F1")
    ax.set_ylim(0.0, 1.05)
    _finish(fig, path)


def save_tau_figure(path, rows) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([float(r["tau"]) for r in rows], [float(r["f1_mean"]) for r in rows], marker="o")
    ax.set_xlabel("tau")
    ax.set_ylabel("mean F1")
    ax.set_ylim(0.0, 1.05)
    _finish(fig, path)
