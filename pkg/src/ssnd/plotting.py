"""Report figures rendered to files next to the CSV/JSON output."""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REPORT_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "svg.hashsalt": "ssnd",
}

# no timestamps or version strings, so reruns produce identical bytes
_META = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None}, "pdf": {"CreationDate": None, "Producer": None, "Creator": None}}


def _save(fig, path) -> None:
    ext = str(path).rsplit(".", 1)[-1].lower()
    fig.savefig(path, metadata=_META.get(ext), bbox_inches="tight")
    plt.close(fig)


def _palette(names):
    cmap = plt.get_cmap("tab10")
    return {n: cmap(i % 10) for i, n in enumerate(sorted(names))}


def plot_sweep(rows: Sequence, path) -> None:
    """DER against frame shift per threshold, with the error breakdown."""
    with plt.rc_context(REPORT_RC):
        fig, (ax_der, ax_parts) = plt.subplots(1, 2, figsize=(8, 3))
        by_tau = defaultdict(list)
        for r in rows:
            by_tau[r.tau].append(r)
        for tau in sorted(by_tau, reverse=True):
            rs = sorted(by_tau[tau], key=lambda r: r.shift_ms)
            ax_der.plot([r.shift_ms for r in rs], [100 * r.der for r in rs], marker="o", label=f"tau={tau:g}")
        ax_der.set_xlabel("frame shift (ms)")
        ax_der.set_ylabel("DER (%)")
        ax_der.legend(frameon=False)

        labels = [f"{r.shift_ms:g}/{r.tau:g}" for r in rows]
        x = range(len(rows))
        bottom = [0.0] * len(rows)
        for key, name in (("mi", "MI"), ("fa", "FA"), ("cf", "CF")):
            vals = [100 * getattr(r, key) for r in rows]
            ax_parts.bar(x, vals, bottom=bottom, label=name)
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax_parts.set_xticks(list(x))
        ax_parts.set_xticklabels(labels, rotation=45, ha="right")
        ax_parts.set_xlabel("shift (ms) / tau")
        ax_parts.set_ylabel("error (%)")
        ax_parts.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_activity(intervals: Sequence, path, title: str = "speaker activity") -> None:
    speakers = sorted({iv.speaker for iv in intervals})
    colors = _palette(speakers)
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=(8, 0.35 * max(len(speakers), 1) + 1))
        for row, spk in enumerate(speakers):
            spans = [(iv.start, iv.end - iv.start) for iv in intervals if iv.speaker == spk]
            ax.broken_barh(spans, (row - 0.4, 0.8), color=colors[spk])
        ax.set_yticks(range(len(speakers)))
        ax.set_yticklabels(speakers)
        ax.set_xlabel("time (s)")
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def plot_streams(assignment, path, title: str = "stream assignment") -> None:
    """Two lanes, one per output stream, coloured by speaker."""
    speakers = sorted({iv.speaker for iv in assignment.intervals})
    colors = _palette(speakers)
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=(8, 1.8))
        for s in (0, 1):
            for iv in assignment.on_stream(s):
                ax.broken_barh([(iv.start, iv.end - iv.start)], (s - 0.4, 0.8), color=colors[iv.speaker])
                ax.text((iv.start + iv.end) / 2, s, iv.speaker, ha="center", va="center", fontsize=6)
        ax.set_yticks([0, 1])
        ax.set_yticklabels(["stream 0", "stream 1"])
        ax.invert_yaxis()
        ax.set_xlabel("time (s)")
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)
