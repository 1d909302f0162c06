"""Static SVG line charts of aggregated runs: mean trace plus a shaded ±SEM band."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from homeonet.harness.runner import shift_key  # noqa: E402

COLORS = {"homeostatic": "blue", "random": "green", "constant": "red"}
METRICS = {
    "accuracy": ("acc_mean", "acc_sem", "validation accuracy"),
    "lr": ("lr_mean", "lr_sem", "learning rate"),
}


class PlotError(ValueError):
    pass


@dataclass
class PlotSpec:
    metric: str = "accuracy"
    learners: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    title: str = ""
    log_y: bool = False
    width: float = 7.0
    height: float = 4.0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise PlotError(f"metric must be one of {', '.join(METRICS)}")


def parse_plot_spec(text: str) -> PlotSpec:
    """``key = value`` pairs, one per line or separated by ``;``."""
    kw = {}
    for part in text.replace(";", "\n").splitlines():
        part = part.split("#", 1)[0].strip()
        if not part:
            continue
        if "=" not in part:
            raise PlotError(f"expected 'key = value', got {part!r}")
        key, raw = (p.strip() for p in part.split("=", 1))
        if key in ("learners", "rates"):
            kw[key] = [p.strip() for p in raw.split(",") if p.strip()]
        elif key == "log_y":
            kw[key] = raw.lower() in ("true", "yes", "1", "on")
        elif key in ("width", "height"):
            kw[key] = float(raw)
        elif key in ("metric", "title"):
            kw[key] = raw
        else:
            raise PlotError(f"unknown plot key {key!r}")
    return PlotSpec(**kw)


def load_plot_spec(arg: str) -> PlotSpec:
    """A spec file path, or the spec text itself."""
    path = Path(arg)
    if path.is_file():
        return parse_plot_spec(path.read_text(encoding="utf-8"))
    return parse_plot_spec(arg)


def _rate_match(label: str, wanted) -> bool:
    if not wanted:
        return True
    for w in wanted:
        if w == label or shift_key(w) == shift_key(label):
            return True
    return False


def select(aggregates, spec: PlotSpec) -> dict:
    series = {}
    for r in aggregates:
        if spec.learners and r.learner not in spec.learners:
            continue
        if not _rate_match(r.shift_rate, spec.rates):
            continue
        series.setdefault((r.learner, r.shift_rate), []).append(r)
    for rows in series.values():
        rows.sort(key=lambda r: r.epoch)
    return series


def render_plot(aggregates, spec: PlotSpec | None = None) -> str:
    """SVG text for the selected series. Raises :class:`PlotError` if none match."""
    spec = spec or PlotSpec()
    series = select(aggregates, spec)
    if not series:
        raise PlotError("no aggregate rows match the plot selection")
    mean_key, sem_key, ylabel = METRICS[spec.metric]
    rates = sorted({rate for _, rate in series}, key=shift_key)
    styles = ["-", "--", ":", "-."]
    fig, ax = plt.subplots(figsize=(spec.width, spec.height))
    for (learner, rate), rows in sorted(series.items(),
                                        key=lambda kv: (kv[0][0], shift_key(kv[0][1]))):
        x = np.array([r.epoch for r in rows])
        y = np.array([getattr(r, mean_key) for r in rows])
        e = np.array([getattr(r, sem_key) for r in rows])
        color = COLORS.get(learner, "black")
        style = styles[rates.index(rate) % len(styles)]
        ax.plot(x, y, style, color=color, lw=1.5, label=f"{learner}, shift {rate}")
        ax.fill_between(x, y - e, y + e, color=color, alpha=0.2, lw=0)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if spec.log_y:
        ax.set_yscale("log")
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    buf = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": "homeonet", "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def write_plot(aggregates, spec: PlotSpec | None, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_plot(aggregates, spec), encoding="utf-8")
    return path
