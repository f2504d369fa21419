"""Metrics, per-activity breakdowns, feature ablation and data-fraction runs.

Component MAEs average ``|o - t|`` per time of interest. The TOT MAE uses the
max rule on both sides, ``|max(o) - max(t)|``, so it is not a function of
the component MAEs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .episodes import Episode
from .errors import ConfigError, ShapeError, TrainingError
from .features import ABLATION_MASKS, FAMILY_ORDER, Activity, FeatureMask
from .model import ModelConfig, ModelParams
from .splits import subsample_stratified
from .training import TrainConfig, build_windows, predict, train

log = logging.getLogger(__name__)

METRICS = ("e", "f", "h", "tot")
MAE_COLUMNS = tuple(f"mae_{m}" for m in METRICS)

# Published figures on a private dataset; shown in report footers for context only.
REFERENCE_MAE = {
    "validation TOT, full features": 0.7912,
    "test TOT, ID-LSTMs": 0.9144,
    "test TOT, single LSTM": 0.9457,
}
REFERENCE_NOTE = "published reference values, private dataset, not a target"


@dataclass(frozen=True)
class ActivityRow:
    activity: str
    n: int
    mae: tuple[float, float, float, float]
    sd: tuple[float, float, float, float]  # SD of the absolute errors
    mean_tot: float
    tot_var: float


@dataclass(frozen=True)
class EvalReport:
    mae: tuple[float, float, float, float]  # e, f, h, TOT
    n: int
    sd: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    per_activity: tuple[ActivityRow, ...] = ()
    model_id: str = ""
    dataset_id: str = ""

    @property
    def tot_mae(self) -> float:
        return self.mae[3]

    def row(self, activity: Activity | str) -> ActivityRow | None:
        label = activity.label if isinstance(activity, Activity) else activity
        return next((r for r in self.per_activity if r.activity == label), None)


def _as_triples(values: Sequence, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeError(f"{name} must be a list of (e, f, h) triples, got shape {arr.shape}")
    return arr


def abs_errors(predictions: Sequence, targets: Sequence) -> np.ndarray:
    """Per-sample absolute errors, columns (e, f, h, TOT)."""
    p = _as_triples(predictions, "predictions")
    t = _as_triples(targets, "targets")
    if p.shape[0] != t.shape[0]:
        raise ShapeError(f"{p.shape[0]} predictions for {t.shape[0]} targets")
    if p.shape[0] == 0:
        raise ShapeError("cannot evaluate an empty set")
    err = np.empty((p.shape[0], 4))
    err[:, :3] = np.abs(p - t)
    err[:, 3] = np.abs(p.max(axis=1) - t.max(axis=1))
    return err


def _tuple4(v: np.ndarray) -> tuple[float, float, float, float]:
    return (float(v[0]), float(v[1]), float(v[2]), float(v[3]))


def compute_mae(predictions: Sequence, targets: Sequence) -> EvalReport:
    err = abs_errors(predictions, targets)
    return EvalReport(mae=_tuple4(err.mean(axis=0)), n=err.shape[0], sd=_tuple4(err.std(axis=0)))


def evaluate(predictions: Sequence, targets: Sequence, activities: Sequence[Activity | None],
             model_id: str = "", dataset_id: str = "") -> EvalReport:
    """Overall metrics plus one row per activity present (unlabeled samples count overall only)."""
    err = abs_errors(predictions, targets)
    t = np.asarray(targets, dtype=np.float64)
    acts = list(activities)
    if len(acts) != err.shape[0]:
        raise ShapeError(f"{len(acts)} activity labels for {err.shape[0]} samples")
    rows = []
    for act in Activity:
        sel = np.array([a is not None and int(a) == int(act) for a in acts])
        if not sel.any():
            continue
        e = err[sel]
        tot = t[sel].max(axis=1)
        rows.append(ActivityRow(act.label, int(sel.sum()), _tuple4(e.mean(axis=0)), _tuple4(e.std(axis=0)),
                                float(tot.mean()), float(tot.var())))
    return EvalReport(mae=_tuple4(err.mean(axis=0)), n=err.shape[0], sd=_tuple4(err.std(axis=0)),
                      per_activity=tuple(rows), model_id=model_id, dataset_id=dataset_id)


def params_digest(params: ModelParams) -> str:
    h = hashlib.sha256()
    for name, arr in params.named().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()[:12]


def dataset_digest(episodes: Sequence[Episode]) -> str:
    h = hashlib.sha256()
    for eid in sorted(ep.episode_id for ep in episodes):
        h.update(eid.encode() + b"\0")
    return h.hexdigest()[:12]


def per_activity_report(params: ModelParams, config: ModelConfig, episodes: Sequence[Episode]) -> EvalReport:
    x, y = build_windows(config, episodes)
    return evaluate(predict(params, x), y, [ep.activity for ep in episodes],
                    model_id=params_digest(params), dataset_id=dataset_digest(episodes))


# Ablation

@dataclass(frozen=True)
class AblationRow:
    mask: FeatureMask
    report: EvalReport
    best_epoch: int


@dataclass(frozen=True)
class AblationTable:
    rows: tuple[AblationRow, ...]

    def best(self) -> AblationRow:
        return min(self.rows, key=lambda r: r.report.tot_mae)

    def find(self, mask: FeatureMask | str) -> AblationRow:
        code = mask if isinstance(mask, str) else mask.code
        code = FeatureMask.parse(code).code
        for r in self.rows:
            if r.mask.code == code:
                return r
        raise KeyError(code)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*FAMILY_ORDER, *MAE_COLUMNS])
        for r in self.rows:
            flags = [int(f in r.mask.families) for f in FAMILY_ORDER]
            w.writerow([*flags, *(f"{v:.6f}" for v in r.report.mae)])
        return buf.getvalue()


def _check_spec(spec: Sequence[FeatureMask]) -> list[FeatureMask]:
    masks = [FeatureMask.parse(m) if isinstance(m, str) else m for m in spec]
    if not masks:
        raise ConfigError("ablation spec is empty")
    codes = [m.code for m in masks]
    if any(m.is_empty() for m in masks):
        raise ConfigError("ablation masks must be non-empty")
    if len(set(codes)) != len(codes):
        raise ConfigError(f"ablation masks must be unique, got {codes}")
    return masks


def run_ablation(train_set: Sequence[Episode], val_set: Sequence[Episode],
                 spec: Sequence[FeatureMask | str] = ABLATION_MASKS, hyper: TrainConfig | None = None,
                 base: ModelConfig | None = None, seed: int | None = None) -> AblationTable:
    """Train one model from scratch per mask with the same seed and hyperparameters.

    Each row reports validation metrics of the best-epoch parameters.
    """
    masks = _check_spec(spec)
    hyper = hyper or TrainConfig()
    if seed is not None:
        hyper = replace(hyper, seed=seed)
    base = base or ModelConfig()
    rows = []
    for mask in masks:
        config = replace(base, mask=mask)
        try:
            params, history = train(config, train_set, val_set, hyper)
        except TrainingError as exc:
            raise TrainingError(f"ablation mask {mask.code}: {exc}") from exc
        report = per_activity_report(params, config, val_set)
        log.info("ablation %s: val TOT MAE %.4f", mask.code, report.tot_mae)
        rows.append(AblationRow(mask, report, history.best_epoch))
    return AblationTable(tuple(rows))


# Data fraction

@dataclass(frozen=True)
class FractionRow:
    fraction: float
    n_train: int
    report: EvalReport


@dataclass(frozen=True)
class FractionTable:
    rows: tuple[FractionRow, ...]
    stratified: bool = True

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fraction", "n_train", *MAE_COLUMNS])
        for r in self.rows:
            w.writerow([f"{r.fraction:g}", r.n_train, *(f"{v:.6f}" for v in r.report.mae)])
        return buf.getvalue()


def data_fraction_experiment(train_set: Sequence[Episode], val_set: Sequence[Episode],
                             test_set: Sequence[Episode], fractions: Sequence[float] = (0.75, 0.9, 1.0),
                             hyper: TrainConfig | None = None, config: ModelConfig | None = None,
                             seed: int | None = None) -> FractionTable:
    """Subsample only the training split (stratified by activity), train, evaluate on test."""
    hyper = hyper or TrainConfig()
    if seed is not None:
        hyper = replace(hyper, seed=seed)
    config = config or ModelConfig()
    for f in fractions:
        if not 0 < f <= 1:
            raise ConfigError(f"fraction must lie in (0, 1], got {f}")
    rows = []
    for f in fractions:
        subset = subsample_stratified(train_set, f, hyper.seed)
        params, _ = train(config, subset, val_set, hyper)
        rows.append(FractionRow(float(f), len(subset), per_activity_report(params, config, test_set)))
    return FractionTable(tuple(rows))


# Report rendering

def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "n", *MAE_COLUMNS])
    w.writerow(["overall", report.n, *(f"{v:.6f}" for v in report.mae)])
    for r in report.per_activity:
        w.writerow([r.activity, r.n, *(f"{v:.6f}" for v in r.mae)])
    return buf.getvalue()


def report_markdown(report: EvalReport) -> str:
    lines = [
        f"# Evaluation report (model {report.model_id or 'n/a'}, dataset {report.dataset_id or 'n/a'})",
        "",
        "| group | n | eyes MAE (s) | foot MAE (s) | hands MAE (s) | TOT MAE (s) | mean TOT (s) |",
        "|---|---:|---:|---:|---:|---:|---:|",
    ]

    def cells(mae, sd):
        return " | ".join(f"{m:.4f} ± {s:.4f}" for m, s in zip(mae, sd))

    lines.append(f"| overall | {report.n} | {cells(report.mae, report.sd)} | |")
    for r in report.per_activity:
        lines.append(f"| {r.activity} | {r.n} | {cells(r.mae, r.sd)} | {r.mean_tot:.4f} |")
    lines += ["", f"Errors are MAE ± one SD of the absolute errors. {_footer()}", ""]
    return "\n".join(lines)


def _footer() -> str:
    refs = ", ".join(f"{k} {v:.4f} s" for k, v in REFERENCE_MAE.items())
    return f"For context ({REFERENCE_NOTE}): {refs}."


_COLORS = {"e": "#4c72b0", "f": "#55a868", "h": "#c44e52", "tot": "#8172b2"}


def report_svg(report: EvalReport) -> str:
    """Grouped bar chart: one group per activity, bars e/f/h/TOT with SD whiskers."""
    rows = report.per_activity or (ActivityRow("overall", report.n, report.mae, report.sd, 0.0, 0.0),)
    bar_w, gap, left, top, plot_h = 14, 20, 50, 30, 220
    group_w = 4 * bar_w + gap
    width = left + len(rows) * group_w + 20
    height = top + plot_h + 90
    vmax = max(max(m + s for m, s in zip(r.mae, r.sd)) for r in rows)
    vmax = max(vmax, 1e-9) * 1.1

    def y(v: float) -> float:
        return top + plot_h * (1 - v / vmax)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
        f'<text x="{left}" y="16" font-size="12">MAE per secondary activity (s), bars ± 1 SD</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{width - 10}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for k in range(5):
        v = vmax * k / 4
        out.append(f'<text x="{left - 4}" y="{y(v) + 3:.2f}" text-anchor="end">{v:.2f}</text>')
    for i, r in enumerate(rows):
        x0 = left + gap / 2 + i * group_w
        out.append(f'<g class="activity" data-activity="{escape(r.activity)}">')
        for j, metric in enumerate(METRICS):
            m, s = r.mae[j], r.sd[j]
            bx = x0 + j * bar_w
            out.append(f'<rect class="bar-{metric}" x="{bx:.2f}" y="{y(m):.2f}" width="{bar_w - 2}" '
                       f'height="{top + plot_h - y(m):.2f}" fill="{_COLORS[metric]}"/>')
            cx = bx + (bar_w - 2) / 2
            out.append(f'<line x1="{cx:.2f}" y1="{y(m + s):.2f}" x2="{cx:.2f}" '
                       f'y2="{y(max(m - s, 0.0)):.2f}" stroke="black"/>')
        lx = x0 + 2 * bar_w
        out.append(f'<text x="{lx:.2f}" y="{top + plot_h + 12}" text-anchor="end" '
                   f'transform="rotate(-35 {lx:.2f} {top + plot_h + 12})">{escape(r.activity)}</text>')
        out.append("</g>")
    for j, metric in enumerate(METRICS):
        lx = left + j * 70
        out.append(f'<rect x="{lx}" y="{height - 30}" width="10" height="10" fill="{_COLORS[metric]}"/>')
        out.append(f'<text x="{lx + 14}" y="{height - 21}">{metric}</text>')
    out.append(f'<text x="{left}" y="{height - 6}" font-size="8">{escape(_footer())}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


_RENDERERS = {"csv": report_csv, "markdown": report_markdown, "md": report_markdown, "svg": report_svg}


def render_report(report: EvalReport, fmt: str) -> str:
    try:
        return _RENDERERS[fmt](report)
    except KeyError:
        raise ConfigError(f"unknown report format {fmt!r}; choose csv, svg or markdown") from None


def emit_report(report: EvalReport, fmt: str, path: str | Path) -> Path:
    """Write a deterministic rendering of ``report``; the same report gives the same bytes."""
    text = render_report(report, fmt)
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror}") from exc
    return path
