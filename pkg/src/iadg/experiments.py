"""Cross-domain evaluation protocols: leave-one-domain-out runs, ablation
grids, and report emission (CSV / JSON / standalone SVG plots).

Independent training runs can execute in parallel worker processes; the
worker count comes from the IADG_THREADS environment variable (default 1).
"""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import data, metrics, train

# flag sets for the component ablation (cumulative arms)
COMPONENT_ARMS = {
    "baseline": {"dkg": "off", "csa": "off", "whitening": "off"},
    "dkg": {"dkg": "dkg", "csa": "off", "whitening": "off"},
    "dkg_csa": {"dkg": "dkg", "csa": "csa", "whitening": "off"},
    "full": {"dkg": "dkg", "csa": "csa", "whitening": "asymmetric_iaw"},
}

KERNEL_ARMS = {
    "static_only": {"dkg": "static_only"},
    "dynamic_only": {"dkg": "dynamic_only"},
    "dkg": {"dkg": "dkg"},
}

STYLE_ARMS = {
    "random_mix": {"csa": "random_mix"},
    "csa": {"csa": "csa"},
}

WHITENING_ARMS = {
    "off": {"whitening": "off"},
    "full_iw": {"whitening": "full_iw"},
    "symmetric_iaw": {"whitening": "symmetric_iaw"},
    "asymmetric_iaw": {"whitening": "asymmetric_iaw"},
}

# spoof:real selective-ratio scans, as fractions of k_r
RATIO_ARMS = {"1:1": 1.0, "1:0.8": 0.8, "1:0.5": 0.5, "1:0.2": 0.2, "1:0.1": 0.1}


def n_workers():
    raw = os.environ.get("IADG_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"IADG_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValueError(f"IADG_THREADS must be >= 1, got {n}")
    return n


def _run_one(args):
    """Train on all sources but `holdout`, evaluate on `holdout`."""
    corpus, holdout, cfg_dict, train_domains = args
    cfg = train.TrainConfig.from_dict(cfg_dict)
    tr, te = data.split_corpus(corpus, holdout, train_domains)
    ckpt, log = train.train(cfg, tr, eval_set=te)
    model, _, _, _ = train.checkpoint_to_model(ckpt)
    scores = train.predict(model, te.images, cfg)
    eer, thr, hter = metrics.eer_hter(scores, te.y_cls)
    return {
        "holdout": holdout,
        "seed": cfg.seed,
        "auc": metrics.auc(scores, te.y_cls),
        "hter": hter,
        "eer": eer,
        "threshold": thr,
        "masked_cov_epoch1": log[0].get("eval_masked_cov", log[0]["train_masked_cov"]),
        "masked_cov_final": log[-1].get("eval_masked_cov", log[-1]["train_masked_cov"]),
        "log": log,
        "scores": scores.tolist(),
        "labels": np.asarray(te.y_cls).tolist(),
    }


def _map_jobs(jobs):
    workers = n_workers()
    if workers == 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def run_loo(cfg, corpus, seeds=(0,), holdouts=None, train_domains=None):
    """Leave-one-domain-out sweep; returns per-(holdout, seed) rows plus a
    mean row.  `train_domains` restricts the sources (limited-source mode)."""
    ids = [d.id for d in corpus.domains]
    if holdouts is None:
        holdouts = ids if train_domains is None else [i for i in ids if i not in train_domains]
    jobs = []
    for hold in holdouts:
        for seed in seeds:
            d = cfg.to_dict()
            d["seed"] = int(seed)
            jobs.append((corpus, hold, d, train_domains))
    rows = _map_jobs(jobs)
    summary = {
        "holdout": "mean",
        "seed": -1,
        "auc": float(np.mean([r["auc"] for r in rows])),
        "hter": float(np.mean([r["hter"] for r in rows])),
        "eer": float(np.mean([r["eer"] for r in rows])),
    }
    return rows, summary


def _arm_grid(axis, base_cfg):
    base = base_cfg.to_dict()
    if axis == "components":
        return {name: dict(base, **flags) for name, flags in COMPONENT_ARMS.items()}
    if axis == "kernel":
        return {name: dict(base, **flags) for name, flags in KERNEL_ARMS.items()}
    if axis == "style":
        return {name: dict(base, **flags) for name, flags in STYLE_ARMS.items()}
    if axis == "whitening":
        return {name: dict(base, **flags) for name, flags in WHITENING_ARMS.items()}
    if axis == "ratio":
        return {name: dict(base, k_s=base["k_r"] * frac)
                for name, frac in RATIO_ARMS.items()}
    raise ValueError(f"unknown ablation axis {axis!r}")


def run_ablation(base_cfg, corpus, axis="components", seeds=(0, 1, 2), holdouts=None):
    """One ablation axis over all holdouts and seeds; shared seeds per arm.

    Returns {arm: {"rows": [...], "mean_auc": ..., "mean_hter": ...}}.
    """
    grids = _arm_grid(axis, base_cfg)
    results = {}
    for name, cfg_dict in grids.items():
        cfg = train.TrainConfig.from_dict(cfg_dict)
        rows, summary = run_loo(cfg, corpus, seeds=seeds, holdouts=holdouts)
        results[name] = {"rows": rows, "mean_auc": summary["auc"],
                         "mean_hter": summary["hter"], "config": cfg_dict}
    return results


# ---------------------------------------------------------------------------
# report emission

RESULT_FIELDS = ("holdout", "seed", "auc", "hter", "eer", "threshold",
                 "masked_cov_epoch1", "masked_cov_final")


def write_results_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in RESULT_FIELDS})


def write_results_json(payload, path):
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (np.integer,)):
            return int(obj)
        if isinstance(obj, (np.floating,)):
            return float(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return obj
    with open(path, "w") as fh:
        json.dump(clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# minimal standalone SVG line plots (no plotting dependency)

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_header(width, height, title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2}" y="18" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title}</text>',
    ]


def _axes(x0, y0, x1, y1, xlabel, ylabel):
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<text x="{(x0+x1)/2}" y="{y0+30}" text-anchor="middle" font-size="11" '
        f'font-family="sans-serif">{xlabel}</text>',
        f'<text x="{x0-30}" y="{(y0+y1)/2}" text-anchor="middle" font-size="11" '
        f'font-family="sans-serif" transform="rotate(-90 {x0-30} {(y0+y1)/2})">{ylabel}</text>',
    ]


def _polyline(xs, ys, xlim, ylim, box, color):
    x0, y0, x1, y1 = box  # y0 = bottom (svg max y), y1 = top
    sx = lambda v: x0 + (v - xlim[0]) / (xlim[1] - xlim[0] or 1.0) * (x1 - x0)
    sy = lambda v: y0 - (v - ylim[0]) / (ylim[1] - ylim[0] or 1.0) * (y0 - y1)
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'


def plot_roc(curves, path, title="ROC"):
    """curves: list of (label, scores, y_cls); writes an SVG ROC plot."""
    w, h = 420, 420
    box = (60, h - 50, w - 20, 40)
    parts = _svg_header(w, h, title)
    parts += _axes(box[0], box[1], box[2], box[3], "false positive rate", "true positive rate")
    parts.append(_polyline([0, 1], [0, 1], (0, 1), (0, 1), box, "#cccccc"))
    for i, (label, scores, labels) in enumerate(curves):
        fpr, tpr = metrics.roc_points(np.asarray(scores), np.asarray(labels))
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(_polyline(fpr, tpr, (0, 1), (0, 1), box, color))
        parts.append(f'<text x="{box[0]+8}" y="{box[3]+14+14*i}" font-size="11" '
                     f'font-family="sans-serif" fill="{color}">{label} '
                     f'(auc {metrics.auc(np.asarray(scores), np.asarray(labels)):.3f})</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def plot_curves(series, path, title="training curves", xlabel="epoch", ylabel="value"):
    """series: list of (label, xs, ys); writes an SVG line plot."""
    w, h = 460, 340
    box = (60, h - 50, w - 20, 40)
    all_x = np.concatenate([np.asarray(xs, dtype=float) for _, xs, _ in series])
    all_y = np.concatenate([np.asarray(ys, dtype=float) for _, _, ys in series])
    xlim = (float(all_x.min()), float(all_x.max()))
    ylim = (min(0.0, float(all_y.min())), float(all_y.max()) * 1.05 or 1.0)
    parts = _svg_header(w, h, title)
    parts += _axes(box[0], box[1], box[2], box[3], xlabel, ylabel)
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(_polyline(np.asarray(xs, float), np.asarray(ys, float), xlim, ylim, box, color))
        parts.append(f'<text x="{box[0]+8}" y="{box[3]+14+14*i}" font-size="11" '
                     f'font-family="sans-serif" fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
