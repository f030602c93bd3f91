"""Command-line interface: dataset generation, training, evaluation,
ablation matrices, gradient self-check, and plot emission."""

import json
import os
import sys

import click
import numpy as np

from . import data, experiments, metrics, train
from . import tensor as T

CORPUS_NAME = "corpus.iadg"


def _corpus_path(path):
    return os.path.join(path, CORPUS_NAME) if os.path.isdir(path) else path


def _load_cfg(config_path, **overrides):
    base = {}
    if config_path:
        with open(config_path) as fh:
            base = json.load(fh)
    base.update({k: v for k, v in overrides.items() if v is not None})
    return train.TrainConfig.from_dict(base)


@click.group()
def main():
    """Cross-domain face liveness training on synthetic data."""


@main.command("gen-data")
@click.option("--domains", default=4, show_default=True, help="number of domains (max 4 presets)")
@click.option("--per-class", default=200, show_default=True, help="samples per class per domain")
@click.option("--size", default=64, show_default=True, help="image side length (multiple of 8)")
@click.option("--seed", default=17, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="output directory")
def gen_data(domains, per_class, size, seed, out):
    """Generate the synthetic multi-domain corpus."""
    presets = data.default_domains()
    if not 2 <= domains <= len(presets):
        raise click.ClickException(f"--domains must be in [2, {len(presets)}]")
    os.makedirs(out, exist_ok=True)
    corpus = data.build_corpus(presets[:domains], per_class, seed, size)
    path = os.path.join(out, CORPUS_NAME)
    data.write_dataset(path, corpus)
    click.echo(f"wrote {path}: {corpus.images.shape[0]} samples, "
               f"{domains} domains, size {size}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), help="TrainConfig JSON")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--holdout", required=True, help="held-out evaluation domain id")
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--out", required=True, type=click.Path())
@click.option("--resume", type=click.Path(exists=True), default=None,
              help="checkpoint to continue from")
def train_cmd(config_path, data_path, holdout, seed, out, resume):
    """Train on every domain except --holdout; evaluate on it each epoch."""
    cfg = _load_cfg(config_path, seed=seed)
    corpus = data.read_dataset(_corpus_path(data_path))
    tr, te = data.split_corpus(corpus, holdout)
    os.makedirs(out, exist_ok=True)
    ckpt_prev = train.load_checkpoint(resume) if resume else None
    try:
        ckpt, log = train.train(cfg, tr, eval_set=te, resume=ckpt_prev)
    except train.TrainingDiverged as e:
        if e.checkpoint is not None:
            train.save_checkpoint(os.path.join(out, "diverged.ckpt"), e.checkpoint)
        raise click.ClickException(str(e))
    train.save_checkpoint(os.path.join(out, "final.ckpt"), ckpt)
    model, _, _, _ = train.checkpoint_to_model(ckpt)
    scores = train.predict(model, te.images, cfg)
    auc = metrics.auc(scores, te.y_cls)
    eer, thr, hter = metrics.eer_hter(scores, te.y_cls)
    report = {"holdout": holdout, "auc": auc, "hter": hter, "eer": eer,
              "threshold": thr, "config": cfg.to_dict(), "log": log,
              "scores": scores.tolist(),
              "labels": np.asarray(te.y_cls).tolist()}
    experiments.write_results_json(report, os.path.join(out, "log.json"))
    click.echo(f"holdout {holdout}: auc {auc:.4f} hter {hter:.4f} "
               f"-> {os.path.join(out, 'final.ckpt')}")


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--holdout", required=True)
def eval_cmd(ckpt, data_path, holdout):
    """Score a held-out domain with a trained checkpoint."""
    checkpoint = train.load_checkpoint(ckpt)
    model, _, _, cfg = train.checkpoint_to_model(checkpoint)
    corpus = data.read_dataset(_corpus_path(data_path))
    _, te = data.split_corpus(corpus, holdout)
    scores = train.predict(model, te.images, cfg)
    auc = metrics.auc(scores, te.y_cls)
    eer, thr, hter = metrics.eer_hter(scores, te.y_cls)
    click.echo(json.dumps({"holdout": holdout, "auc": auc, "hter": hter,
                           "eer": eer, "threshold": thr}, sort_keys=True))


@main.command("ablate")
@click.option("--matrix", type=click.Path(exists=True), default=None,
              help='JSON: {"base": {...}, "axes": ["components", ...]}')
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--seeds", default=3, show_default=True, help="seeds 0..n-1 per arm")
@click.option("--out", required=True, type=click.Path())
def ablate(matrix, data_path, seeds, out):
    """Run ablation axes (components, kernel, style, whitening, ratio)."""
    spec = {"axes": ["components"]}
    if matrix:
        with open(matrix) as fh:
            spec = json.load(fh)
    base_cfg = train.TrainConfig.from_dict(spec.get("base", {}))
    corpus = data.read_dataset(_corpus_path(data_path))
    os.makedirs(out, exist_ok=True)
    seed_list = tuple(range(seeds))
    all_results = {}
    for axis in spec.get("axes", ["components"]):
        results = experiments.run_ablation(base_cfg, corpus, axis, seed_list)
        all_results[axis] = results
        rows = []
        for arm, res in results.items():
            for row in res["rows"]:
                rows.append(dict(row, holdout=f"{arm}/{row['holdout']}"))
            rows.append({"holdout": f"{arm}/mean", "seed": -1,
                         "auc": res["mean_auc"], "hter": res["mean_hter"]})
        experiments.write_results_csv(rows, os.path.join(out, f"{axis}.csv"))
        for arm, res in results.items():
            click.echo(f"{axis}/{arm}: mean auc {res['mean_auc']:.4f} "
                       f"mean hter {res['mean_hter']:.4f}")
    experiments.write_results_json(all_results, os.path.join(out, "ablation.json"))


@main.command("grad-check")
@click.option("--seeds", default=5, show_default=True)
@click.option("--tol", default=1e-4, show_default=True)
def grad_check_cmd(seeds, tol):
    """Finite-difference check of the autodiff engine; non-zero exit on failure."""
    worst = run_grad_checks(seeds, echo=click.echo)
    if worst >= tol:
        raise click.ClickException(f"max relative error {worst:.3e} >= {tol}")
    click.echo(f"OK: max relative error {worst:.3e} < {tol}")


@main.command("plot")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True),
              help="directory produced by `iadg train`")
def plot(run_dir):
    """Emit loss.svg and roc.svg from a training run's log.json."""
    with open(os.path.join(run_dir, "log.json")) as fh:
        report = json.load(fh)
    log = report["log"]
    epochs = [e["epoch"] for e in log]
    series = [("total", epochs, [e["total"] for e in log]),
              ("cls", epochs, [e["cls"] for e in log]),
              ("dep", epochs, [e["dep"] for e in log])]
    if any(e.get("aiaw") for e in log):
        series.append(("aiaw", epochs, [e["aiaw"] for e in log]))
    experiments.plot_curves(series, os.path.join(run_dir, "loss.svg"),
                            title="training loss", ylabel="loss")
    if "eval_auc" in log[0]:
        experiments.plot_curves(
            [("auc", epochs, [e["eval_auc"] for e in log])],
            os.path.join(run_dir, "auc.svg"), title="held-out AUC", ylabel="auc")
    experiments.plot_roc(
        [(f"holdout {report['holdout']}", report["scores"], report["labels"])],
        os.path.join(run_dir, "roc.svg"))
    click.echo(f"wrote plots to {run_dir}")


def run_grad_checks(seeds=5, echo=None):
    """Gradient checks over primitives and the composed losses; returns the
    worst relative error seen."""
    from . import backbone, heads, whitening

    worst = 0.0
    for seed in range(seeds):
        rng = T.Rng(seed, 0x6C)
        checks = {}

        x = rng.normal(1.0, (2, 3, 6, 6))
        k = rng.normal(0.5, (4, 3, 3, 3))
        checks["conv2d(x)"] = T.grad_check(
            lambda a: T.tsum(T.conv2d(a, T.Tensor(k), T.Tensor(np.zeros(4)), 1, 1)), x)
        checks["conv2d(k)"] = T.grad_check(
            lambda a: T.tsum(T.conv2d(T.Tensor(x), a, T.Tensor(np.zeros(4)), 1, 1)), k)
        dk = rng.normal(0.5, (2, 3, 3, 3))
        checks["dwconv2d(k)"] = T.grad_check(
            lambda a: T.tsum(T.dwconv2d(T.Tensor(x), a, 1)), dk)
        proj = T.Tensor(rng.normal(1.0, x.shape))
        checks["instance_norm"] = T.grad_check(
            lambda a: T.tsum(T.instance_norm(a, 1e-5) * proj), x)
        checks["relu/sigmoid"] = T.grad_check(
            lambda a: T.tsum(T.sigmoid(T.relu(a))), rng.normal(1.0, (3, 4)))
        dw = T.Tensor(rng.normal(1.0, (4, 2)))
        db = T.Tensor(rng.normal(1.0, 2))
        checks["matmul/dense"] = T.grad_check(
            lambda a: T.tsum(T.dense(a, dw, db)), rng.normal(1.0, (3, 4)))

        # composed losses through a small model; 16x16 keeps the last stage
        # at 2x2 spatial (instance norm of a 1x1 map is identically zero)
        plan = (3, 4, 4, 4)
        bp = backbone.init_backbone(T.Rng(seed, 1), plan)
        hp = heads.init_heads(plan[-1], T.Rng(seed, 2))
        y_cls = np.array([1, 0])
        y_dep = T.Rng(seed, 3).uniform(0, 1, (2, 2, 2))
        xs = T.Rng(seed, 4).normal(1.0, (2, 3, 16, 16))

        def loss_cls(a):
            outs = backbone.extract(a, bp, 1e-5)
            return heads.cls_loss(heads.cls_logits(outs.final_feat, hp), y_cls)

        def loss_dep(a):
            outs = backbone.extract(a, bp, 1e-5)
            return heads.depth_loss(heads.dep_map(outs.final_feat, hp), y_dep)

        def loss_aiaw(a):
            outs = backbone.extract(a, bp, 1e-5)
            cov = whitening.covariance(outs.final_feat, 1e-5)
            cov_aug = whitening.covariance(outs.final_feat * T.Tensor(1.1), 1e-5)
            return whitening.aiaw_loss(cov, cov_aug, y_cls, 0.5, 0.3)

        # step small enough that central differences stay on one side of the
        # relu kinks inside the composed network
        checks["L_cls"] = T.grad_check(loss_cls, xs, step=1e-5, sample=32, sample_seed=seed)
        checks["L_dep"] = T.grad_check(loss_dep, xs, step=1e-5, sample=32, sample_seed=seed + 1)
        checks["L_aiaw"] = T.grad_check(loss_aiaw, xs, step=1e-5, sample=32, sample_seed=seed + 2)

        for name, err in checks.items():
            worst = max(worst, err)
            if echo:
                echo(f"seed {seed} {name}: {err:.3e}")
    return worst


if __name__ == "__main__":
    main()
