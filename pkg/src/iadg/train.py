"""Training loop: Adam, epoch-wise style-bank refresh, dual-branch losses,
checkpointing, and the inference path (original branch only)."""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import backbone, heads, style, whitening
from . import tensor as T
from .style import REAL, SPOOF
from .tensor import Rng, _mix

CKPT_MAGIC = b"IADGCKPT"
CKPT_VERSION = 1

DKG_MODES = ("off", "static_only", "dynamic_only", "dkg")
CSA_MODES = ("off", "random_mix", "csa")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    lam: float = 0.1
    aiaw_weight: float = 1.0     # small models need < 1 or whitening drowns BCE
    aiaw_warmup: int = 0         # epochs to ramp the whitening weight from 0
    bank_size: int = 16          # L; 64 is the full-scale default
    k_r: float = 0.003
    k_s: float = 0.0006
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    plan: tuple = (3, 16, 32, 64)
    eps: float = 1e-5
    dkg: str = "dkg"             # off | static_only | dynamic_only | dkg
    csa: str = "csa"             # off | random_mix | csa
    whitening: str = "asymmetric_iaw"  # off | full_iw | symmetric_iaw | asymmetric_iaw

    def __post_init__(self):
        self.plan = tuple(self.plan)
        if self.aiaw_weight < 0:
            raise ValueError("aiaw_weight must be >= 0")
        if self.aiaw_warmup < 0:
            raise ValueError("aiaw_warmup must be >= 0")
        if self.k_r < self.k_s:
            raise ValueError(f"k_r ({self.k_r}) must be >= k_s ({self.k_s})")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.dkg not in DKG_MODES:
            raise ValueError(f"dkg mode must be one of {DKG_MODES}, got {self.dkg!r}")
        if self.csa not in CSA_MODES:
            raise ValueError(f"csa mode must be one of {CSA_MODES}, got {self.csa!r}")
        if self.whitening not in whitening.VARIANTS:
            raise ValueError(f"whitening must be one of {whitening.VARIANTS}, got {self.whitening!r}")
        if self.whitening != "off" and self.csa == "off":
            raise ValueError("whitening losses need an augmented branch; enable csa")

    def to_dict(self):
        d = asdict(self)
        d["plan"] = list(self.plan)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# model assembly


def init_model(cfg, rng):
    bparams = backbone.init_backbone(rng.split(1), cfg.plan,
                                     kernel_mode="off" if cfg.dkg == "off" else "dkg")
    hparams = heads.init_heads(cfg.plan[-1], rng.split(2))
    return {"backbone": bparams, "heads": hparams}


def named_params(model):
    return backbone.param_items(model["backbone"]) + heads.param_items(model["heads"])


def _dkg_runtime_mode(cfg):
    # static_only / dynamic_only reuse the full DKG parameter set with one
    # branch disabled, so the zero-generator equivalence is exact.
    return cfg.dkg if cfg.dkg in ("static_only", "dynamic_only") else "dkg"


# ---------------------------------------------------------------------------
# Adam


def init_moments(model):
    return {name: {"m": np.zeros(t.shape), "v": np.zeros(t.shape)}
            for name, t in named_params(model)}


def adam_step(items, moments, t, cfg):
    """Standard bias-corrected Adam over (name, Tensor) pairs in place."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, tensor in items:
        g = tensor.grad
        if g is None:
            g = np.zeros(tensor.shape)
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in {name} at step {t}")
        st = moments[name]
        st["m"] = b1 * st["m"] + (1.0 - b1) * g
        st["v"] = b2 * st["v"] + (1.0 - b2) * g * g
        mhat = st["m"] / c1
        vhat = st["v"] / c2
        tensor.data = tensor.data - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps_adam)


# ---------------------------------------------------------------------------
# forward / losses for one batch


def _batch_losses(model, images, y_cls, y_dep, bank, rng, cfg, aiaw_scale=1.0):
    """Graph for one training batch; returns (total, parts, vmats).

    `vmats` are the per-class cross-branch variance matrices of this batch
    (empty when whitening is off), aggregated by the caller into the epoch's
    diagnostic masks.
    """
    bparams = model["backbone"]
    bparams_mode = dict(bparams, kernel_mode=_dkg_runtime_mode(cfg) if cfg.dkg != "off" else "off")
    x = T.Tensor(images)
    vmats = {}
    if cfg.csa == "off":
        outs = backbone.extract(x, bparams_mode, cfg.eps)
        logits_org = heads.cls_logits(outs.final_feat, model["heads"])
        dep_org = heads.dep_map(outs.final_feat, model["heads"])
        cls_term = heads.cls_loss(logits_org, y_cls)
        dep_term = heads.depth_loss(dep_org, y_dep)
        aiaw_term = None
    else:
        f_org, f_aug = backbone.forward_dual(x, bparams_mode, bank, y_cls, rng, cfg.csa, cfg.eps)
        logits_org = heads.cls_logits(f_org.final_feat, model["heads"])
        logits_aug = heads.cls_logits(f_aug.final_feat, model["heads"])
        dep_org = heads.dep_map(f_org.final_feat, model["heads"])
        dep_aug = heads.dep_map(f_aug.final_feat, model["heads"])
        cls_term = heads.cls_loss(logits_org, y_cls, logits_aug)
        dep_term = heads.depth_loss(dep_org, y_dep, dep_aug)
        if cfg.whitening == "off":
            aiaw_term = None
        else:
            cov_org = whitening.covariance(f_org.final_feat, cfg.eps)
            cov_aug = whitening.covariance(f_aug.final_feat, cfg.eps)
            k_r, k_s = cfg.k_r, cfg.k_s
            aiaw_term = whitening.aiaw_loss(cov_org, cov_aug, y_cls, k_r, k_s, cfg.whitening)
            weight = cfg.aiaw_weight * aiaw_scale
            if weight != 1.0:
                aiaw_term = aiaw_term * T.Tensor(weight)
            vmats = whitening.variance_by_class(cov_org, cov_aug, y_cls)
    total = heads.total_loss(cls_term, dep_term, aiaw_term, cfg.lam)
    parts = {
        "cls": float(cls_term.data),
        "dep": float(dep_term.data),
        "aiaw": float(aiaw_term.data) if aiaw_term is not None else 0.0,
    }
    return total, parts, vmats


def _balanced_batches(y_cls, batch_size, rng):
    """Class-balanced batch index lists; a trailing remainder is dropped."""
    y = np.asarray(y_cls)
    real = np.flatnonzero(y == REAL)
    spoof = np.flatnonzero(y == SPOOF)
    real = real[rng.permutation(real.size)]
    spoof = spoof[rng.permutation(spoof.size)]
    half = batch_size // 2
    nb = min(real.size, spoof.size) // half
    batches = []
    for b in range(nb):
        idx = np.concatenate([real[b * half : (b + 1) * half],
                              spoof[b * half : (b + 1) * half]])
        batches.append(idx[rng.permutation(idx.size)])
    return batches


# ---------------------------------------------------------------------------
# inference and diagnostics


def predict(model, images, cfg, batch_size=64):
    """Liveness scores via the original branch only (no bank, no whitening)."""
    bparams = dict(model["backbone"],
                   kernel_mode=_dkg_runtime_mode(cfg) if cfg.dkg != "off" else "off")
    scores = []
    with T.no_grad():
        for i in range(0, len(images), batch_size):
            outs = backbone.extract(T.Tensor(images[i : i + batch_size]), bparams, cfg.eps)
            logits = heads.cls_logits(outs.final_feat, model["heads"])
            scores.append(T.sigmoid(logits).data)
    return np.concatenate(scores)


def masked_cov_median(model, images, labels, masks, cfg, batch_size=64):
    """Median over samples of mean |cov| restricted to the sample's class mask.

    Training-time diagnostic; uses the original branch's final features.
    With no masks available, the full strictly-upper triangle is used.
    """
    labels = np.asarray(labels)
    c = cfg.plan[-1]
    fallback = np.triu(np.ones((c, c)), k=1)
    values = []
    bparams = dict(model["backbone"],
                   kernel_mode=_dkg_runtime_mode(cfg) if cfg.dkg != "off" else "off")
    with T.no_grad():
        for i in range(0, len(images), batch_size):
            outs = backbone.extract(T.Tensor(images[i : i + batch_size]), bparams, cfg.eps)
            covs = whitening.covariance(outs.final_feat, cfg.eps)
            for j, cov in enumerate(covs):
                mask = masks.get(int(labels[i + j]), fallback) if masks else fallback
                count = mask.sum()
                if count == 0:
                    continue
                values.append(float(np.abs(cov.data * mask).sum() / count))
    return float(np.median(values)) if values else float("nan")


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    tensors: dict                # name -> float64 ndarray (params, moments, bank)
    epoch: int
    step: int
    bank_epoch: int
    config: dict
    meta: dict = field(default_factory=dict)


def model_to_checkpoint(model, moments, bank, epoch, step, cfg):
    tensors = {}
    for name, t in named_params(model):
        tensors[f"param.{name}"] = t.data.copy()
        tensors[f"adam_m.{name}"] = moments[name]["m"].copy()
        tensors[f"adam_v.{name}"] = moments[name]["v"].copy()
    bank_epoch = -1
    if bank is not None:
        tensors["bank.real_mu"] = bank.real_mu.copy()
        tensors["bank.real_sigma"] = bank.real_sigma.copy()
        tensors["bank.spoof_mu"] = bank.spoof_mu.copy()
        tensors["bank.spoof_sigma"] = bank.spoof_sigma.copy()
        bank_epoch = bank.epoch_stamp
    return Checkpoint(tensors=tensors, epoch=epoch, step=step,
                      bank_epoch=bank_epoch, config=cfg.to_dict(),
                      meta={"config_hash": cfg.hash()})


def checkpoint_to_model(ckpt):
    """Rebuild (model, moments, bank, cfg) from a checkpoint."""
    cfg = TrainConfig.from_dict(ckpt.config)
    model = init_model(cfg, Rng(cfg.seed).split(0))
    moments = init_moments(model)
    for name, t in named_params(model):
        t.data = ckpt.tensors[f"param.{name}"].copy()
        moments[name]["m"] = ckpt.tensors[f"adam_m.{name}"].copy()
        moments[name]["v"] = ckpt.tensors[f"adam_v.{name}"].copy()
    bank = None
    if "bank.real_mu" in ckpt.tensors:
        bank = style.StyleBank(
            real_mu=ckpt.tensors["bank.real_mu"].copy(),
            real_sigma=ckpt.tensors["bank.real_sigma"].copy(),
            spoof_mu=ckpt.tensors["bank.spoof_mu"].copy(),
            spoof_sigma=ckpt.tensors["bank.spoof_sigma"].copy(),
            epoch_stamp=ckpt.bank_epoch,
        )
    return model, moments, bank, cfg


class CheckpointFormatError(ValueError):
    """Malformed or incompatible checkpoint file."""


def save_checkpoint(path, ckpt):
    names = sorted(ckpt.tensors)
    manifest = {
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "bank_epoch": ckpt.bank_epoch,
        "config": ckpt.config,
        "meta": ckpt.meta,
        "tensors": [],
    }
    offset = 0
    for name in names:
        arr = ckpt.tensors[name]
        manifest["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest["data_bytes"] = offset
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<H", CKPT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(ckpt.tensors[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        head = fh.read(10)
        if len(head) < 10 or head[:8] != CKPT_MAGIC:
            raise CheckpointFormatError(f"bad magic: {head[:8]!r}")
        (version,) = struct.unpack("<H", head[8:10])
        if version != CKPT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        raw = fh.read(8)
        if len(raw) < 8:
            raise CheckpointFormatError("truncated manifest length")
        (mlen,) = struct.unpack("<Q", raw)
        blob = fh.read(mlen)
        if len(blob) < mlen:
            raise CheckpointFormatError("truncated manifest")
        try:
            manifest = json.loads(blob)
        except json.JSONDecodeError as e:
            raise CheckpointFormatError(f"invalid manifest JSON: {e}") from e
        data = fh.read()
    if len(data) < manifest["data_bytes"]:
        raise CheckpointFormatError(
            f"truncated tensor data: expected {manifest['data_bytes']}, got {len(data)}")
    tensors = {}
    for rec in manifest["tensors"]:
        size = int(np.prod(rec["shape"])) if rec["shape"] else 1
        tensors[rec["name"]] = np.frombuffer(
            data, "<f8", size, rec["offset"]).reshape(rec["shape"]).copy()
    return Checkpoint(tensors=tensors, epoch=manifest["epoch"], step=manifest["step"],
                      bank_epoch=manifest["bank_epoch"], config=manifest["config"],
                      meta=manifest.get("meta", {}))


# ---------------------------------------------------------------------------
# the training loop


def train(cfg, train_set, eval_set=None, resume=None):
    """Run (or resume) training; returns (Checkpoint, per-epoch log).

    All randomness is keyed by (cfg.seed, epoch), so resuming from an
    epoch-boundary checkpoint reproduces the uninterrupted run bit for bit.
    """
    y = np.asarray(train_set.y_cls)
    if not ((y == REAL).any() and (y == SPOOF).any()):
        raise ValueError("training set must contain both classes")

    if resume is not None:
        model, moments, bank, rcfg = checkpoint_to_model(resume)
        if rcfg.hash() != cfg.hash():
            raise ValueError("resume checkpoint config does not match")
        start_epoch = resume.epoch + 1
        step = resume.step
    else:
        model = init_model(cfg, Rng(cfg.seed).split(0))
        moments = init_moments(model)
        bank = None
        start_epoch = 1
        step = 0

    items = named_params(model)
    log = []
    last_good = model_to_checkpoint(model, moments, bank, start_epoch - 1, step, cfg)

    def stage1_fn(imgs):
        bparams = dict(model["backbone"],
                       kernel_mode=_dkg_runtime_mode(cfg) if cfg.dkg != "off" else "off")
        return backbone.stage1_forward(T.Tensor(imgs), bparams, cfg.eps)

    for epoch in range(start_epoch, cfg.epochs + 1):
        if cfg.csa == "csa":
            bank = style.refresh_bank(train_set.images, y, stage1_fn,
                                      cfg.bank_size, epoch, eps=cfg.eps)
        shuffle_rng = Rng(cfg.seed, _mix(0xE0, epoch))
        aug_rng = Rng(cfg.seed, _mix(0xA0, epoch))
        sums = {"cls": 0.0, "dep": 0.0, "aiaw": 0.0, "total": 0.0}
        vsums, vcounts = {}, {}
        aiaw_scale = min(1.0, epoch / cfg.aiaw_warmup) if cfg.aiaw_warmup else 1.0
        batches = _balanced_batches(y, cfg.batch_size, shuffle_rng)
        for idx in batches:
            total, parts, vmats = _batch_losses(
                model, train_set.images[idx].astype(np.float64), y[idx],
                train_set.y_dep[idx].astype(np.float64), bank, aug_rng, cfg,
                aiaw_scale)
            for cls, v in vmats.items():
                vsums[cls] = vsums.get(cls, 0.0) + v
                vcounts[cls] = vcounts.get(cls, 0) + 1
            if not np.isfinite(total.data):
                raise TrainingDiverged(
                    f"loss diverged at epoch {epoch}", checkpoint=last_good)
            T.backward(total)
            step += 1
            adam_step(items, moments, step, cfg)
            for key in parts:
                sums[key] += parts[key]
            sums["total"] += float(total.data)

        nb = max(len(batches), 1)
        # diagnostic masks from the epoch-averaged variance matrices (per-batch
        # masks are too noisy to trend)
        masks = whitening.masks_from_variance(
            {cls: vsums[cls] / vcounts[cls] for cls in vsums},
            cfg.k_r, cfg.k_s, cfg.whitening) if vsums else {}
        entry = {"epoch": epoch, "bank_epoch": bank.epoch_stamp if bank else -1,
                 "steps": step}
        entry.update({k: v / nb for k, v in sums.items()})
        entry["train_masked_cov"] = masked_cov_median(
            model, train_set.images, y, masks, cfg)
        if eval_set is not None:
            from . import metrics  # deferred; avoids a hard cycle at import time
            scores = predict(model, eval_set.images, cfg)
            entry["eval_auc"] = metrics.auc(scores, eval_set.y_cls)
            entry["eval_masked_cov"] = masked_cov_median(
                model, eval_set.images, eval_set.y_cls, masks, cfg)
        log.append(entry)
        last_good = model_to_checkpoint(model, moments, bank, epoch, step, cfg)

    return last_good, log
