"""Optimisation, dataset mixing, the training loop, evaluation and ablations."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics, ssaug, xalign
from .hazesim import synth_dataset
from .imgdata import Dataset, Image
from .nnet import autograd as ag
from .nnet.checkpoint import load_checkpoint, save_checkpoint
from .nnet.model import DehazeUNet, NetConfig, as_batch
from .rng import Rng

log = logging.getLogger(__name__)

MIX_RATIOS = {"off": (1, 0), "3:1": (3, 1), "1:1": (1, 1)}
LOG_COLUMNS = ("step", "epoch", "lr", "alpha", "l_ext", "l_int", "l_total")
ABLATION_COLUMNS = ("sw_ssl", "rsct_3_1", "rsct_1_1", "psnr_db", "ssim")


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 8
    total_steps: int = 2000
    lr_initial: float = 1e-4
    lr_final: float = 1e-6
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    mix_ratio: str = "off"
    fixed_aux_subset: bool = False
    use_internal: bool = False
    alpha0: float = 0.1
    crop_fraction: float = 0.75
    blur_radius: int = 2
    blur_sigma: float = 1.0
    internal_reduction: str = "mean"
    detach_strong: bool = False
    widths: tuple = (8, 16, 32, 16, 8)
    blocks: int = 1
    window: int = 4
    heads: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr_final > self.lr_initial:
            raise ValueError("lr_final must not exceed lr_initial")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")
        if self.mix_ratio not in MIX_RATIOS:
            raise ValueError(f"mix_ratio must be one of {sorted(MIX_RATIOS)}")

    @property
    def policy(self):
        return ssaug.AugPolicy(
            self.crop_fraction, self.blur_radius, self.blur_sigma, self.internal_reduction, self.detach_strong
        )

    @property
    def schedule(self):
        return ssaug.DecaySchedule(self.alpha0, self.total_steps)

    def net_config(self):
        return NetConfig(
            widths=tuple(self.widths), blocks=self.blocks, window=self.window, heads=self.heads, seed=self.seed
        )

    def as_dict(self):
        d = asdict(self)
        d["widths"] = ",".join(str(w) for w in self.widths)
        return d

    @classmethod
    def field_types(cls):
        return {f.name: f.type for f in fields(cls)}


def lr_at(config, step):
    if not 0 <= step <= config.total_steps:
        raise ValueError(f"step {step} outside [0, {config.total_steps}]")
    if step == 0:
        return config.lr_initial  # lr_final + (lr_initial - lr_final) can be off by an ulp
    cos = 0.5 * (math.cos(math.pi * step / config.total_steps) + 1.0)
    return config.lr_final + (config.lr_initial - config.lr_final) * cos


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adamw_step(params, state, lr, config):
    """One AdamW update in place; ``params`` is a list of (name, tensor) with ``.grad`` set."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"{name}: optimiser state shape {m.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + config.adam_eps) + config.weight_decay * p.data)


def aux_count(n_target, ratio):
    share_t, share_a = MIX_RATIOS[ratio]
    return (n_target * share_a) // share_t


def epoch_pool(rng, epoch, target, auxiliary, ratio, fixed_aux_subset=False):
    """All target pairs plus the ratio's share of auxiliary pairs, shuffled."""
    n_aux = aux_count(len(target), ratio)
    pool = list(target.pairs)
    if n_aux:
        if auxiliary is None or len(auxiliary) == 0:
            raise ValueError(f"mix ratio {ratio} needs a non-empty auxiliary dataset")
        if n_aux > len(auxiliary):
            raise ValueError(f"mix ratio {ratio} needs {n_aux} auxiliary pairs, only {len(auxiliary)} available")
        pick_rng = rng.split("aux-subset") if fixed_aux_subset else rng.split(f"aux{epoch}")
        chosen = np.sort(pick_rng.permutation(len(auxiliary))[:n_aux])
        pool.extend(auxiliary.pairs[i] for i in chosen)
    order = rng.split(f"shuffle{epoch}").permutation(len(pool))
    return [pool[i] for i in order]


def mixed_sampler(rng, target, auxiliary, ratio, batch_size, fixed_aux_subset=False):
    """Endless stream of ``(epoch, batch)``; a short final batch closes each epoch."""
    epoch = 0
    while True:
        pool = epoch_pool(rng, epoch, target, auxiliary, ratio, fixed_aux_subset)
        for i in range(0, len(pool), batch_size):
            yield epoch, pool[i:i + batch_size]
        epoch += 1


@dataclass
class TrainResult:
    net: DehazeUNet
    log: list
    checkpoint: Path | None = None

    def epoch_means(self, column="l_ext"):
        by_epoch = {}
        for row in self.log:
            by_epoch.setdefault(row["epoch"], []).append(row[column])
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def _stack(images, dtype):
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"batch mixes image sizes: {sorted(shapes)}")
    return np.stack([im.data for im in images]).astype(dtype)


def train(config, target, auxiliary=None, out_dir=None):
    rng = Rng(config.seed, ("train",))
    net = DehazeUNet(config.net_config())
    params = list(net.named_parameters())
    state = OptimState()
    policy = config.policy
    schedule = config.schedule
    sampler = mixed_sampler(
        rng.split("sampler"), target, auxiliary, config.mix_ratio, config.batch_size, config.fixed_aux_subset
    )
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    last_epoch = -1
    for step in range(config.total_steps):
        epoch, batch = next(sampler)
        lr = lr_at(config, step)
        alpha = ssaug.alpha_at(schedule, step) if config.use_internal else 0.0
        hazy = _stack([p.hazy for p in batch], net.dtype)
        clean = _stack([p.clean for p in batch], net.dtype)
        net.zero_grad()
        with ag.Tape() as tape:
            y_hat = net(ag.Tensor(hazy))
            l_ext = metrics.l1_loss(y_hat, clean)
            if config.use_internal:
                l_int, _ = ssaug.internal_term(rng.split(f"crop{step}"), y_hat, policy, alpha)
            else:
                l_int = ag.Tensor(np.zeros((), dtype=net.dtype))
            loss = metrics.total_loss(l_ext, l_int)
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite loss at step {step}: {loss.item()}")
            tape.backward(loss)
        adamw_step(params, state, lr, config)
        rows.append(
            {
                "step": step,
                "epoch": epoch,
                "lr": lr,
                "alpha": alpha,
                "l_ext": l_ext.item(),
                "l_int": l_int.item(),
                "l_total": loss.item(),
            }
        )
        if epoch != last_epoch:
            if last_epoch >= 0:
                _log_epoch(rows[:-1], last_epoch)
            last_epoch = epoch
        if out_dir is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            save_checkpoint(net, out_dir / f"step{step + 1:06d}.cdnz", config.as_dict())
    _log_epoch(rows, last_epoch)
    ckpt = None
    if out_dir is not None:
        ckpt = out_dir / "final.cdnz"
        save_checkpoint(net, ckpt, config.as_dict())
        write_log_csv(rows, out_dir / "train_log.csv")
    return TrainResult(net, rows, ckpt)


def _log_epoch(rows, epoch):
    ext = [r["l_ext"] for r in rows if r["epoch"] == epoch]
    tot = [r["l_total"] for r in rows if r["epoch"] == epoch]
    log.info("epoch %d: %d steps, mean l_ext %.6f, mean l_total %.6f", epoch, len(ext), np.mean(ext), np.mean(tot))


def write_log_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["step"], r["epoch"]] + [repr(float(r[c])) for c in LOG_COLUMNS[2:]])


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    rows: list  # (id, psnr_db, ssim)
    mean_psnr: float
    mean_ssim: float
    n_infinite: int

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "psnr_db", "ssim"])
            for pid, p, s in self.rows:
                w.writerow([pid, metrics.format_psnr(p), f"{s:.6f}"])
            w.writerow(["mean", metrics.format_psnr(self.mean_psnr), f"{self.mean_ssim:.6f}"])
        return path

    def summary(self):
        note = f" ({self.n_infinite} identical pair(s) excluded from mean PSNR)" if self.n_infinite else ""
        return f"mean psnr {metrics.format_psnr(self.mean_psnr)} dB, mean ssim {self.mean_ssim:.6f}{note}"


def predict(net, images, batch_size=16):
    out = []
    for i in range(0, len(images), batch_size):
        chunk = images[i:i + batch_size]
        y = net(as_batch(list(chunk), net.dtype))
        out.extend(Image.clamped(a) for a in y.data)
    return out


def evaluate(model, test, batch_size=16, workers=1):
    """Score a network (or checkpoint path) on a dataset."""
    net = load_checkpoint(model)[0] if isinstance(model, (str, Path)) else model
    outputs = predict(net, test.hazy, batch_size)
    for out, pair in zip(outputs, test):
        if out.shape != pair.clean.shape:
            raise ValueError(f"pair {pair.id}: output {out.shape} vs clean {pair.clean.shape}")

    def score(i):
        pair = test[i]
        return pair.id, metrics.psnr(outputs[i], pair.clean), metrics.ssim(outputs[i], pair.clean)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(score, range(len(test))))
    else:
        rows = [score(i) for i in range(len(test))]
    finite = [r[1] for r in rows if math.isfinite(r[1])]
    mean_psnr = float(np.mean(finite)) if finite else math.inf
    mean_ssim = float(np.mean([r[2] for r in rows]))
    return EvalResult(rows, mean_psnr, mean_ssim, len(rows) - len(finite))


def hazy_baseline(test):
    """Metrics of the untouched hazy inputs against their clean targets."""
    rows = [(p.id, metrics.psnr(p.hazy, p.clean), metrics.ssim(p.hazy, p.clean)) for p in test]
    finite = [r[1] for r in rows if math.isfinite(r[1])]
    return EvalResult(
        rows,
        float(np.mean(finite)) if finite else math.inf,
        float(np.mean([r[2] for r in rows])),
        len(rows) - len(finite),
    )


# ---------------------------------------------------------------------------
# desk-scale data and ablation

AUX_COLOR_SHIFT = xalign.GammaTriple(0.5, 0.6, 2.0)


def make_desk_datasets(seed=0, n_train=200, n_test=50, n_aux=200, size=24):
    """Target train/test sets plus a color-shifted, depth-mode auxiliary domain."""
    root = Rng(seed, ("desk-data",))
    target = synth_dataset(root.split("target"), n_train + n_test, size, size, "constant_t")
    train_set = target.subset(range(n_train))
    test_set = target.subset(range(n_train, n_train + n_test))
    aux = synth_dataset(root.split("aux"), n_aux, size, size, "depth") if n_aux else None
    if aux is not None:
        aux = xalign.shift_colors(aux, AUX_COLOR_SHIFT)
    return train_set, test_set, aux


DEFAULT_ARMS = ((False, False, False), (True, False, False), (False, False, True), (True, False, True))
ALL_ARMS = DEFAULT_ARMS[:2] + ((False, True, False),) + DEFAULT_ARMS[2:] + ((True, True, False),)


@dataclass
class AblationRow:
    sw_ssl: bool
    rsct_3_1: bool
    rsct_1_1: bool
    psnr_db: float
    ssim: float

    def cells(self):
        flags = [str(int(v)) for v in (self.sw_ssl, self.rsct_3_1, self.rsct_1_1)]
        return flags + [metrics.format_psnr(self.psnr_db), f"{self.ssim:.6f}"]


def ablate(base_config, target, auxiliary, test, arms=DEFAULT_ARMS):
    """Train and score one model per arm; auxiliary data is aligned to the target first."""
    aligned = None
    if any(a[1] or a[2] for a in arms):
        if auxiliary is None or len(auxiliary) == 0:
            raise ValueError("RSCT arms need an auxiliary dataset")
        aligned, gamma = xalign.align_dataset(auxiliary, xalign.dataset_channel_means(target.hazy))
        log.info("auxiliary alignment gamma: %s", gamma)
    rows = []
    for sw, r31, r11 in arms:
        ratio = "3:1" if r31 else "1:1" if r11 else "off"
        cfg = replace(base_config, use_internal=sw, mix_ratio=ratio)
        res = train(cfg, target, aligned)
        ev = evaluate(res.net, test)
        rows.append(AblationRow(sw, r31, r11, ev.mean_psnr, ev.mean_ssim))
        log.info("arm sw_ssl=%d rsct_3_1=%d rsct_1_1=%d: %s", sw, r31, r11, ev.summary())
    return rows


def write_ablation_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for r in rows:
            w.writerow(r.cells())
    return path


def ablation_ordering_report(rows):
    """Text summary of whether augmented arms beat the baseline (reported, not enforced)."""
    base = next((r for r in rows if not (r.sw_ssl or r.rsct_3_1 or r.rsct_1_1)), None)
    if base is None:
        return "no baseline arm"
    lines = []
    for r in rows:
        if r is base:
            continue
        tag = "+".join(n for n, v in (("SW-SSL", r.sw_ssl), ("RSCT3:1", r.rsct_3_1), ("RSCT1:1", r.rsct_1_1)) if v)
        verdict = ">=" if r.psnr_db >= base.psnr_db else "<"
        lines.append(f"{tag}: {r.psnr_db:.3f} dB {verdict} baseline {base.psnr_db:.3f} dB")
    return "\n".join(lines)


__all__ = [
    "Dataset",
    "EvalResult",
    "NumericalError",
    "OptimState",
    "TrainConfig",
    "ablate",
    "adamw_step",
    "evaluate",
    "lr_at",
    "mixed_sampler",
    "train",
]
