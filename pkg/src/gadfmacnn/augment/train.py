"""WGAN-GP training, one GAN per fault class, with resumable checkpoints."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from ..container import read_container, write_container
from ..errors import InsufficientData, NonFiniteGradient, NonFiniteLoss
from ..gafenc import GafImage
from ..torchio import arrays_to_state, optimizer_from_arrays, optimizer_to_arrays, state_to_arrays
from .losses import critic_loss, generator_loss, sample_latent, torch_generator
from .nets import Critic, Generator, build_networks

log = logging.getLogger(__name__)
CHECKPOINT_KIND = "wgan_gp_checkpoint"
METRIC_FIELDS = ("step", "critic_loss", "gen_loss", "gp_term", "wasserstein_estimate")


@dataclass(frozen=True)
class GanTrainConfig:
    z_dim: int = 64
    lambda_gp: float = 10.0
    critic_steps_per_gen: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.0, 0.9)
    total_gen_steps: int = 1000
    image_size: int = 64
    seed: int = 0
    width: int = 32
    checkpoint_every: int = 100
    # the first warmup_gen_steps generator steps use warmup_critic_steps critic updates,
    # so the critic (and its Wasserstein estimate) is near its optimum early on
    warmup_gen_steps: int = 0
    warmup_critic_steps: int = 25

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.lambda_gp < 0:
            raise ValueError("lambda_gp must be >= 0")
        if self.critic_steps_per_gen < 1 or self.warmup_critic_steps < 1:
            raise ValueError("critic_steps_per_gen and warmup_critic_steps must be >= 1")
        if self.warmup_gen_steps < 0:
            raise ValueError("warmup_gen_steps must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


@dataclass
class GanCheckpoint:
    generator: Generator
    critic: Critic
    gen_opt: torch.optim.Optimizer
    critic_opt: torch.optim.Optimizer
    config: GanTrainConfig
    label: int = 0
    label_name: str = ""
    gen_step: int = 0
    metrics_history: list[dict] = field(default_factory=list)

    def snapshot(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k).state_dict())
                for k in ("generator", "critic", "gen_opt", "critic_opt")}

    def restore(self, snap: dict) -> None:
        for k, sd in snap.items():
            getattr(self, k).load_state_dict(sd)


def new_gan(config: GanTrainConfig, label: int = 0, label_name: str = "") -> GanCheckpoint:
    seed = int(np.random.SeedSequence([config.seed, label]).generate_state(1)[0])
    gen, crit = build_networks(config.z_dim, config.image_size, config.width, seed)
    return GanCheckpoint(
        gen, crit,
        torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=config.adam_betas),
        torch.optim.Adam(crit.parameters(), lr=config.learning_rate, betas=config.adam_betas),
        config, label, label_name)


def _as_pool(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        x = images.float()
    elif len(images) and isinstance(images[0], GafImage):
        x = torch.as_tensor(np.stack([im.pixels for im in images]), dtype=torch.float32)
    else:
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    return x.unsqueeze(1) if x.dim() == 3 else x


def _step_updates(state: GanCheckpoint, pool: torch.Tensor, cfg: GanTrainConfig, rng: torch.Generator):
    G, D = state.generator, state.critic
    for p in G.parameters():
        p.requires_grad_(False)
    warm = state.gen_step < cfg.warmup_gen_steps
    for _ in range(cfg.warmup_critic_steps if warm else cfg.critic_steps_per_gen):
        idx = torch.randperm(pool.shape[0], generator=rng)[:cfg.batch_size]
        z = sample_latent(cfg.batch_size, cfg.z_dim, rng)
        terms = critic_loss(D, G, pool[idx], z, cfg.lambda_gp, seed=rng)
        if not torch.isfinite(terms.loss):
            raise NonFiniteLoss(f"critic loss {terms.loss.item()} at step {state.gen_step + 1}")
        state.critic_opt.zero_grad()
        terms.loss.backward()
        state.critic_opt.step()
    for p in G.parameters():
        p.requires_grad_(True)
    for p in D.parameters():
        p.requires_grad_(False)
    g_loss = generator_loss(D, G, sample_latent(cfg.batch_size, cfg.z_dim, rng))
    if not torch.isfinite(g_loss):
        raise NonFiniteLoss(f"generator loss {g_loss.item()} at step {state.gen_step + 1}")
    state.gen_opt.zero_grad()
    g_loss.backward()
    state.gen_opt.step()
    return terms, g_loss


def gan_train_step(state: GanCheckpoint, real_pool, config: GanTrainConfig | None = None) -> GanCheckpoint:
    """``critic_steps_per_gen`` critic updates, then one generator update.

    Each critic update draws its own real batch from ``real_pool``. All
    randomness comes from a stream keyed on (seed, label, gen_step), so a
    resumed run repeats an uninterrupted one exactly. On a non-finite loss
    or gradient the state is rolled back to its value before the call and
    the error is re-raised.
    """
    cfg = config or state.config
    pool = _as_pool(real_pool)
    if pool.shape[0] < cfg.batch_size:
        raise InsufficientData(f"{pool.shape[0]} real images for batch size {cfg.batch_size}")
    rng = torch_generator(cfg.seed, state.label, state.gen_step)
    snap = state.snapshot()
    try:
        terms, g_loss = _step_updates(state, pool, cfg, rng)
    except (NonFiniteLoss, NonFiniteGradient):
        state.restore(snap)
        raise
    finally:
        for p in list(state.generator.parameters()) + list(state.critic.parameters()):
            p.requires_grad_(True)
    state.gen_step += 1
    state.metrics_history.append({
        "step": state.gen_step,
        "critic_loss": float(terms.loss.detach()),
        "gen_loss": float(g_loss.detach()),
        "gp_term": float(terms.penalty.detach()),
        "wasserstein_estimate": terms.wasserstein,
    })
    return state


def train_gan(state: GanCheckpoint, real_pool, config: GanTrainConfig | None = None,
              checkpoint_path=None, metrics_path=None) -> GanCheckpoint:
    cfg = config or state.config
    pool = _as_pool(real_pool)
    while state.gen_step < cfg.total_gen_steps:
        gan_train_step(state, pool, cfg)
        if state.gen_step % 50 == 0:
            m = state.metrics_history[-1]
            log.info("class %s step %d W %.4f gp %.4f", state.label_name or state.label,
                     state.gen_step, m["wasserstein_estimate"], m["gp_term"])
        if checkpoint_path is not None and (state.gen_step % cfg.checkpoint_every == 0
                                            or state.gen_step == cfg.total_gen_steps):
            save_gan(state, checkpoint_path)
            if metrics_path is not None:
                write_metrics_csv(state.metrics_history, metrics_path)
    return state


def train_wgan_gp(images: Mapping[int, Sequence[GafImage]] | Sequence[GafImage], config: GanTrainConfig,
                  out_dir=None, label_names: Mapping[int, str] | None = None,
                  resume: bool = True) -> dict[int, GanCheckpoint]:
    """Train one GAN per class label.

    With ``out_dir`` set, each class checkpoints to ``class_<label>.ckpt``
    every ``checkpoint_every`` steps (metrics to ``class_<label>_metrics.csv``)
    and an existing checkpoint there is resumed.
    """
    if not isinstance(images, Mapping):
        grouped: dict[int, list] = {}
        for im in images:
            grouped.setdefault(int(im.label), []).append(im)
        images = grouped
    for label, ims in images.items():
        if len(ims) < config.batch_size:
            raise InsufficientData(f"class {label}: {len(ims)} images < batch size {config.batch_size}")
    out = {}
    for label in sorted(images):
        ims = images[label]
        name = (label_names or {}).get(label, "")
        if not name and isinstance(ims[0], GafImage):
            name = ims[0].meta.get("label_name", "")
        ck_path = mx_path = None
        state = None
        if out_dir is not None:
            ck_path = Path(out_dir) / f"class_{label}.ckpt"
            mx_path = Path(out_dir) / f"class_{label}_metrics.csv"
            if resume and ck_path.exists():
                state = load_gan(ck_path)
        if state is None:
            state = new_gan(config, label, name)
        out[label] = train_gan(state, ims, config, ck_path, mx_path)
    return out


def generate_samples(checkpoint: GanCheckpoint, n: int, seed: int, antisymmetrize: bool = False,
                     batch_size: int = 256) -> list[GafImage]:
    """Raw generator images, clamped to [-1, 1] with a zeroed diagonal.

    ``antisymmetrize`` additionally projects each image onto (G - G^T) / 2.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = checkpoint.config
    rng = torch_generator(seed, checkpoint.label)
    out = []
    with torch.no_grad():
        for lo in range(0, n, batch_size):
            m = min(batch_size, n - lo)
            z = sample_latent(m, cfg.z_dim, rng)
            x = checkpoint.generator(z.vectors)[:, 0].double().numpy()
            for i, img in enumerate(x):
                if antisymmetrize:
                    img = 0.5 * (img - img.T)
                img = np.clip(img, -1.0, 1.0)
                np.fill_diagonal(img, 0.0)
                meta = {"synthetic": True, "label_name": checkpoint.label_name,
                        "gan_step": checkpoint.gen_step, "seed": int(seed), "index": lo + i,
                        "antisymmetrized": bool(antisymmetrize)}
                out.append(GafImage(img, checkpoint.label, meta))
    return out


def write_metrics_csv(history: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for m in history:
            w.writerow([m["step"]] + [repr(m[k]) for k in METRIC_FIELDS[1:]])


def save_gan(state: GanCheckpoint, path) -> None:
    arrays = state_to_arrays(state.generator.state_dict(), "generator")
    arrays.update(state_to_arrays(state.critic.state_dict(), "critic"))
    g_arr, g_meta = optimizer_to_arrays(state.gen_opt, "gen_opt")
    c_arr, c_meta = optimizer_to_arrays(state.critic_opt, "critic_opt")
    arrays.update(g_arr)
    arrays.update(c_arr)
    meta = {
        "config": asdict(state.config),
        "label": state.label,
        "label_name": state.label_name,
        "gen_step": state.gen_step,
        "metrics_history": state.metrics_history,
        "optimizer": {"gen_opt": g_meta, "critic_opt": c_meta},
    }
    write_container(path, CHECKPOINT_KIND, meta, arrays)


def load_gan(path) -> GanCheckpoint:
    _, meta, arrays = read_container(path, expect_kind=CHECKPOINT_KIND)
    cfg = GanTrainConfig(**meta["config"])
    state = new_gan(cfg, meta["label"], meta["label_name"])
    state.generator.load_state_dict(arrays_to_state(arrays, "generator", state.generator.state_dict()))
    state.critic.load_state_dict(arrays_to_state(arrays, "critic", state.critic.state_dict()))
    optimizer_from_arrays(state.gen_opt, "gen_opt", arrays, meta["optimizer"]["gen_opt"])
    optimizer_from_arrays(state.critic_opt, "critic_opt", arrays, meta["optimizer"]["critic_opt"])
    state.gen_step = meta["gen_step"]
    state.metrics_history = meta["metrics_history"]
    return state
