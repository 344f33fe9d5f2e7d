from .fidelity import fidelity_report
from .losses import (LatentBatch, critic_loss, generator_loss, gradient_norms,
                     gradient_penalty, interpolate_samples, sample_latent)
from .nets import Critic, Generator, build_networks
from .train import (GanCheckpoint, GanTrainConfig, gan_train_step, generate_samples, load_gan,
                    new_gan, save_gan, train_gan, train_wgan_gp)

__all__ = [
    "fidelity_report", "LatentBatch", "critic_loss", "generator_loss", "gradient_norms",
    "gradient_penalty", "interpolate_samples", "sample_latent", "Critic", "Generator",
    "build_networks", "GanCheckpoint", "GanTrainConfig", "gan_train_step", "generate_samples",
    "load_gan", "new_gan", "save_gan", "train_gan", "train_wgan_gp",
]
