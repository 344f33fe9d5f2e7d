"""Small-sample bearing fault diagnosis: GADF images, WGAN-GP augmentation, MACNN classifier."""

__version__ = "0.1.0"
