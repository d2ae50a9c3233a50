"""Conditioner + U-Net assembled into the fusion/super-resolution model."""
import numpy as np

from . import diffusion
from .conditioning import Conditioner
from .denoiser import UNet, UNetConfig
from .nncore import Module, make_rng


class FusionModel(Module):
    def __init__(self, conditioner, unet):
        self.conditioner = conditioner
        self.unet = unet

    @classmethod
    def from_config(cls, cfg, seed=None):
        dtype = np.dtype(cfg.dtype).type
        rng = make_rng(cfg.seed if seed is None else seed)
        cond = Conditioner(scale=cfg.scale, J=cfg.J, c_s=cfg.c_s, c_f=cfg.c_f,
                           rect_width=cfg.rect_width, reduction=cfg.reduction,
                           gate_width=cfg.gate_width, mode=cfg.conditioning,
                           rng=rng, dtype=dtype)
        ucfg = UNetConfig(cond_channels=cond.out_channels, base_width=cfg.unet_width,
                          depth=cfg.unet_depth, embed_dim=cfg.embed_dim)
        return cls(cond, UNet(ucfg, rng=rng, dtype=dtype))

    @property
    def dtype(self):
        return self.unet.dtype

    def loss(self, batch, schedule, rng, loss="l2"):
        """Forward + backward on one batch ``(x, y, s, target)``; returns the loss value.

        ``target`` is in [0, 1]. Gradients are accumulated, not zeroed.
        """
        x, y, s, target = batch
        z = self.conditioner.forward(x, y, s)
        I0 = diffusion.to_model_range(np.asarray(target, dtype=self.dtype))
        value, dz, _ = diffusion.training_loss(z, I0, self.unet, schedule, rng, loss=loss)
        self.conditioner.backward(dz)
        return value

    def loss_at(self, batch, t, eps, schedule, loss="l2"):
        """Loss at fixed timesteps and noise, without gradients."""
        x, y, s, target = batch
        z = self.conditioner.forward(x, y, s)
        I0 = diffusion.to_model_range(np.asarray(target, dtype=self.dtype))
        value, _, _ = diffusion.loss_at(z, I0, t, eps.astype(self.dtype), self.unet, schedule,
                                        loss=loss, backward=False)
        return value

    def sample(self, x, y, s, schedule, rng, variance="beta"):
        """Fused high-resolution images ``[N, 3, H, W]`` in [0, 1]."""
        z = self.conditioner.forward(x, y, s)
        shape = (z.shape[0], 3) + z.shape[-2:]
        out = diffusion.sample(self.unet, z, schedule, rng, shape, variance=variance)
        return diffusion.from_model_range(out)
