"""Minibatch training of the velocity network and prediction with it."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..attributes import AttributeNormalizer, AttributeVector
from ..fields import ScalarImage
from ..integrate import IntegrationConfig, integrate_svf
from ..loss import LossConfig, loss_and_grad
from ..warp import warp_image
from .unet import NetConfig, VelocityNet

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """The loss or gradient became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 4
    epochs: int = 20
    optimizer: str = "adam"
    momentum: float = 0.9
    beta2: float = 0.999
    rng_seed: int = 0
    sigma2: float = 0.01
    gamma: float = 0.01
    regularize: str = "displacement"
    steps: int = 7
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1 or self.steps < 1:
            raise ValueError("learning_rate, batch_size, epochs and steps must be positive")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")

    @property
    def loss(self) -> LossConfig:
        return LossConfig(self.sigma2, self.gamma, self.regularize)

    def to_dict(self) -> dict:
        return asdict(self)


class Optimizer:
    """SGD, heavy-ball momentum or Adam over a dict of tensors."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {}
        self.s = {}
        self.step_count = 0

    def step(self, params: dict, grads: dict, frozen=()):
        cfg = self.cfg
        self.step_count += 1
        for k, g in grads.items():
            if k in frozen:
                continue
            if cfg.optimizer == "sgd":
                params[k] = params[k] - cfg.learning_rate * g
            elif cfg.optimizer == "momentum":
                m = self.m.get(k, 0.0) * cfg.momentum + g
                self.m[k] = m
                params[k] = params[k] - cfg.learning_rate * m
            else:
                m = self.m.get(k, 0.0) * cfg.momentum + (1 - cfg.momentum) * g
                s = self.s.get(k, 0.0) * cfg.beta2 + (1 - cfg.beta2) * g * g
                self.m[k], self.s[k] = m, s
                mh = m / (1 - cfg.momentum**self.step_count)
                sh = s / (1 - cfg.beta2**self.step_count)
                params[k] = params[k] - cfg.learning_rate * mh / (np.sqrt(sh) + 1e-8)


def _batch_loss(net: VelocityNet, samples, attrs: np.ndarray, cfg: TrainConfig, need_grad: bool):
    x0 = np.stack([s.x0.values for s in samples])
    identity = samples[0].x0.grid.identity()
    v = net.forward_batch(x0, attrs, cache=need_grad)
    total = 0.0
    gv = np.zeros_like(v) if need_grad else None
    for n, s in enumerate(samples):
        value, g, _ = loss_and_grad(s.xt.values, s.x0.values, v[n], s.t, cfg.loss, cfg.steps, identity, need_grad)
        total += value
        if need_grad:
            gv[n] = g
    N = len(samples)
    if not need_grad:
        return total / N, None
    return total / N, net.backward(gv / N)


def evaluate_loss(net: VelocityNet, samples, cfg: TrainConfig, batch_size: int = 8) -> float:
    """Mean total loss over ``samples`` without gradients."""
    total = 0.0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        attrs, _ = net.normalize_attributes([s.attrs for s in chunk])
        value, _ = _batch_loss(net, chunk, attrs if net.n_attributes else None, cfg, need_grad=False)
        total += value * len(chunk)
    return total / len(samples)


def train(dataset: list, net_cfg: NetConfig, train_cfg: TrainConfig, validation: list | None = None,
          init: VelocityNet | None = None):
    """Fit a :class:`VelocityNet`; returns ``(net, log)``.

    Without an explicit ``validation`` list, the last ``validation_fraction``
    of ``dataset`` is held out. Results are deterministic for a fixed seed.
    """
    if not dataset:
        raise ValueError("training set is empty")
    dims = {s.x0.grid.dims for s in dataset}
    if len(dims) != 1:
        raise ValueError("all training samples must share one grid")
    data = list(dataset)
    if validation is None and train_cfg.validation_fraction > 0 and len(data) > 1:
        k = max(1, int(round(train_cfg.validation_fraction * len(data))))
        data, validation = data[:-k], data[-k:]
    validation = validation or []

    grid = data[0].x0.grid
    schema = data[0].attrs.schema
    if init is not None:
        net = init
    else:
        net = VelocityNet(net_cfg, grid.ndim, len(schema), seed=train_cfg.rng_seed)
    if net.n_attributes and net.normalizer is None:
        net.normalizer = AttributeNormalizer.fit([s.attrs for s in data])
    net.check_dims(grid.dims)

    all_attrs, imputed = net.normalize_attributes([s.attrs for s in data])
    if imputed:
        log.warning("imputed %d missing attribute values with training means", imputed)
    opt = Optimizer(train_cfg)
    rng = np.random.default_rng(train_cfg.rng_seed)
    params = net.params.tensors
    history = []
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(data))
        losses = []
        for b, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            idx = order[start:start + train_cfg.batch_size]
            batch = [data[i] for i in idx]
            attrs = all_attrs[idx] if net.n_attributes else None
            value, grads = _batch_loss(net, batch, attrs, train_cfg, need_grad=True)
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergedError(
                    f"non-finite loss/gradient at epoch {epoch}, batch {b} "
                    f"(learning rate {train_cfg.learning_rate}, loss {value})"
                )
            opt.step(params, grads, net.params.frozen)
            losses.append(value * len(batch))
        net.clear_cache()
        entry = {"epoch": epoch, "train_loss": float(np.sum(losses) / len(data))}
        if validation:
            entry["val_loss"] = evaluate_loss(net, validation, train_cfg)
        entry["train_loss_per_voxel"] = entry["train_loss"] / grid.size
        history.append(entry)
        log.info("epoch %d train %.4f val %s", epoch, entry["train_loss"], entry.get("val_loss"))
    result = {
        "epochs": history,
        "imputed_attributes": imputed,
        "n_train": len(data),
        "n_validation": len(validation),
        "train_config": train_cfg.to_dict(),
        "net_config": net_cfg.to_dict(),
        "param_count": net.params.count,
    }
    return net, result


def predict(net: VelocityNet, x0: ScalarImage, attrs: AttributeVector | None, t: float,
            icfg: IntegrationConfig = IntegrationConfig()):
    """``(x_hat, phi, v)`` with ``v = net(x0, a)``, ``phi = exp(t v)`` and ``x_hat = x0 o phi``."""
    v = net.forward(x0, attrs)
    phi = integrate_svf(v, icfg.at(t))
    return warp_image(x0, phi), phi, v
