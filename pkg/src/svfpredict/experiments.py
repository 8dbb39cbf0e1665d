"""Synthetic-cohort experiments: method comparison, attribute effect, volume-ordered gains.

These functions are what the acceptance suite runs; the CLI's ``evaluate``
uses :func:`volume_ordered_rows` for its subjects-by-volume-change table.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .baselines import OptimizerConfig, mean_velocity_baseline, oracle_register, predict_with_velocity
from .datagen import VENTRICLE, PhantomConfig, generate, split
from .integrate import IntegrationConfig
from .metrics import dice, format_table
from .network import NetConfig, TrainConfig, predict, train
from .warp import warp_labels

log = logging.getLogger(__name__)

METHODS = ("identity", "mean", "learned", "oracle")


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomConfig = field(default_factory=lambda: PhantomConfig(n_subjects=200))
    train_fraction: float = 0.8
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30, learning_rate=3e-3,
                                                                   validation_fraction=0.0))
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def _ventricle_dice(samples, phis) -> list[float]:
    return [dice(warp_labels(s.labels0, phi), s.labelst, VENTRICLE) for s, phi in zip(samples, phis)]


def method_comparison(cfg: ExperimentConfig = ExperimentConfig(), methods=METHODS,
                      keep_model: bool = False) -> dict:
    """Ventricle Dice on the held-out split for each method.

    Returns per-subject Dice lists keyed by method, the true ventricle volume
    changes, subject ids and wall-clock seconds per stage. With
    ``keep_model`` the trained network is included under ``"model"``.
    """
    samples = generate(cfg.phantom)
    train_set, test_set = split(samples, cfg.train_fraction)
    loss_cfg = cfg.train.loss
    icfg = replace(cfg.integration, steps=cfg.train.steps)
    out = {"subjects": [s.subject_id for s in test_set],
           "volume_change": [s.truth["ventricle_volume_change"] for s in test_set],
           "dice": {}, "seconds": {}}
    for method in methods:
        t0 = time.perf_counter()
        if method == "identity":
            out["dice"][method] = [dice(s.labels0, s.labelst, VENTRICLE) for s in test_set]
        elif method == "mean":
            v_mean = mean_velocity_baseline(train_set, loss_cfg, icfg, cfg.optimizer)
            phis = [predict_with_velocity(s.x0, v_mean, s.t, icfg)[1] for s in test_set]
            out["dice"][method] = _ventricle_dice(test_set, phis)
        elif method == "learned":
            net, train_log = train(train_set, cfg.net, cfg.train)
            out["train_loss"] = [e["train_loss"] for e in train_log["epochs"]]
            if keep_model:
                out["model"] = net
            phis = [predict(net, s.x0, s.attrs, s.t, icfg)[1] for s in test_set]
            out["dice"][method] = _ventricle_dice(test_set, phis)
        elif method == "oracle":
            phis = []
            for s in test_set:
                r = oracle_register(s.x0, s.xt, loss_cfg, icfg, cfg.optimizer, t=s.t)
                phis.append(predict_with_velocity(s.x0, r.v, s.t, icfg)[1])
            out["dice"][method] = _ventricle_dice(test_set, phis)
        else:
            raise ValueError(f"unknown method {method!r}")
        out["seconds"][method] = time.perf_counter() - t0
        log.info("%s: mean ventricle Dice %.4f (%.0f s)", method, np.mean(out["dice"][method]),
                 out["seconds"][method])
    out["mean_dice"] = {m: float(np.mean(d)) for m, d in out["dice"].items()}
    return out


def attribute_effect(cfg: ExperimentConfig = ExperimentConfig(), repetitions: int = 3) -> list[dict]:
    """Paired runs with and without attribute conditioning.

    Repetition ``r`` uses phantom seed ``phantom.rng_seed + r`` and training
    seed ``train.rng_seed + r`` for both arms, so the arms differ only in
    whether the network sees the attributes.
    """
    results = []
    for r in range(repetitions):
        rep_cfg = replace(cfg, phantom=replace(cfg.phantom, rng_seed=cfg.phantom.rng_seed + r),
                          train=replace(cfg.train, rng_seed=cfg.train.rng_seed + r))
        arms = {}
        for use in (True, False):
            arm_cfg = replace(rep_cfg, net=replace(rep_cfg.net, use_attributes=use))
            arms[use] = method_comparison(arm_cfg, methods=("learned",))["mean_dice"]["learned"]
        results.append({"repetition": r, "with_attributes": arms[True], "without_attributes": arms[False],
                        "gain": arms[True] - arms[False]})
        log.info("repetition %d: with %.4f without %.4f", r, arms[True], arms[False])
    return results


def explained_rate_variance(cfg: PhantomConfig, n: int = 2000) -> float:
    """Fraction of expansion-rate variance explained by the attribute term.

    Computed from the generator's rate model with ``n`` diagnosis draws; the
    non-negativity clamp is ignored.
    """
    from .datagen import _attributes

    rng = np.random.default_rng(cfg.rng_seed)
    diag = np.array([_attributes(rng)[1] for _ in range(n)], dtype=float)
    signal = (cfg.attr_effect**2) * diag.var()
    return float(signal / (signal + cfg.rate_noise**2))


def volume_ordered_rows(subjects, volume_change, dice_by_method: dict, reference: str = "identity") -> list[dict]:
    """Subjects ordered by decreasing true volume change with Dice gains over ``reference``."""
    order = sorted(range(len(subjects)), key=lambda i: (-volume_change[i], subjects[i]))
    rows = []
    for i in order:
        row = {"subject": subjects[i], "volume_change": volume_change[i]}
        for m, d in dice_by_method.items():
            row[f"dice_{m}"] = d[i]
            if m != reference and reference in dice_by_method:
                row[f"gain_{m}"] = d[i] - dice_by_method[reference][i]
        rows.append(row)
    return rows


def volume_ordered_table(rows: list[dict]) -> str:
    if not rows:
        return "(no subjects)"
    keys = [k for k in rows[0] if k != "subject"]
    return format_table(["subject"] + keys, [[r["subject"]] + [float(r[k]) for k in keys] for r in rows])


def gain_rank_correlation(volume_change, dice_method, dice_reference) -> float:
    """Spearman correlation between true volume change and per-subject Dice gain."""
    gain = np.asarray(dice_method) - np.asarray(dice_reference)
    return float(stats.spearmanr(volume_change, gain).statistic)
