import json

import numpy as np
import pytest
from scipy import stats

from svfpredict import IntegrationConfig, integrate_svf, jacobian_determinant
from svfpredict.datagen import (
    VENTRICLE,
    PhantomConfig,
    PhantomConfigError,
    analytic_volume_change,
    generate,
    load_dataset,
    save_dataset,
    split,
)
from svfpredict.metrics import dice, volume_change
from svfpredict.mff import MFFError

SMALL = dict(dims=(32, 32), n_subjects=4)


def test_no_change_gives_identical_pair():
    cfg = PhantomConfig(**SMALL, ventricle_expansion_rate=0.0, attr_effect=0.0, rate_noise=0.0,
                        perturbation=0.0, noise_sigma=0.0)
    for s in generate(cfg):
        assert np.array_equal(s.x0.values, s.xt.values)
        assert np.array_equal(s.labels0.values, s.labelst.values)


def test_single_subject_volume_change_matches_analytic():
    cfg = PhantomConfig(n_subjects=1, ventricle_expansion_rate=0.4, attr_effect=0.0, rate_noise=0.0,
                        perturbation=0.0, noise_sigma=0.0, t_range=(1.0, 1.0))
    (s,) = generate(cfg)
    measured = volume_change(s.labels0, s.labelst, VENTRICLE)
    target = s.truth["ventricle_volume_change_analytic"]
    assert target > 0.5
    assert abs(measured / target - 1) <= 0.05


def test_analytic_volume_change_limits():
    assert analytic_volume_change([10.0, 7.0], 0.0, 0.0, 12.0) == 0.0
    small = analytic_volume_change([10.0, 7.0], 0.0, 1e-4, 1e6)
    # far inside a very wide profile the flow is a uniform dilation: area grows by exp(2kt)
    assert small == pytest.approx(np.expm1(2e-4), rel=1e-3)


def test_determinism_and_seed_sensitivity():
    a = generate(PhantomConfig(**SMALL, rng_seed=5))
    b = generate(PhantomConfig(**SMALL, rng_seed=5))
    c = generate(PhantomConfig(**SMALL, rng_seed=6))
    for x, y in zip(a, b):
        assert np.array_equal(x.xt.values, y.xt.values) and np.array_equal(x.truth_v.values, y.truth_v.values)
        assert x.t == y.t and np.array_equal(x.attrs.values, y.attrs.values)
    assert not np.array_equal(a[0].x0.values, c[0].x0.values)


def test_truth_velocity_is_diffeomorphic():
    for s in generate(PhantomConfig(n_subjects=6, rng_seed=2)):
        phi = integrate_svf(s.truth_v, IntegrationConfig(7, s.t))
        assert jacobian_determinant(phi).values.min() > 0


def test_ventricle_dice_falls_with_expansion():
    cohort = generate(PhantomConfig(n_subjects=40, rng_seed=0, t_range=(2.0, 2.0)))
    d = [dice(s.labels0, s.labelst, VENTRICLE) for s in cohort]
    assert stats.spearmanr([s.truth["rate"] for s in cohort], d).statistic <= -0.9
    cohort = generate(PhantomConfig(n_subjects=40, rng_seed=0))
    d = [dice(s.labels0, s.labelst, VENTRICLE) for s in cohort]
    assert stats.spearmanr([s.truth["rate"] * s.t for s in cohort], d).statistic <= -0.9


def test_diagnosis_drives_rate():
    cohort = generate(PhantomConfig(n_subjects=40, rng_seed=1))
    diag = np.array([s.truth["diagnosis"] for s in cohort])
    rate = np.array([s.truth["rate"] for s in cohort])
    assert np.all(diag == np.array([s.attrs.values[4] for s in cohort]))
    assert rate[diag == 2].mean() > rate[diag == 1].mean() > rate[diag == 0].mean()


def test_follow_up_ventricle_grows():
    for s in generate(PhantomConfig(n_subjects=5, rng_seed=3)):
        assert s.truth["ventricle_volume_change"] > 0
        assert 0.0 <= s.xt.values.min() and s.xt.values.max() <= 1.0


def test_deformation_bound():
    with pytest.raises(PhantomConfigError):
        generate(PhantomConfig(n_subjects=2, ventricle_expansion_rate=5.0, t_range=(3.0, 3.0)))


@pytest.mark.parametrize("kwargs", [dict(dims=(8, 8)), dict(n_subjects=0), dict(t_range=(0.0, 1.0)),
                                    dict(noise_sigma=-1.0), dict(missing_fraction=1.0), dict(dims=(16, 16, 16, 16))])
def test_config_validation(kwargs):
    with pytest.raises(PhantomConfigError):
        PhantomConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = PhantomConfig(dims=(32, 48), t_range=(0.5, 2.0))
    assert PhantomConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_missing_attributes():
    cohort = generate(PhantomConfig(**SMALL, missing_fraction=0.5, rng_seed=4))
    assert any(np.isnan(s.attrs.values).any() for s in cohort)


def test_three_dimensional_phantom():
    (s,) = generate(PhantomConfig(dims=(16, 16, 16), n_subjects=1))
    assert s.x0.values.shape == (16, 16, 16) and s.truth_v.values.shape == (3, 16, 16, 16)
    assert VENTRICLE in s.labels0.labels()


def test_split_is_deterministic_and_disjoint():
    cohort = generate(PhantomConfig(dims=(16, 16), n_subjects=10))
    tr, te = split(cohort, 0.8)
    assert len(tr) == 8 and len(te) == 2
    assert not {s.subject_id for s in tr} & {s.subject_id for s in te}


class TestDatasetFiles:
    def test_round_trip(self, tmp_path):
        cohort = generate(PhantomConfig(**SMALL))
        manifest = save_dataset(cohort, tmp_path / "data", {"note": "x"})
        data = json.loads(manifest.read_text())
        assert len(data["subjects"]) == 4 and data["split"]["test"]
        back = load_dataset(manifest)
        for a, b in zip(cohort, back):
            assert a.subject_id == b.subject_id and a.t == b.t
            assert np.array_equal(a.xt.values, b.xt.values)
            assert np.array_equal(a.labelst.values, b.labelst.values)
            assert np.array_equal(a.attrs.values, b.attrs.values)
        assert [s.subject_id for s in load_dataset(manifest, "test")] == data["split"]["test"]

    def test_same_seed_same_bytes(self, tmp_path):
        m1 = save_dataset(generate(PhantomConfig(**SMALL)), tmp_path / "a")
        m2 = save_dataset(generate(PhantomConfig(**SMALL)), tmp_path / "b")
        assert m1.read_bytes() == m2.read_bytes()

    def test_refuses_non_empty_target(self, tmp_path):
        (tmp_path / "data").mkdir()
        (tmp_path / "data" / "keep.txt").write_text("x")
        with pytest.raises(FileExistsError):
            save_dataset(generate(PhantomConfig(**SMALL)), tmp_path / "data")

    def test_checksum_verified(self, tmp_path):
        manifest = save_dataset(generate(PhantomConfig(**SMALL)), tmp_path / "data")
        f = next((tmp_path / "data" / "subjects").glob("*/xt.mff"))
        raw = bytearray(f.read_bytes())
        raw[-1] ^= 0xFF
        f.write_bytes(bytes(raw))
        with pytest.raises(MFFError):
            load_dataset(manifest)
