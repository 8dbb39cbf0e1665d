import numpy as np
import pytest

from svfpredict.attributes import AttributeNormalizer, AttributeSchema, AttributeVector


def vec(*values):
    return AttributeVector(np.array(values, dtype=float))


def test_schema_defaults():
    s = AttributeSchema()
    assert s.names == ("education_years", "sex", "apoe3", "apoe4", "diagnosis", "mmse")
    assert s.is_continuous("mmse") and not s.is_continuous("diagnosis")
    assert AttributeSchema.from_json(s.to_json()) == s


def test_length_and_category_validation():
    with pytest.raises(ValueError):
        vec(1, 2, 3)
    with pytest.raises(ValueError):
        vec(16, 0, 0, 0, 3, 28)  # diagnosis has three levels
    with pytest.raises(ValueError):
        AttributeSchema(("a",), {"b": 2})


def test_dict_round_trip():
    a = vec(16, 1, 0, 1, 2, np.nan)
    d = a.as_dict()
    assert d["mmse"] is None
    b = AttributeVector.from_dict(d)
    assert np.array_equal(a.values, b.values, equal_nan=True)


def test_normalizer_standardizes_continuous_only():
    data = [vec(12, 0, 0, 0, 0, 30), vec(16, 1, 1, 0, 1, 26), vec(20, 1, 2, 1, 2, 22)]
    norm = AttributeNormalizer.fit(data)
    rows = np.stack([norm.transform(a)[0] for a in data])
    for j in (0, 5):
        assert abs(rows[:, j].mean()) < 1e-12 and abs(rows[:, j].std() - 1) < 1e-12
    np.testing.assert_array_equal(rows[:, 1:5], np.stack([a.values[1:5] for a in data]))


def test_missing_values_imputed_with_training_mean():
    data = [vec(12, 0, 0, 0, 0, 30), vec(16, 1, 1, 0, 1, 26)]
    norm = AttributeNormalizer.fit(data)
    x, imputed = norm.transform(vec(np.nan, 1, 0, 0, np.nan, 20))
    assert imputed == 2
    assert x[0] == 0.0  # mean of a continuous feature standardizes to zero
    assert x[4] == 0.5  # categorical mean passes through unscaled


def test_normalizer_json(rng):
    data = [vec(rng.integers(8, 22), 0, 1, 0, 2, rng.integers(20, 30)) for _ in range(5)]
    norm = AttributeNormalizer.fit(data)
    back = AttributeNormalizer.from_json(norm.to_json())
    np.testing.assert_array_equal(back.mean, norm.mean)
    np.testing.assert_array_equal(back.std, norm.std)


def test_schema_mismatch():
    norm = AttributeNormalizer.fit([vec(12, 0, 0, 0, 0, 30)])
    other = AttributeVector(np.zeros(2), AttributeSchema(("a", "b"), {}))
    with pytest.raises(ValueError):
        norm.transform(other)
