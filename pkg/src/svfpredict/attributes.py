"""Clinical attribute vectors and their train-set normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_NAMES = ("education_years", "sex", "apoe3", "apoe4", "diagnosis", "mmse")
#: categorical features and their number of levels; encoded as 0..levels-1
DEFAULT_CATEGORICAL = {"sex": 2, "apoe3": 3, "apoe4": 3, "diagnosis": 3}


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple[str, ...] = DEFAULT_NAMES
    categorical: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_CATEGORICAL))

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        unknown = set(self.categorical) - set(self.names)
        if unknown:
            raise ValueError(f"categorical features {sorted(unknown)} not in schema")

    def __len__(self):
        return len(self.names)

    def is_continuous(self, name: str) -> bool:
        return name not in self.categorical

    def to_json(self) -> dict:
        return {"names": list(self.names), "categorical": dict(self.categorical)}

    @classmethod
    def from_json(cls, d: dict) -> "AttributeSchema":
        return cls(tuple(d["names"]), {k: int(v) for k, v in d["categorical"].items()})


@dataclass(frozen=True, eq=False)
class AttributeVector:
    """Raw (unnormalized) attribute values; NaN marks a missing entry."""

    values: np.ndarray
    schema: AttributeSchema = AttributeSchema()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.shape[0] != len(self.schema):
            raise ValueError(f"{values.shape[0]} attribute values for a schema of {len(self.schema)}")
        for name, levels in self.schema.categorical.items():
            x = values[self.schema.names.index(name)]
            if not np.isnan(x) and (x != int(x) or not 0 <= x < levels):
                raise ValueError(f"categorical attribute {name}={x} outside 0..{levels - 1}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def as_dict(self) -> dict:
        return {n: (None if np.isnan(v) else float(v)) for n, v in zip(self.schema.names, self.values)}

    @classmethod
    def from_dict(cls, d: dict, schema: AttributeSchema = AttributeSchema()) -> "AttributeVector":
        return cls(np.array([np.nan if d.get(n) is None else d[n] for n in schema.names], dtype=float), schema)


@dataclass
class AttributeNormalizer:
    """Per-feature training statistics.

    Continuous features are standardized; categorical ones pass through.
    Missing values are replaced by the training mean of that feature before
    standardization.
    """

    schema: AttributeSchema
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, vectors: list[AttributeVector]) -> "AttributeNormalizer":
        if not vectors:
            raise ValueError("cannot fit a normalizer on no attribute vectors")
        schema = vectors[0].schema
        X = np.stack([a.values for a in vectors])
        mean = np.zeros(len(schema))
        std = np.ones(len(schema))
        for j in range(len(schema)):
            col = X[:, j][~np.isnan(X[:, j])]
            mean[j] = col.mean() if col.size else 0.0
            if col.size > 1 and col.std() > 0:
                std[j] = col.std()
        return cls(schema, mean, std)

    def transform(self, a: AttributeVector) -> tuple[np.ndarray, int]:
        """Normalized values and the number of imputed entries."""
        if a.schema.names != self.schema.names:
            raise ValueError("attribute schema does not match the normalizer")
        x = a.values.copy()
        missing = np.isnan(x)
        x[missing] = self.mean[missing]
        for j, name in enumerate(self.schema.names):
            if self.schema.is_continuous(name):
                x[j] = (x[j] - self.mean[j]) / self.std[j]
        return x, int(missing.sum())

    def to_json(self) -> dict:
        return {"schema": self.schema.to_json(), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "AttributeNormalizer":
        return cls(AttributeSchema.from_json(d["schema"]), np.array(d["mean"]), np.array(d["std"]))
