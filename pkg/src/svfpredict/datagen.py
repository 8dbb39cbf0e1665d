"""Synthetic longitudinal brain phantoms with known deformations.

Each subject gets an ellipse/ellipsoid anatomy (cortex ring, white matter,
a ventricle analog and two hippocampus analogs) and a smooth velocity field
made of a radial expansion about the ventricle, whose yearly rate depends on
a synthetic diagnosis attribute, plus a small random perturbation. The
follow-up image and labels are the baseline warped by ``exp(t v)``.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, special

from . import mff
from .attributes import AttributeSchema, AttributeVector
from .fields import Grid, LabelMap, ScalarImage, VectorField
from .integrate import IntegrationConfig, integrate_svf
from .metrics import volume_change
from .warp import warp_image, warp_labels

STRUCTURES = {1: "cortex", 2: "white_matter", 3: "ventricle", 4: "hippocampus_left", 5: "hippocampus_right"}
VENTRICLE = 3
INTENSITY = {0: 0.0, 1: 0.55, 2: 0.85, 3: 0.15, 4: 0.65, 5: 0.65}


class PhantomConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, ...] = (64, 64)
    spacing: tuple[float, ...] | None = None
    n_subjects: int = 20
    rng_seed: int = 0
    ventricle_expansion_rate: float = 0.08
    attr_effect: float = 0.06
    rate_noise: float = 0.02
    noise_sigma: float = 0.01
    perturbation: float = 0.1
    t_range: tuple[float, float] = (1.0, 3.0)
    anatomy_jitter: float = 1.0
    missing_fraction: float = 0.0
    intensity_smoothing: float = 1.0
    max_deformation_fraction: float = 0.25
    integration_steps: int = 7

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "t_range", tuple(float(x) for x in self.t_range))
        if self.spacing is not None:
            object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        try:
            Grid(self.dims, self.spacing)
        except ValueError as exc:
            raise PhantomConfigError(str(exc)) from exc
        if min(self.dims) < 16:
            raise PhantomConfigError("phantom grids need at least 16 voxels per axis")
        if self.n_subjects < 1:
            raise PhantomConfigError("n_subjects must be >= 1")
        lo, hi = self.t_range
        if not 0 < lo <= hi:
            raise PhantomConfigError(f"t_range must satisfy 0 < lo <= hi, got {self.t_range}")
        for name in ("noise_sigma", "perturbation", "rate_noise", "anatomy_jitter", "intensity_smoothing"):
            if getattr(self, name) < 0:
                raise PhantomConfigError(f"{name} must be non-negative")
        if not 0 <= self.missing_fraction < 1:
            raise PhantomConfigError("missing_fraction must lie in [0, 1)")

    @property
    def grid(self) -> Grid:
        return Grid(self.dims, self.spacing)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise PhantomConfigError(f"unknown phantom config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


@dataclass(frozen=True, eq=False)
class LongitudinalSample:
    subject_id: str
    x0: ScalarImage
    xt: ScalarImage
    t: float
    attrs: AttributeVector
    labels0: LabelMap
    labelst: LabelMap
    truth_v: VectorField | None = None
    truth: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("follow-up gap t must be positive")
        dims = {o.grid.dims for o in (self.x0, self.xt, self.labels0, self.labelst)}
        if self.truth_v is not None:
            dims.add(self.truth_v.grid.dims)
        if len(dims) != 1:
            raise ValueError("all fields of a sample must share one grid")


# --- building blocks ----------------------------------------------------------

def random_smooth_field(dims, rng: np.random.Generator, sigma: float, max_norm: float) -> np.ndarray:
    """Gaussian-filtered white noise per component, rescaled to ``max_norm``."""
    dims = tuple(dims)
    v = np.stack([ndimage.gaussian_filter(rng.standard_normal(dims), sigma, mode="reflect") for _ in dims])
    peak = np.sqrt(np.max(np.sum(v * v, axis=0)))
    if peak == 0 or max_norm == 0:
        return np.zeros_like(v)
    return v * (max_norm / peak)


def _rotation(D: int, angle: float) -> np.ndarray:
    R = np.eye(D)
    c, s = np.cos(angle), np.sin(angle)
    R[:2, :2] = [[c, -s], [s, c]]
    return R


def _inside(X: np.ndarray, center, axes, R) -> np.ndarray:
    d = X - np.asarray(center).reshape((-1,) + (1,) * (X.ndim - 1))
    local = np.tensordot(R.T, d, axes=1)
    return np.sum((local / np.asarray(axes).reshape((-1,) + (1,) * (X.ndim - 1))) ** 2, axis=0) <= 1.0


def _paint(points: np.ndarray, anatomy) -> np.ndarray:
    """Label of the continuous anatomy at every point; later shapes overwrite earlier ones."""
    labels = np.zeros(points.shape[1:], dtype=np.int32)
    for lab, center, axes, R in anatomy:
        labels[_inside(points, center, axes, R)] = lab
    return labels


def radial_expansion(dims, center, width: float, rate: float) -> np.ndarray:
    """``rate * (x - c) * exp(-|x - c|^2 / (2 width^2))`` in voxel units.

    Warping by ``exp(-t * field)`` grows a region centred on ``c``.
    """
    X = np.indices(dims, dtype=np.float64)
    d = X - np.asarray(center, dtype=float).reshape((-1,) + (1,) * len(dims))
    g = np.exp(-np.sum(d * d, axis=0) / (2.0 * width**2))
    return rate * d * g


def _radial_flow(rho0: np.ndarray, kt: float, width: float) -> np.ndarray:
    """Radius after flowing ``d rho/dt = k rho exp(-rho^2/2w^2)`` for time-rate product ``kt``.

    With ``y = rho^2 / 2w^2`` the flow is ``Ei(y_t) = Ei(y_0) + 2 k t``; solved by
    safeguarded Newton iterations.
    """
    y0 = rho0**2 / (2.0 * width**2)
    target = special.expi(y0) + 2.0 * kt
    y = y0.copy()
    for _ in range(100):
        step = (special.expi(y) - target) * y * np.exp(-y)
        y_new = np.maximum(y - step, 0.5 * y)
        if np.max(np.abs(y_new - y)) < 1e-15 * np.max(y):
            y = y_new
            break
        y = y_new
    return np.sqrt(2.0 * width**2 * y)


def analytic_volume_change(axes, angle: float, kt: float, width: float) -> float:
    """Relative volume change of a centred ellipse/ellipsoid under the radial flow."""
    axes = np.asarray(axes, dtype=float)
    D = axes.size
    R = _rotation(D, angle)
    if D == 2:
        theta = np.linspace(0.0, 2 * np.pi, 4096, endpoint=False)
        u = np.stack([np.cos(theta), np.sin(theta)])
        weights = np.full(theta.size, 2 * np.pi / theta.size) / 2.0
    else:
        mu, wmu = np.polynomial.legendre.leggauss(96)
        phi = np.linspace(0.0, 2 * np.pi, 192, endpoint=False)
        M, P = np.meshgrid(mu, phi, indexing="ij")
        s = np.sqrt(1 - M**2)
        u = np.stack([s * np.cos(P), s * np.sin(P), M]).reshape(3, -1)
        weights = (np.outer(wmu, np.full(phi.size, 2 * np.pi / phi.size)) / 3.0).ravel()
    local = R.T @ u
    rho0 = 1.0 / np.sqrt(np.sum((local / axes[:, None]) ** 2, axis=0))
    rho = _radial_flow(rho0, kt, width)
    v0 = np.sum(weights * rho0**D)
    return float(np.sum(weights * rho**D) / v0 - 1.0)


def _attributes(rng: np.random.Generator) -> tuple[np.ndarray, int]:
    diagnosis = int(rng.choice(3, p=[0.4, 0.35, 0.25]))
    apoe4 = int(rng.choice(3, p=[0.6, 0.3, 0.1] if diagnosis == 0 else [0.35, 0.45, 0.2]))
    apoe3 = int(rng.integers(0, 3 - apoe4))
    sex = int(rng.integers(0, 2))
    education = float(np.clip(np.round(rng.normal(16.0, 2.5)), 8, 22))
    mmse = float(np.clip(np.round(29.0 - 2.5 * diagnosis + rng.normal(0.0, 1.2)), 10, 30))
    return np.array([education, sex, apoe3, apoe4, diagnosis, mmse], dtype=float), diagnosis


def _subject(cfg: PhantomConfig, seq: np.random.SeedSequence, index: int) -> LongitudinalSample:
    rng = np.random.default_rng(seq)
    grid = cfg.grid
    dims = grid.dims
    D = grid.ndim
    n = np.array(dims, dtype=float)
    unit = n / 64.0
    j = cfg.anatomy_jitter

    center = (n - 1) / 2 + rng.uniform(-2, 2, D) * j * unit
    brain_axes = n * np.array([0.40, 0.36, 0.36][:D]) * (1 + rng.uniform(-0.04, 0.04, D) * j)
    cortex = 3.0 * unit.mean()
    vent_center = center + rng.uniform(-3, 3, D) * j * unit
    vent_axes = unit * (np.array([10.0, 7.0, 7.0][:D]) + j * rng.uniform(-1.5, 1.5, D))
    vent_angle = float(rng.uniform(-0.4, 0.4) * j)
    hip_offset = np.zeros(D)
    hip_offset[0] = 0.25 * n[0]
    hip_axes = unit * np.array([4.0, 2.5, 2.5][:D])

    anatomy = [
        (1, center, brain_axes, np.eye(D)),
        (2, center, brain_axes - cortex, np.eye(D)),
    ]
    for lab, side in ((4, -1.0), (5, 1.0)):
        c = center + hip_offset
        c[1] += side * 0.22 * n[1]
        anatomy.append((lab, c, hip_axes, np.eye(D)))
    anatomy.append((VENTRICLE, vent_center, vent_axes, _rotation(D, vent_angle)))
    labels = _paint(grid.identity(), anatomy)

    attrs, diagnosis = _attributes(rng)
    rate = max(0.0, cfg.ventricle_expansion_rate + cfg.attr_effect * diagnosis + cfg.rate_noise * rng.normal())
    t = float(rng.uniform(*cfg.t_range))
    width = 1.5 * float(vent_axes.mean())
    # pull-back warping: an inward velocity grows the ventricle in x_t
    v = radial_expansion(dims, vent_center, width, -rate)
    v = v + random_smooth_field(dims, rng, sigma=6.0 * unit.mean(), max_norm=cfg.perturbation)

    peak = t * float(np.sqrt(np.max(np.sum(v * v, axis=0))))
    if peak > cfg.max_deformation_fraction * min(dims):
        raise PhantomConfigError(
            f"subject {index}: peak displacement {peak:.2f} voxels exceeds "
            f"{cfg.max_deformation_fraction:.0%} of the grid extent"
        )

    table = np.array([INTENSITY[k] for k in range(6)])
    clean = ndimage.gaussian_filter(table[labels], cfg.intensity_smoothing, mode="nearest") \
        if cfg.intensity_smoothing > 0 else table[labels]
    labels0 = LabelMap(labels, grid, STRUCTURES)
    x0_clean = ScalarImage(clean, grid)
    truth_v = VectorField(v, grid)
    phi = integrate_svf(truth_v, IntegrationConfig(cfg.integration_steps, t))
    xt_clean = warp_image(x0_clean, phi).values
    labelst = warp_labels(labels0, phi)

    noise0 = rng.standard_normal(dims)
    noiset = rng.standard_normal(dims)
    x0 = np.clip(clean + cfg.noise_sigma * noise0, 0.0, 1.0)
    xt = np.clip(xt_clean + cfg.noise_sigma * noiset, 0.0, 1.0)

    if cfg.missing_fraction > 0:
        drop = rng.random(attrs.size) < cfg.missing_fraction
        attrs = np.where(drop, np.nan, attrs)

    truth = {
        "rate": rate,
        "diagnosis": diagnosis,
        "ventricle_center": [float(c) for c in vent_center],
        "ventricle_axes": [float(a) for a in vent_axes],
        "ventricle_angle": vent_angle,
        "expansion_width": width,
        "peak_displacement": peak,
        "ventricle_volume_change": volume_change(labels0, labelst, VENTRICLE),
        "ventricle_volume_change_analytic": analytic_volume_change(vent_axes, vent_angle, rate * t, width),
    }
    return LongitudinalSample(
        subject_id=f"sub-{index:04d}",
        x0=ScalarImage(x0, grid),
        xt=ScalarImage(xt, grid),
        t=t,
        attrs=AttributeVector(attrs, AttributeSchema()),
        labels0=labels0,
        labelst=labelst,
        truth_v=truth_v,
        truth=truth,
    )


def generate(cfg: PhantomConfig) -> list[LongitudinalSample]:
    """Generate ``cfg.n_subjects`` subjects; deterministic in ``cfg.rng_seed``."""
    seqs = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_subjects)
    return [_subject(cfg, s, i) for i, s in enumerate(seqs)]


def split(samples: list, train_fraction: float = 0.8) -> tuple[list, list]:
    """First ``train_fraction`` of subjects for training, the rest for testing."""
    k = int(round(train_fraction * len(samples)))
    return list(samples[:k]), list(samples[k:])


# --- on-disk datasets ------------------------------------------------------------

_FILES = ("x0", "xt", "labels0", "labelst", "truth_v")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_dataset(samples: list[LongitudinalSample], out_dir, config: dict | None = None,
                 train_fraction: float = 0.8) -> Path:
    """Write subjects as MFF files plus ``manifest.json``.

    Everything is written to a temporary sibling directory first and moved
    into place at the end, so a failure leaves no partial output.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise FileExistsError(f"{out_dir} exists and is not empty")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=out_dir.parent))
    try:
        train, test = split(samples, train_fraction)
        subjects = []
        for s in samples:
            sub = tmp / "subjects" / s.subject_id
            sub.mkdir(parents=True)
            files = {}
            for name in _FILES:
                obj = getattr(s, name)
                if obj is None:
                    continue
                path = sub / f"{name}.mff"
                mff.save(path, obj, provenance={"generator": "svfpredict.datagen", "subject": s.subject_id})
                rel = path.relative_to(tmp).as_posix()
                files[name] = {"path": rel, "sha256": _sha256(path)}
            subjects.append({
                "id": s.subject_id,
                "t": s.t,
                "attributes": s.attrs.as_dict(),
                "files": files,
                "truth": s.truth,
            })
        manifest = {
            "format": "svfpredict-dataset/1",
            "config": config or {},
            "attribute_schema": samples[0].attrs.schema.to_json(),
            "structure_names": {str(k): v for k, v in STRUCTURES.items()},
            "split": {"train": [s.subject_id for s in train], "test": [s.subject_id for s in test]},
            "subjects": subjects,
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if out_dir.exists():
            out_dir.rmdir()
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out_dir / "manifest.json"


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def _schema(manifest: dict) -> AttributeSchema:
    d = manifest.get("attribute_schema")
    return AttributeSchema.from_json(d) if d else AttributeSchema()


def load_subject(manifest_path, entry: dict, schema: AttributeSchema | None = None) -> LongitudinalSample:
    root = Path(manifest_path).parent
    if schema is None:
        schema = _schema(load_manifest(manifest_path))
    fields = {}
    for name, info in entry["files"].items():
        path = root / info["path"]
        if "sha256" in info and _sha256(path) != info["sha256"]:
            raise mff.MFFError(f"{path}: checksum does not match the manifest")
        fields[name] = mff.load(path)
    return LongitudinalSample(
        subject_id=entry["id"],
        x0=fields["x0"],
        xt=fields["xt"],
        t=float(entry["t"]),
        attrs=AttributeVector.from_dict(entry["attributes"], schema),
        labels0=fields["labels0"],
        labelst=fields["labelst"],
        truth_v=fields.get("truth_v"),
        truth=entry.get("truth", {}),
    )


def load_dataset(manifest_path, split_name: str | None = None) -> list[LongitudinalSample]:
    """Load every subject, or only those of ``split_name`` ("train"/"test")."""
    manifest = load_manifest(manifest_path)
    wanted = None if split_name is None else set(manifest["split"][split_name])
    schema = _schema(manifest)
    return [load_subject(manifest_path, e, schema) for e in manifest["subjects"] if wanted is None or e["id"] in wanted]
