"""Nodal field images, phase images, boundary conditions and datasets.

Index convention: ``data[i, j, c]`` with ``i`` the row (growing downward)
and ``j`` the column (growing rightward). Element ``(a, b)`` of a phase
image spans the nodes ``(a, b), (a, b+1), (a+1, b), (a+1, b+1)``.

A phase value of 1 selects material phase 0 and a value of 0 selects
phase 1: the blend weight of phase ``h`` in an element is
``h + (-1)**h * H``.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionError, ParseError, ValidationError

MAGIC = b"FEAN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIBII")
PHASE_KIND_CODE = 3


class PhysicsKind(enum.Enum):
    THERMAL = 0
    ELASTICITY = 1
    THERMOELASTICITY = 2

    @property
    def channels(self) -> int:
        return (1, 2, 3)[self.value]

    @property
    def labels(self) -> tuple:
        return (("T",), ("x", "y"), ("x", "y", "T"))[self.value]

    @classmethod
    def parse(cls, value) -> "PhysicsKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "thermal": cls.THERMAL,
            "elasticity": cls.ELASTICITY,
            "elastic": cls.ELASTICITY,
            "biphase": cls.ELASTICITY,
            "biphaseelasticity": cls.ELASTICITY,
            "thermoelasticity": cls.THERMOELASTICITY,
            "thermoelastic": cls.THERMOELASTICITY,
        }
        if key not in aliases:
            raise ValidationError(f"unknown physics kind {value!r}")
        return aliases[key]

    def channel_index(self, label: str) -> int:
        label = {"t": "T"}.get(label, label)
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"kind {self.name.lower()} has no channel {label!r}") from None


def _frozen_array(a, ndim: int, what: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimensionError(f"{what} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FieldImage:
    """Multi-channel nodal image (loading ``V`` or response ``U``)."""

    data: np.ndarray
    kind: PhysicsKind

    def __post_init__(self):
        kind = PhysicsKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2 and kind.channels == 1:
            data = data[:, :, None]
        arr = _frozen_array(data, 3, "field image")
        n, m, c = arr.shape
        if n != m:
            raise DimensionError(f"field image must be square, got {n}x{m}")
        if n < 2:
            raise DimensionError(f"field image needs at least 2 nodes per side, got {n}")
        if c != kind.channels:
            raise ValidationError(
                f"{kind.name.lower()} images have {kind.channels} channel(s), got {c}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def channel_labels(self) -> tuple:
        return self.kind.labels

    def channel(self, label: str) -> np.ndarray:
        return self.data[:, :, self.kind.channel_index(label)]

    def __eq__(self, other):
        if not isinstance(other, FieldImage):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class PhaseImage:
    """Per-element phase field with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.data, 2, "phase image")
        if arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise DimensionError(f"phase image must be square and non-empty, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("phase values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def n_nodes(self) -> int:
        return self.data.shape[0] + 1

    def binarize(self) -> "PhaseImage":
        # ties at 0.5 go to phase 0, i.e. value 1
        return PhaseImage((self.data >= 0.5).astype(np.float64))

    def __eq__(self, other):
        if not isinstance(other, PhaseImage):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    __hash__ = None


_EDGES = ("top", "bottom", "left", "right")


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet nodes and their prescribed values.

    The outer ring of nodes must always be constrained; the matrix-free
    operators are only exact away from the grid border.
    """

    mask: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool, copy=True)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim == 2:
            values = values[:, :, None]
        if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
            raise DimensionError(f"boundary mask must be square 2-D, got {mask.shape}")
        if values.shape[:2] != mask.shape:
            raise DimensionError("boundary values and mask disagree in shape")
        if not np.all(np.isfinite(values[mask])):
            raise ValidationError("prescribed boundary values must be finite")
        ring = ~interior_mask(mask.shape[0])
        if not np.all(mask[ring]):
            raise ValidationError("boundary condition must constrain the whole outer ring")
        values = np.where(mask[:, :, None], values, 0.0)
        mask.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @classmethod
    def clamped(cls, n: int, kind, value=0.0, edge_values: Optional[dict] = None):
        """All four edges fixed.

        ``value`` (scalar or per-channel sequence) applies everywhere on the
        ring; ``edge_values`` maps ``top``/``bottom``/``left``/``right`` to an
        override for that edge. Corners take the value of whichever edge is
        listed last.
        """
        kind = PhysicsKind.parse(kind)
        if n < 3:
            raise DimensionError("a clamped grid needs at least 3 nodes per side")
        mask = ~interior_mask(n)
        values = np.zeros((n, n, kind.channels))
        values[mask] = np.broadcast_to(np.asarray(value, dtype=float), (kind.channels,))
        for edge, val in (edge_values or {}).items():
            if edge not in _EDGES:
                raise ValidationError(f"unknown edge {edge!r}")
            sl = {"top": (0, slice(None)), "bottom": (n - 1, slice(None)),
                  "left": (slice(None), 0), "right": (slice(None), n - 1)}[edge]
            values[sl] = np.broadcast_to(np.asarray(val, dtype=float), (kind.channels,))
        return cls(mask, values)

    def to_dict(self) -> dict:
        return {"n": self.n, "mask": self.mask.astype(int).tolist(),
                "values": self.values.tolist()}


def interior_mask(n: int) -> np.ndarray:
    """Boolean ``(n, n)`` mask that is False on the outer ring of nodes."""
    m = np.zeros((n, n), dtype=bool)
    if n > 2:
        m[1:-1, 1:-1] = True
    return m


def new_field_image(n: int, kind, fill: float = 0.0) -> FieldImage:
    kind = PhysicsKind.parse(kind)
    if n < 2:
        raise DimensionError(f"need n >= 2, got {n}")
    return FieldImage(np.full((n, n, kind.channels), float(fill)), kind)


def circular_inclusion(n: int, center=None, radius=None) -> PhaseImage:
    """Phase image for an ``n``-node grid with one disc of value 1.

    ``center`` and ``radius`` are in node-spacing units; element ``(a, b)``
    is inside when its centroid ``(a + .5, b + .5)`` is.
    """
    m = n - 1
    if center is None:
        center = (0.5 * m, 0.5 * m)
    if radius is None:
        radius = 0.25 * m
    a, b = np.mgrid[0:m, 0:m] + 0.5
    inside = (a - center[0]) ** 2 + (b - center[1]) ** 2 <= radius ** 2
    return PhaseImage(inside.astype(np.float64))


# ---------------------------------------------------------------------------
# samples and datasets


@dataclass(frozen=True)
class Sample:
    V: FieldImage
    U: FieldImage
    H: Optional[PhaseImage] = None
    rho0: Optional[object] = None
    rho1: Optional[object] = None
    reactions: Optional[FieldImage] = None

    def __post_init__(self):
        if self.V.kind != self.U.kind:
            raise ValidationError("loading and response images must share a physics kind")
        if self.V.n != self.U.n:
            raise DimensionError("loading and response images must share a resolution")
        if self.H is not None and self.H.data.shape != (self.V.n - 1, self.V.n - 1):
            raise DimensionError(
                f"phase image must be {(self.V.n - 1,) * 2} for n={self.V.n}, got {self.H.data.shape}"
            )

    @property
    def kind(self) -> PhysicsKind:
        return self.V.kind

    @property
    def n(self) -> int:
        return self.V.n


@dataclass
class Dataset:
    samples: list = field(default_factory=list)

    def __post_init__(self):
        self.samples = list(self.samples)
        if self.samples:
            k, n = self.samples[0].kind, self.samples[0].n
            for s in self.samples[1:]:
                if s.kind != k or s.n != n:
                    raise ValidationError("all samples in a dataset must share kind and resolution")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    @property
    def kind(self) -> PhysicsKind:
        return self.samples[0].kind

    @property
    def n(self) -> int:
        return self.samples[0].n

    def append(self, sample: Sample):
        self.samples.append(sample)
        self.__post_init__()


# ---------------------------------------------------------------------------
# serialization


def _encode(data: np.ndarray, kind_code: int) -> bytes:
    n, _, c = data.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, kind_code, n, c)
    return header + np.ascontiguousarray(data, dtype="<f8").tobytes()


def image_bytes(img) -> bytes:
    if isinstance(img, PhaseImage):
        return _encode(img.data[:, :, None], PHASE_KIND_CODE)
    return _encode(img.data, img.kind.value)


def save_image(img, path) -> None:
    Path(path).write_bytes(image_bytes(img))


def parse_image(buf: bytes):
    if len(buf) < _HEADER.size:
        raise ParseError("file too short for header")
    magic, version, code, n, c = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}")
    expected = _HEADER.size + 8 * n * n * c
    if len(buf) != expected:
        raise ParseError(f"payload size {len(buf) - _HEADER.size} does not match header ({8 * n * n * c})")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(n, n, c)
    if not np.all(np.isfinite(data)):
        raise ValidationError("image payload contains non-finite values")
    if code == PHASE_KIND_CODE:
        if c != 1:
            raise ValidationError(f"phase images have one channel, header says {c}")
        return PhaseImage(data[:, :, 0])
    try:
        kind = PhysicsKind(code)
    except ValueError:
        raise ParseError(f"unknown kind code {code}") from None
    return FieldImage(data, kind)


def load_image(path):
    return parse_image(Path(path).read_bytes())


def export_csv(img, path) -> None:
    if isinstance(img, PhaseImage):
        data, labels = img.data[:, :, None], ("H",)
    else:
        data, labels = img.data, img.channel_labels
    n = data.shape[0]
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    table = np.column_stack([ii.ravel(), jj.ravel(), data.reshape(n * n, -1)])
    fmt = ["%d", "%d"] + ["%.17g"] * data.shape[2]
    np.savetxt(path, table, fmt=fmt, delimiter=",", header="i,j," + ",".join(labels), comments="")


def to_pgm(channel: np.ndarray) -> bytes:
    """8-bit binary PGM of a 2-D array, min-max normalized."""
    a = np.asarray(channel, dtype=float)
    lo, hi = a.min(), a.max()
    scaled = np.zeros_like(a) if hi == lo else (a - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    h, w = pix.shape
    return f"P5\n{w} {h}\n255\n".encode() + pix.tobytes()


def export_pgm(img, prefix) -> list:
    """Write one heatmap per channel as ``<prefix>_<label>.pgm``."""
    prefix = str(prefix)
    if isinstance(img, PhaseImage):
        items = [("H", img.data)]
    else:
        items = [(lab, img.data[:, :, k]) for k, lab in enumerate(img.channel_labels)]
    out = []
    for lab, arr in items:
        p = Path(f"{prefix}_{lab}.pgm")
        p.write_bytes(to_pgm(arr))
        out.append(p)
    return out


MANIFEST_VERSION = 1


def save_dataset(ds: Dataset, directory, meta: Optional[dict] = None) -> Path:
    """Write every sample as binary images plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, s in enumerate(ds.samples):
        entry = {}
        for name, img in (("V", s.V), ("U", s.U), ("H", s.H), ("reactions", s.reactions)):
            if img is None:
                continue
            fname = f"sample_{k:03d}_{name}.fean"
            save_image(img, d / fname)
            entry[name] = fname
        for name in ("rho0", "rho1"):
            rho = getattr(s, name)
            if rho is not None:
                entry[name] = rho.to_dict()
        entries.append(entry)
    manifest = {"version": MANIFEST_VERSION, "kind": ds.kind.name.lower(), "n": ds.n}
    manifest.update(meta or {})
    manifest["samples"] = entries
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(manifest_path) -> Dataset:
    from .kernels import MaterialParams

    p = Path(manifest_path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        manifest = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: {exc}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise ParseError(f"unsupported manifest version {manifest.get('version')!r}")
    root = p.parent
    samples = []
    for entry in manifest.get("samples", []):
        imgs = {k: load_image(root / entry[k]) for k in ("V", "U", "H", "reactions") if k in entry}
        rhos = {k: MaterialParams.from_dict(entry[k]) for k in ("rho0", "rho1") if k in entry}
        samples.append(Sample(imgs["V"], imgs["U"], imgs.get("H"), rhos.get("rho0"),
                              rhos.get("rho1"), imgs.get("reactions")))
    if not samples:
        raise ValidationError(f"{p}: manifest lists no samples")
    return Dataset(samples)


def as_array(x) -> np.ndarray:
    """Raw float array behind an image object (or the array itself)."""
    if isinstance(x, (FieldImage, PhaseImage)):
        return x.data
    return np.asarray(x, dtype=np.float64)

