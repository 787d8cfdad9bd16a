"""Toy differentiable encoders.

A small affine+tanh image backbone, a single-affine projection head, a
frozen stochastic mean-pooling text encoder, and the 14 per-question
classification heads.  Parameters live in a flat float64 vector with named
reshaped views so the optimizer can treat any model as one array; reverse
mode is hand-written and checked against finite differences.
"""

import json

import numpy as np

from .errors import InvalidArgumentError, StateError

__all__ = [
    "ParamStore",
    "ImageEncoder",
    "ProjectionHead",
    "TextEncoder",
    "MultiTaskHeads",
    "HEAD_CLASS_COUNTS",
    "l2_normalize",
    "l2_normalize_grad",
    "save_checkpoint",
    "load_checkpoint",
]

# Option counts of the 14 structured report questions, in question order.
HEAD_CLASS_COUNTS = (4, 4, 5, 2, 5, 4, 7, 3, 7, 4, 3, 5, 5, 3)

CHECKPOINT_MAGIC = "OCKPT1"


class ParamStore:
    """Flat float64 parameter vector with named reshaped views.

    Views share memory with ``flat``; in-place updates on either side are
    visible to the other, which is what the optimizer relies on.
    """

    def __init__(self, shapes: dict[str, tuple[int, ...]]):
        self._index: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in shapes.items():
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            self._index[name] = (offset, tuple(shape))
            offset += size
        self.flat = np.zeros(offset, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.flat.size

    def names(self) -> list[str]:
        return list(self._index)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: shape for name, (_, shape) in self._index.items()}

    def view(self, name: str) -> np.ndarray:
        offset, shape = self._index[name]
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        return self.flat[offset : offset + size].reshape(shape)

    def zeros_like(self) -> "ParamStore":
        return ParamStore(self.shapes())

    def copy(self) -> "ParamStore":
        out = self.zeros_like()
        out.flat[:] = self.flat
        return out


def _init_affine(params: ParamStore, prefix: str, fan_in: int, rng: np.random.Generator):
    bound = 1.0 / np.sqrt(fan_in)
    w = params.view(f"{prefix}.W")
    b = params.view(f"{prefix}.b")
    w[:] = rng.uniform(-bound, bound, size=w.shape)
    b[:] = rng.uniform(-bound, bound, size=b.shape)


class _AffineStack:
    """Affine layers with tanh between them and a linear final layer."""

    def __init__(self, dims: list[int], seed: int | None = None):
        if len(dims) < 2:
            raise InvalidArgumentError("need at least input and output dims")
        self.dims = list(dims)
        shapes: dict[str, tuple[int, ...]] = {}
        for i in range(len(dims) - 1):
            shapes[f"layer{i}.W"] = (dims[i + 1], dims[i])
            shapes[f"layer{i}.b"] = (dims[i + 1],)
        self.params = ParamStore(shapes)
        if seed is not None:
            rng = np.random.default_rng(seed)
            for i in range(len(dims) - 1):
                _init_affine(self.params, f"layer{i}", dims[i], rng)
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise InvalidArgumentError(
                f"expected input dim {self.dims[0]}, got shape {x.shape}"
            )
        inputs = []
        h = x
        for i in range(self.n_layers):
            inputs.append(h)
            h = h @ self.params.view(f"layer{i}.W").T + self.params.view(f"layer{i}.b")
            if i < self.n_layers - 1:
                h = np.tanh(h)
        self._cache = (inputs, h)
        return h[0] if squeeze else h

    def backward(self, d_out: np.ndarray):
        """Propagate d(loss)/d(output); returns (grads, d_input)."""
        if self._cache is None:
            raise StateError("backward called without a matching forward")
        inputs, out = self._cache
        d = np.asarray(d_out, dtype=np.float64)
        if d.ndim == 1:
            d = d[None, :]
        grads = self.params.zeros_like()
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                # activation of layer i output was tanh; recover it from the
                # cached input of layer i+1
                act = inputs[i + 1]
                d = d * (1.0 - act * act)
            grads.view(f"layer{i}.W")[:] = d.T @ inputs[i]
            grads.view(f"layer{i}.b")[:] = d.sum(axis=0)
            d = d @ self.params.view(f"layer{i}.W")
        self._cache = None
        return grads, d


class ImageEncoder:
    """Flatten -> (affine, tanh)* -> affine; output dim is the feature dim."""

    def __init__(self, input_dim: int, hidden: tuple[int, ...] = (64, 64),
                 feature_dim: int = 64, seed: int | None = 0):
        self.input_dim = int(input_dim)
        self.feature_dim = int(feature_dim)
        self.stack = _AffineStack([input_dim, *hidden, feature_dim], seed=seed)
        self.params = self.stack.params

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:  # one volume
            x = x.ravel()
        elif x.ndim == 4:  # batch of volumes
            x = x.reshape(x.shape[0], -1)
        return self.stack.forward(x)

    def backward(self, d_features: np.ndarray):
        return self.stack.backward(d_features)


class ProjectionHead:
    """Single affine map from backbone features to the text embedding dim."""

    def __init__(self, feature_dim: int, embed_dim: int, seed: int | None = 0,
                 depth: int = 1):
        if depth < 1:
            raise InvalidArgumentError("depth must be >= 1")
        dims = [feature_dim] + [feature_dim] * (depth - 1) + [embed_dim]
        self.stack = _AffineStack(dims, seed=seed)
        self.params = self.stack.params
        self.embed_dim = int(embed_dim)

    def forward(self, feats: np.ndarray) -> np.ndarray:
        return self.stack.forward(feats)

    def backward(self, d_out: np.ndarray):
        return self.stack.backward(d_out)


class MultiTaskHeads:
    """One affine head per structured question, sharing the feature input."""

    def __init__(self, feature_dim: int, class_counts: tuple[int, ...] = HEAD_CLASS_COUNTS,
                 seed: int | None = 0):
        self.feature_dim = int(feature_dim)
        self.class_counts = tuple(int(c) for c in class_counts)
        shapes: dict[str, tuple[int, ...]] = {}
        for k, c in enumerate(self.class_counts):
            shapes[f"head{k}.W"] = (c, feature_dim)
            shapes[f"head{k}.b"] = (c,)
        self.params = ParamStore(shapes)
        if seed is not None:
            rng = np.random.default_rng(seed)
            for k in range(len(self.class_counts)):
                _init_affine(self.params, f"head{k}", feature_dim, rng)
        self._cache = None

    def forward(self, feats: np.ndarray) -> list[np.ndarray]:
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[None, :]
        if feats.shape[1] != self.feature_dim:
            raise InvalidArgumentError(
                f"expected feature dim {self.feature_dim}, got {feats.shape[1]}"
            )
        self._cache = feats
        return [
            feats @ self.params.view(f"head{k}.W").T + self.params.view(f"head{k}.b")
            for k in range(len(self.class_counts))
        ]

    def backward(self, d_logits: list[np.ndarray]):
        """d_logits: per-head upstream gradients (None to skip a head)."""
        if self._cache is None:
            raise StateError("backward called without a matching forward")
        feats = self._cache
        grads = self.params.zeros_like()
        d_feats = np.zeros_like(feats)
        for k, d in enumerate(d_logits):
            if d is None:
                continue
            d = np.asarray(d, dtype=np.float64)
            grads.view(f"head{k}.W")[:] = d.T @ feats
            grads.view(f"head{k}.b")[:] = d.sum(axis=0)
            d_feats += d @ self.params.view(f"head{k}.W")
        self._cache = None
        return grads, d_feats


class TextEncoder:
    """Frozen token-embedding table with dropout and mean pooling."""

    def __init__(self, vocab_size: int, embed_dim: int, dropout: float = 0.0,
                 seed: int | None = 0):
        if not 0.0 <= dropout < 1.0:
            raise InvalidArgumentError("dropout must lie in [0, 1)")
        self.vocab_size = int(vocab_size)
        self.embed_dim = int(embed_dim)
        self.dropout = float(dropout)
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(embed_dim)
        self.table = rng.uniform(-bound, bound, size=(vocab_size, embed_dim))

    def forward(self, tokens, rng: np.random.Generator | None = None) -> np.ndarray:
        """Mean of (dropout-masked, inverted-rescaled) token embeddings."""
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise InvalidArgumentError("token sequence must be non-empty and 1-D")
        if np.any(ids < 0) or np.any(ids >= self.vocab_size):
            raise InvalidArgumentError("token id outside vocabulary")
        emb = self.table[ids]
        if self.dropout > 0.0:
            if rng is None:
                raise InvalidArgumentError("dropout > 0 requires an rng")
            keep = rng.random(emb.shape) >= self.dropout
            emb = emb * keep / (1.0 - self.dropout)
        return emb.mean(axis=0)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale vector(s) to unit L2 norm; rows are normalized independently."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        n = np.linalg.norm(v)
        if n == 0.0:
            raise InvalidArgumentError("cannot normalize the zero vector")
        return v / n
    n = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(n == 0.0):
        raise InvalidArgumentError("cannot normalize a zero row")
    return v / n


def l2_normalize_grad(v: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    """Backprop through row-wise L2 normalization.

    Given d(loss)/d(v/|v|), returns d(loss)/dv.
    """
    v = np.asarray(v, dtype=np.float64)
    d_unit = np.asarray(d_unit, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[None, :]
        d_unit = d_unit[None, :]
    n = np.linalg.norm(v, axis=1, keepdims=True)
    u = v / n
    dv = (d_unit - (d_unit * u).sum(axis=1, keepdims=True) * u) / n
    return dv[0] if squeeze else dv


# ---------------------------------------------------------------------------
# Checkpoint format: one JSON manifest line, then the concatenated
# little-endian float64 blobs of each array in manifest order.
# ---------------------------------------------------------------------------


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.astype("<f8").tobytes())
    manifest = {"magic": CHECKPOINT_MAGIC, "arrays": entries, "meta": meta or {}}
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Returns (arrays, meta)."""
    with open(path, "rb") as f:
        header = f.readline()
        manifest = json.loads(header.decode("utf-8"))
        if manifest.get("magic") != CHECKPOINT_MAGIC:
            raise InvalidArgumentError(f"not a checkpoint file: {path}")
        arrays = {}
        for entry in manifest["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            data = np.frombuffer(f.read(count * 8), dtype="<f8", count=count)
            arrays[entry["name"]] = data.reshape(shape).astype(np.float64)
    return arrays, manifest.get("meta", {})
