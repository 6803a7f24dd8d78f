"""Bag aggregation heads (MIL, gated MIL, MRL) with hand-derived backward passes.

All heads score n instances h_1..h_n (rows of the bag matrix), pool them into
a single embedding z in feature space, and classify with a shared linear
layer: logits = Wc z + bc.

    mil:   score_k = w^T tanh(V h_k),              z = sum_k softmax(score)_k h_k
    gmil:  score_k = w^T (tanh(V h_k) * sigm(U h_k)), pooled like mil
    mrl:   s1 = Drop(softplus(V h_k)), s2 = Drop(sigm(U h_k)),
           e_k = s1*s2 / (s1+s2+eps), a_k = w^T e_k, z = (1/n) sum_k a_k h_k

Everything runs in float64; caches keep every intermediate so backward never
re-does a forward.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .validation import as_instances, check_finite

HEAD_NAMES = ("mil", "gmil", "mrl")
_HEAD_CODES = {name: code for code, name in enumerate(HEAD_NAMES)}

MRL_EPS = 1e-8

_CKPT_MAGIC = b"MRLP"
_CKPT_VERSION = 1


@dataclass
class HeadParams:
    """Learnable tensors of one attention head plus the shared classifier.

    Also serves as the container for gradients (same shapes throughout).
    """

    V: np.ndarray  # (L, d)
    U: np.ndarray  # (L, d) - unused by plain mil
    w: np.ndarray  # (L,)
    Wc: np.ndarray  # (K, d)
    bc: np.ndarray  # (K,)

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        self.Wc = np.asarray(self.Wc, dtype=np.float64)
        self.bc = np.asarray(self.bc, dtype=np.float64)
        L, d = self.V.shape
        if self.U.shape != (L, d) or self.w.shape != (L,):
            raise DimensionError("V, U, w shapes are inconsistent")
        K = self.Wc.shape[0]
        if self.Wc.shape != (K, d) or self.bc.shape != (K,):
            raise DimensionError("classifier shapes are inconsistent")
        for name in self.names():
            check_finite(getattr(self, name), name)

    @staticmethod
    def names() -> tuple[str, ...]:
        return ("V", "U", "w", "Wc", "bc")

    @property
    def hidden(self) -> int:
        return self.V.shape[0]

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    @property
    def n_labels(self) -> int:
        return self.Wc.shape[0]

    def copy(self) -> "HeadParams":
        return HeadParams(*(getattr(self, n).copy() for n in self.names()))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(hidden: int, dim: int, n_labels: int = 6, seed=0) -> HeadParams:
    """Glorot-uniform init, fully determined by the seed (draw order V, U, w, Wc)."""
    if hidden < 1 or dim < 1 or n_labels < 1:
        raise DimensionError("hidden, dim, n_labels must be >= 1")
    rng = np.random.default_rng(seed)
    return HeadParams(
        V=_glorot(rng, dim, hidden, (hidden, dim)),
        U=_glorot(rng, dim, hidden, (hidden, dim)),
        w=_glorot(rng, hidden, 1, (hidden,)),
        Wc=_glorot(rng, dim, n_labels, (n_labels, dim)),
        bc=np.zeros(n_labels),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


@dataclass
class ForwardCache:
    """Every intermediate a backward pass needs, keyed to one forward call."""

    head: str
    bag: np.ndarray
    z: np.ndarray
    extras: dict = field(default_factory=dict)


def _classify(p: HeadParams, z: np.ndarray) -> np.ndarray:
    return p.Wc @ z + p.bc


def _check_bag(bag, p: HeadParams) -> np.ndarray:
    h = as_instances(bag)
    if h.shape[1] != p.dim:
        raise DimensionError(f"bag dim {h.shape[1]} != params dim {p.dim}")
    return h


def mil_forward(bag, p: HeadParams, train_mode: bool = False, seed=None):
    """Tanh attention with softmax pooling. Returns (logits, attn, cache)."""
    h = _check_bag(bag, p)
    t = np.tanh(h @ p.V.T)
    scores = t @ p.w
    attn = _softmax(scores)
    z = attn @ h
    cache = ForwardCache("mil", h, z, {"t": t, "attn": attn})
    return _classify(p, z), attn, cache


def gated_mil_forward(bag, p: HeadParams, train_mode: bool = False, seed=None):
    """Tanh attention with a sigmoid gate. Returns (logits, attn, cache)."""
    h = _check_bag(bag, p)
    t = np.tanh(h @ p.V.T)
    g = _sigmoid(h @ p.U.T)
    scores = (t * g) @ p.w
    attn = _softmax(scores)
    z = attn @ h
    cache = ForwardCache("gmil", h, z, {"t": t, "g": g, "attn": attn})
    return _classify(p, z), attn, cache


def mrl_forward(
    bag,
    p: HeadParams,
    train_mode: bool = False,
    dropout_rate: float = 0.0,
    seed=None,
):
    """Two-stream product-over-sum attention with mean-weighted pooling.

    The softplus and sigmoid streams each pass through inverted dropout
    (active only in train_mode, mask drawn from `seed`); their elementwise
    product divided by their sum gives activations in [0, 1), projected to
    one raw score per instance. Returned attn holds the raw scores.
    """
    if not 0.0 <= dropout_rate < 1.0:
        raise DimensionError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    h = _check_bag(bag, p)
    n = h.shape[0]
    p1 = h @ p.V.T
    p2 = h @ p.U.T
    s1 = np.logaddexp(0.0, p1)  # softplus
    s2 = _sigmoid(p2)
    if train_mode and dropout_rate > 0.0:
        rng = np.random.default_rng(seed)
        keep = 1.0 - dropout_rate
        mask1 = (rng.random(s1.shape) >= dropout_rate) / keep
        mask2 = (rng.random(s2.shape) >= dropout_rate) / keep
    else:
        mask1 = mask2 = None
    d1 = s1 if mask1 is None else s1 * mask1
    d2 = s2 if mask2 is None else s2 * mask2
    den = d1 + d2 + MRL_EPS
    e = d1 * d2 / den
    raw = e @ p.w
    z = (raw @ h) / n
    cache = ForwardCache(
        "mrl",
        h,
        z,
        {
            "p1": p1,
            "p2": p2,
            "s2": s2,
            "d1": d1,
            "d2": d2,
            "den": den,
            "e": e,
            "raw": raw,
            "mask1": mask1,
            "mask2": mask2,
        },
    )
    return _classify(p, z), raw, cache


def forward(head: str, bag, p: HeadParams, train_mode: bool = False,
            dropout_rate: float = 0.0, seed=None):
    """Dispatch to one of the three heads by name."""
    if head == "mil":
        return mil_forward(bag, p, train_mode, seed)
    if head == "gmil":
        return gated_mil_forward(bag, p, train_mode, seed)
    if head == "mrl":
        return mrl_forward(bag, p, train_mode, dropout_rate, seed)
    raise ValueError(f"unknown head {head!r} (expected one of {HEAD_NAMES})")


def normalized_scores(raw: np.ndarray) -> np.ndarray:
    """MRL raw scores rescaled to sum to 1, for inspection (uniform if degenerate)."""
    total = raw.sum()
    if total == 0.0:
        return np.full_like(raw, 1.0 / raw.size)
    return raw / total


def _softmax_backward(attn: np.ndarray, dattn: np.ndarray) -> np.ndarray:
    return attn * (dattn - attn @ dattn)


def backward(cache: ForwardCache, p: HeadParams, dlogits) -> HeadParams:
    """Exact gradients of dlogits . logits with respect to every parameter."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != (p.n_labels,):
        raise DimensionError(f"dlogits shape {dlogits.shape} != ({p.n_labels},)")
    h = cache.bag
    if h.shape[1] != p.dim:
        raise DimensionError("cache and params disagree on feature dimension")
    x = cache.extras

    dWc = np.outer(dlogits, cache.z)
    dbc = dlogits.copy()
    dz = p.Wc.T @ dlogits

    if cache.head == "mil":
        attn, t = x["attn"], x["t"]
        ds = _softmax_backward(attn, h @ dz)
        dw = t.T @ ds
        dpre = np.outer(ds, p.w) * (1.0 - t * t)
        dV = dpre.T @ h
        dU = np.zeros_like(p.U)
    elif cache.head == "gmil":
        attn, t, g = x["attn"], x["t"], x["g"]
        ds = _softmax_backward(attn, h @ dz)
        dw = (t * g).T @ ds
        dm = np.outer(ds, p.w)
        dV = (dm * g * (1.0 - t * t)).T @ h
        dU = (dm * t * g * (1.0 - g)).T @ h
    elif cache.head == "mrl":
        n = h.shape[0]
        da = (h @ dz) / n
        dw = x["e"].T @ da
        de = np.outer(da, p.w)
        den = x["den"]
        dd1 = de * x["d2"] * (x["d2"] + MRL_EPS) / (den * den)
        dd2 = de * x["d1"] * (x["d1"] + MRL_EPS) / (den * den)
        if x["mask1"] is not None:
            dd1 = dd1 * x["mask1"]
            dd2 = dd2 * x["mask2"]
        dV = (dd1 * _sigmoid(x["p1"])).T @ h  # softplus' = sigmoid
        s2 = x["s2"]
        dU = (dd2 * s2 * (1.0 - s2)).T @ h
    else:
        raise ValueError(f"unknown head {cache.head!r} in cache")
    return HeadParams(V=dV, U=dU, w=dw, Wc=dWc, bc=dbc)


def save_checkpoint(path: str | Path, head: str, params: HeadParams) -> None:
    """Little-endian checkpoint: magic, version, head code, dims, f64 tensors."""
    if head not in _HEAD_CODES:
        raise ValueError(f"unknown head {head!r}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIB", _CKPT_MAGIC, _CKPT_VERSION, _HEAD_CODES[head]))
        fh.write(struct.pack("<III", params.hidden, params.dim, params.n_labels))
        for name in params.names():
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[str, HeadParams]:
    blob = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"truncated checkpoint {path}")
        out = blob[off : off + n]
        off += n
        return out

    magic, version, head_code = struct.unpack("<4sIB", take(9))
    if magic != _CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r} in {path}")
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} in {path}")
    if head_code >= len(HEAD_NAMES):
        raise FormatError(f"unknown head code {head_code} in {path}")
    L, d, K = struct.unpack("<III", take(12))

    def tensor(shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(take(count * 8), dtype="<f8").copy().reshape(shape)

    params = HeadParams(
        V=tensor((L, d)),
        U=tensor((L, d)),
        w=tensor((L,)),
        Wc=tensor((K, d)),
        bc=tensor((K,)),
    )
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes in {path}")
    return HEAD_NAMES[head_code], params
