"""The identification model.

A sample's score over all M candidate POIs combines two parts:

* spatio-temporal dependence: the normalized distance row of each adjacent
  POI, gated elementwise by a tanh-transformed time interval
  (short gap => distant candidates get suppressed);
* the user's dynamic preference: tanh hidden layers over the context POI
  embeddings, the user embedding, and the 7-bit target-time pattern, summed
  and projected to candidate space.

Softmax of the summed scores gives the candidate distribution. Ablation
variants gate individual parts (forward/backward branch, dependence terms,
time pattern).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geodata import PoiTable, SpatialRowCache, spatial_vector
from .ingest import Sample
from .numerics import ShapeMismatch, glorot_uniform, log_softmax_at, stable_softmax

CHECKPOINT_MAGIC = b"STDDPCKPT"


@dataclass(frozen=True)
class HyperParams:
    d: int = 64  # embedding dimension
    h: int = 256  # hidden units
    w: int = 1  # context window width per direction

    def __post_init__(self):
        if min(self.d, self.h, self.w) < 1:
            raise ValueError(f"hyperparameters must be >= 1: {self}")


@dataclass(frozen=True)
class VariantConfig:
    use_forward_branch: bool = True
    use_backward_branch: bool = True
    use_dependence: bool = True
    use_time_pattern: bool = True

    def __post_init__(self):
        if not (self.use_forward_branch or self.use_backward_branch):
            raise ValueError("at least one direction must be enabled")


# The standard model plus the four ablations reported alongside it.
VARIANTS: dict[str, VariantConfig] = {
    "bi-stddp": VariantConfig(),
    "f-stddp": VariantConfig(use_backward_branch=False),
    "b-stddp": VariantConfig(use_forward_branch=False),
    "bi-b": VariantConfig(use_dependence=False),
    "bi-a": VariantConfig(use_dependence=False, use_time_pattern=False),
}


def variant_from_name(name: str) -> VariantConfig:
    try:
        return VARIANTS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None


@dataclass
class ModelParams:
    """All learnable tensors. Field order is the checkpoint order."""

    poi_emb: np.ndarray  # (M, d)
    user_emb: np.ndarray  # (N, d)
    fwd_hidden: list[np.ndarray] = field(default_factory=list)  # w x (h, d)
    bwd_hidden: list[np.ndarray] = field(default_factory=list)  # w x (h, d)
    user_hidden: np.ndarray = None  # (h, d)
    time_hidden: np.ndarray = None  # (h, 7)
    interval_w_before: np.ndarray = None  # (M,)
    interval_w_after: np.ndarray = None  # (M,)
    out_weights: np.ndarray = None  # (M, h)

    @property
    def n_pois(self) -> int:
        return self.poi_emb.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def hyper(self) -> HyperParams:
        return HyperParams(
            d=self.poi_emb.shape[1],
            h=self.user_hidden.shape[0],
            w=len(self.fwd_hidden),
        )

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [("poi_emb", self.poi_emb), ("user_emb", self.user_emb)]
        out += [(f"fwd_hidden[{k}]", t) for k, t in enumerate(self.fwd_hidden)]
        out += [(f"bwd_hidden[{k}]", t) for k, t in enumerate(self.bwd_hidden)]
        out += [
            ("user_hidden", self.user_hidden),
            ("time_hidden", self.time_hidden),
            ("interval_w_before", self.interval_w_before),
            ("interval_w_after", self.interval_w_after),
            ("out_weights", self.out_weights),
        ]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            poi_emb=self.poi_emb.copy(),
            user_emb=self.user_emb.copy(),
            fwd_hidden=[t.copy() for t in self.fwd_hidden],
            bwd_hidden=[t.copy() for t in self.bwd_hidden],
            user_hidden=self.user_hidden.copy(),
            time_hidden=self.time_hidden.copy(),
            interval_w_before=self.interval_w_before.copy(),
            interval_w_after=self.interval_w_after.copy(),
            out_weights=self.out_weights.copy(),
        )


def init_params(
    hp: HyperParams, n_users: int, n_pois: int, rng: np.random.Generator
) -> ModelParams:
    """Glorot-uniform initialization of every tensor.

    Fans follow each tensor's role as a linear map; the length-M interval
    weight vectors count as M x 1 maps (fan_in 1, fan_out M). Tensors are
    drawn in checkpoint order, so one seed fixes the whole model.
    """
    d, h, w = hp.d, hp.h, hp.w
    return ModelParams(
        poi_emb=glorot_uniform(rng, n_pois, d, (n_pois, d)),
        user_emb=glorot_uniform(rng, n_users, d, (n_users, d)),
        fwd_hidden=[glorot_uniform(rng, d, h, (h, d)) for _ in range(w)],
        bwd_hidden=[glorot_uniform(rng, d, h, (h, d)) for _ in range(w)],
        user_hidden=glorot_uniform(rng, d, h, (h, d)),
        time_hidden=glorot_uniform(rng, 7, h, (h, 7)),
        interval_w_before=glorot_uniform(rng, 1, n_pois, (n_pois,)),
        interval_w_after=glorot_uniform(rng, 1, n_pois, (n_pois,)),
        out_weights=glorot_uniform(rng, h, n_pois, (n_pois, h)),
    )


def zero_params(hp: HyperParams, n_users: int, n_pois: int) -> ModelParams:
    d, h, w = hp.d, hp.h, hp.w
    z = np.zeros
    return ModelParams(
        poi_emb=z((n_pois, d)),
        user_emb=z((n_users, d)),
        fwd_hidden=[z((h, d)) for _ in range(w)],
        bwd_hidden=[z((h, d)) for _ in range(w)],
        user_hidden=z((h, d)),
        time_hidden=z((h, 7)),
        interval_w_before=z(n_pois),
        interval_w_after=z(n_pois),
        out_weights=z((n_pois, h)),
    )


@dataclass
class ForwardTrace:
    """Every intermediate of one forward evaluation, kept for backprop.

    Branch fields are None when the variant gates them off.
    """

    sample: Sample
    variant: VariantConfig
    pattern_vec: np.ndarray  # (7,)
    fwd_emb: np.ndarray | None  # (w, d)
    bwd_emb: np.ndarray | None
    user_vec: np.ndarray  # (d,)
    h_fwd: np.ndarray | None  # (h,)
    h_bwd: np.ndarray | None
    h_user: np.ndarray
    h_time: np.ndarray | None
    pref: np.ndarray  # (h,) summed dynamic preference
    spat_before: np.ndarray | None  # (M,) normalized distance row of p_{t-1}
    spat_after: np.ndarray | None
    tgate_before: np.ndarray | None  # (M,) tanh(interval_w * interval)
    tgate_after: np.ndarray | None
    dep_before: np.ndarray | None  # (M,) spat * tgate
    dep_after: np.ndarray | None
    logits: np.ndarray  # (M,)
    probs: np.ndarray  # (M,)


def _check_sample(sample: Sample, params: ModelParams, w: int) -> None:
    m, n = params.n_pois, params.n_users
    if not 0 <= sample.user < n:
        raise ShapeMismatch(f"user {sample.user} outside [0, {n})")
    if not 0 <= sample.target_poi < m:
        raise ShapeMismatch(f"target POI {sample.target_poi} outside [0, {m})")
    if len(sample.fwd) != w or len(sample.bwd) != w:
        raise ShapeMismatch(
            f"context width {len(sample.fwd)}/{len(sample.bwd)} does not match w={w}"
        )
    for p in (*sample.fwd, *sample.bwd):
        if not 0 <= p < m:
            raise ShapeMismatch(f"context POI {p} outside [0, {m})")


def forward(
    sample: Sample,
    params: ModelParams,
    table: PoiTable,
    variant: VariantConfig = VARIANTS["bi-stddp"],
    cache: SpatialRowCache | None = None,
) -> ForwardTrace:
    """Evaluate the model on one sample and return the full trace.

    Dependence terms use only the immediate neighbors (t-1 / t+1) even for
    w > 1; wider context enters through the hidden branches.
    """
    w = len(params.fwd_hidden)
    _check_sample(sample, params, w)
    v = np.array(sample.pattern, dtype=np.float64)

    def spat_row(poi: int) -> np.ndarray:
        return cache.row(poi) if cache is not None else spatial_vector(poi, table)

    fwd_emb = bwd_emb = None
    h_fwd = h_bwd = None
    user_vec = params.user_emb[sample.user]
    pref = np.zeros(params.user_hidden.shape[0])

    if variant.use_forward_branch:
        fwd_emb = params.poi_emb[list(sample.fwd)]
        acc = np.zeros_like(pref)
        for k in range(w):
            acc += params.fwd_hidden[k] @ fwd_emb[k]
        h_fwd = np.tanh(acc)
        pref += h_fwd
    if variant.use_backward_branch:
        bwd_emb = params.poi_emb[list(sample.bwd)]
        acc = np.zeros_like(pref)
        for k in range(w):
            acc += params.bwd_hidden[k] @ bwd_emb[k]
        h_bwd = np.tanh(acc)
        pref += h_bwd

    h_user = np.tanh(params.user_hidden @ user_vec)
    pref += h_user

    h_time = None
    if variant.use_time_pattern:
        h_time = np.tanh(params.time_hidden @ v)
        pref += h_time

    logits = params.out_weights @ pref

    spat_before = spat_after = None
    tgate_before = tgate_after = None
    dep_before = dep_after = None
    if variant.use_dependence:
        if variant.use_forward_branch:
            spat_before = spat_row(sample.fwd[0])
            tgate_before = np.tanh(params.interval_w_before * sample.interval_before)
            dep_before = spat_before * tgate_before
            logits = logits + dep_before
        if variant.use_backward_branch:
            spat_after = spat_row(sample.bwd[0])
            tgate_after = np.tanh(params.interval_w_after * sample.interval_after)
            dep_after = spat_after * tgate_after
            logits = logits + dep_after

    return ForwardTrace(
        sample=sample,
        variant=variant,
        pattern_vec=v,
        fwd_emb=fwd_emb,
        bwd_emb=bwd_emb,
        user_vec=user_vec,
        h_fwd=h_fwd,
        h_bwd=h_bwd,
        h_user=h_user,
        h_time=h_time,
        pref=pref,
        spat_before=spat_before,
        spat_after=spat_after,
        tgate_before=tgate_before,
        tgate_after=tgate_after,
        dep_before=dep_before,
        dep_after=dep_after,
        logits=logits,
        probs=stable_softmax(logits),
    )


def cross_entropy(trace: ForwardTrace, target: int) -> float:
    """-log p(target), fused log-sum-exp over the logits."""
    return -log_softmax_at(trace.logits, target)


def predict_topk(trace: ForwardTrace, k: int) -> np.ndarray:
    """Indices of the k most probable POIs; ties go to the lower index."""
    m = trace.probs.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k={k} outside [1, {m}]")
    order = np.argsort(-trace.probs, kind="stable")
    return order[:k]


def make_ranker(
    params: ModelParams,
    table: PoiTable,
    variant: VariantConfig = VARIANTS["bi-stddp"],
    cache: SpatialRowCache | None = None,
):
    """Callable Sample -> full candidate ranking, for the eval harness."""
    m = params.n_pois

    def rank(sample: Sample) -> np.ndarray:
        return predict_topk(forward(sample, params, table, variant, cache), m)

    return rank


def save_checkpoint(path, params: ModelParams) -> None:
    """Binary checkpoint: magic, 5 uint32 LE dims (N, M, d, h, w), then all
    tensors as little-endian float64 in `named_tensors` order."""
    hp = params.hyper
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<5I", params.n_users, params.n_pois, hp.d, hp.h, hp.w))
        for _, tensor in params.named_tensors():
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


class BadCheckpoint(ValueError):
    """Checkpoint file is corrupt or carries the wrong magic."""


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise BadCheckpoint(f"{path}: bad magic {magic!r}")
        n, m, d, h, w = struct.unpack("<5I", fh.read(20))
        params = zero_params(HyperParams(d=d, h=h, w=w), n, m)
        for name, tensor in params.named_tensors():
            raw = fh.read(tensor.size * 8)
            if len(raw) != tensor.size * 8:
                raise BadCheckpoint(f"{path}: truncated at tensor {name}")
            tensor[...] = np.frombuffer(raw, dtype="<f8").reshape(tensor.shape)
        if fh.read(1):
            raise BadCheckpoint(f"{path}: trailing bytes after last tensor")
    return params


def expect_compatible(params: ModelParams, n_users: int, n_pois: int, w: int) -> None:
    """Raise ShapeMismatch unless the checkpoint fits the corpus."""
    hp = params.hyper
    if (params.n_users, params.n_pois, hp.w) != (n_users, n_pois, w):
        raise ShapeMismatch(
            f"checkpoint (N={params.n_users}, M={params.n_pois}, w={hp.w}) does not "
            f"match corpus (N={n_users}, M={n_pois}, w={w})"
        )
