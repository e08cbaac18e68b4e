"""Context-free neural Model 1.

T(q|d) is a small network over query-side and document-side token embeddings:

    x_q = P_q(tanh(layer_norm(embed_q(q))))
    x_d = P_d(tanh(layer_norm(embed_d(d))))
    T(q|d) = sigmoid(F3(relu(F2(relu(F1([x_q, x_d, x_q * x_d]))))))

Documents are scored with the product-of-sums over *all* document positions.
Gradients are derived by hand (no autodiff dependency) and checked against
finite differences in the test suite.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .corpus import DataError, Qrels

log = logging.getLogger(__name__)

LN_EPS = 1e-5
LOG_FLOOR = 1e-300
_Z_CLIP = 30.0  # keeps sigmoid strictly inside (0, 1)

PARAM_ORDER = (
    "embed_q", "embed_d",
    "pq_w", "pq_b", "pd_w", "pd_b",
    "f1_w", "f1_b", "f2_w", "f2_b", "f3_w", "f3_b",
)


@dataclass
class NeuralM1Params:
    embed_q: np.ndarray  # (vocab, emb)
    embed_d: np.ndarray  # (vocab, emb)
    pq_w: np.ndarray     # (proj, emb)
    pq_b: np.ndarray
    pd_w: np.ndarray
    pd_b: np.ndarray
    f1_w: np.ndarray     # (hidden, 3 * proj)
    f1_b: np.ndarray
    f2_w: np.ndarray     # (hidden, hidden)
    f2_b: np.ndarray
    f3_w: np.ndarray     # (1, hidden)
    f3_b: np.ndarray     # (1,)
    p_self: float = 0.1

    def __post_init__(self):
        V, E = self.embed_q.shape
        P = self.pq_w.shape[0]
        H = self.f1_w.shape[0]
        expected = {
            "embed_q": (V, E), "embed_d": (V, E),
            "pq_w": (P, E), "pq_b": (P,), "pd_w": (P, E), "pd_b": (P,),
            "f1_w": (H, 3 * P), "f1_b": (H,), "f2_w": (H, H), "f2_b": (H,),
            "f3_w": (1, H), "f3_b": (1,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not 0.0 < self.p_self < 1.0:
            raise ValueError("p_self must be in (0, 1)")

    @property
    def vocab_size(self) -> int:
        return self.embed_q.shape[0]

    @property
    def dims(self) -> dict:
        return {
            "vocab_size": self.embed_q.shape[0],
            "emb_dim": self.embed_q.shape[1],
            "proj_dim": self.pq_w.shape[0],
            "hidden_dim": self.f1_w.shape[0],
        }

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def copy(self) -> "NeuralM1Params":
        return NeuralM1Params(**{k: v.copy() for k, v in self.tensors().items()}, p_self=self.p_self)

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors().values())


def init_params(vocab_size: int, emb_dim: int = 128, proj_dim: int = 128, hidden_dim: int = 256,
                p_self: float = 0.1, seed: int = 0, dtype=np.float64) -> NeuralM1Params:
    """Embeddings ~ U(-0.05, 0.05), linear weights Xavier-uniform, zero biases."""
    rng = np.random.default_rng(seed)

    def xavier(fan_out, fan_in):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    p = dict(
        embed_q=rng.uniform(-0.05, 0.05, size=(vocab_size, emb_dim)),
        embed_d=rng.uniform(-0.05, 0.05, size=(vocab_size, emb_dim)),
        pq_w=xavier(proj_dim, emb_dim), pq_b=np.zeros(proj_dim),
        pd_w=xavier(proj_dim, emb_dim), pd_b=np.zeros(proj_dim),
        f1_w=xavier(hidden_dim, 3 * proj_dim), f1_b=np.zeros(hidden_dim),
        f2_w=xavier(hidden_dim, hidden_dim), f2_b=np.zeros(hidden_dim),
        f3_w=xavier(1, hidden_dim), f3_b=np.zeros(1),
    )
    return NeuralM1Params(**{k: v.astype(dtype) for k, v in p.items()}, p_self=p_self)


# ---- forward pieces -------------------------------------------------------------


def layer_normalize(v, eps: float = LN_EPS) -> np.ndarray:
    """Parameter-free layer normalization over the last axis."""
    v = np.asarray(v, dtype=np.float64) if not isinstance(v, np.ndarray) else v
    if v.shape[-1] < 2:
        raise ValueError("layer normalization needs dimension >= 2")
    c = v - v.mean(axis=-1, keepdims=True)
    return c / np.sqrt((c * c).mean(axis=-1, keepdims=True) + eps)


def _side_forward(emb, w, b):
    c = emb - emb.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((c * c).mean(axis=-1, keepdims=True) + LN_EPS)
    n = c * inv
    t = np.tanh(n)
    return t @ w.T + b, (n, inv, t)


def _side_backward(dx, w, cache):
    n, inv, t = cache
    gw = dx.T @ t
    gb = dx.sum(axis=0)
    dn = (dx @ w) * (1.0 - t * t)
    de = inv * (dn - dn.mean(axis=-1, keepdims=True) - n * (dn * n).mean(axis=-1, keepdims=True))
    return de, gw, gb


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_Z_CLIP, _Z_CLIP)))


def _pairs_forward(params: NeuralM1Params, xq, xd):
    """Raw T for aligned rows of ``xq`` and ``xd``."""
    u = np.concatenate([xq, xd, xq * xd], axis=1)
    z1 = u @ params.f1_w.T + params.f1_b
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.f2_w.T + params.f2_b
    h2 = np.maximum(z2, 0.0)
    z3 = h2 @ params.f3_w[0] + params.f3_b[0]
    raw = _sigmoid(z3)
    return raw, (xq, xd, u, z1, h1, z2, h2, raw)


def _pairs_backward(params: NeuralM1Params, d_raw, cache):
    xq, xd, u, z1, h1, z2, h2, raw = cache
    P = xq.shape[1]
    dz3 = d_raw * raw * (1.0 - raw)
    g = {"f3_w": (dz3 @ h2)[None, :], "f3_b": np.array([dz3.sum()])}
    dz2 = np.outer(dz3, params.f3_w[0]) * (z2 > 0)
    g["f2_w"] = dz2.T @ h1
    g["f2_b"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params.f2_w) * (z1 > 0)
    g["f1_w"] = dz1.T @ u
    g["f1_b"] = dz1.sum(axis=0)
    du = dz1 @ params.f1_w
    dprod = du[:, 2 * P:]
    dxq = du[:, :P] + dprod * xd
    dxd = du[:, P:2 * P] + dprod * xq
    return g, dxq, dxd


def _query_side(params, ids):
    return _side_forward(params.embed_q[ids], params.pq_w, params.pq_b)


def _doc_side(params, ids):
    return _side_forward(params.embed_d[ids], params.pd_w, params.pd_b)


def _grid_raw(params, xq, xd):
    """Raw T for every (row of xq, row of xd); shape (len(xq), len(xd))."""
    nq, nd = len(xq), len(xd)
    qi = np.repeat(np.arange(nq), nd)
    di = np.tile(np.arange(nd), nq)
    raw, _ = _pairs_forward(params, xq[qi], xd[di])
    return raw.reshape(nq, nd)


def t_network_forward(params: NeuralM1Params, q, d) -> float:
    """T(q|d) before self-translation mixing.

    ``q`` and ``d`` are token ids or embedding vectors of the table dimension.
    """
    E = params.embed_q.shape[1]

    def side(x, table, w, b):
        if np.ndim(x) == 0:
            emb = table[int(x)][None, :]
        else:
            emb = np.asarray(x, dtype=table.dtype).reshape(1, -1)
            if emb.shape[1] != E:
                raise ValueError(f"embedding has dimension {emb.shape[1]}, expected {E}")
        return _side_forward(emb, w, b)[0]

    xq = side(q, params.embed_q, params.pq_w, params.pq_b)
    xd = side(d, params.embed_d, params.pd_w, params.pd_b)
    return float(_pairs_forward(params, xq, xd)[0][0])


def mix_self_translation(raw, is_same_token, p_self: float):
    """p_self for identical tokens, (1 - p_self) * raw otherwise (vectorized)."""
    out = np.where(is_same_token, p_self, (1.0 - p_self) * np.asarray(raw, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def all_token_log_score(query, doc, t_lookup) -> float:
    """(1/|Q|) sum_q ln( sum_i T(q|d_i) / |D| ) with ``t_lookup(q_ids, d_ids)`` giving T.

    This is the per-position form of the product-of-sums; no smoothing.
    """
    query = np.asarray(query, dtype=np.int64)
    doc = np.asarray(doc, dtype=np.int64)
    if len(query) == 0 or len(doc) == 0:
        raise ValueError("empty query or document")
    t = t_lookup(query[:, None], doc[None, :])
    inner = t.sum(axis=1) / len(doc)
    return float(np.log(np.maximum(inner, LOG_FLOOR)).mean())


def score_neural(params: NeuralM1Params, query, doc, use_self_mix: bool = True) -> float:
    """Average log product-of-sums score of ``query`` given ``doc`` (token ids)."""
    query = np.asarray(query, dtype=np.int64)
    doc = np.asarray(doc, dtype=np.int64)
    if len(query) == 0 or len(doc) == 0:
        raise ValueError("empty query or document")
    uq, q_inv = np.unique(query, return_inverse=True)
    ud, d_inv = np.unique(doc, return_inverse=True)
    raw = _grid_raw(params, _query_side(params, uq)[0], _doc_side(params, ud)[0])
    if use_self_mix:
        raw = mix_self_translation(raw, uq[:, None] == ud[None, :], params.p_self)
    per_position = raw[:, d_inv]
    inner = per_position.sum(axis=1) / len(doc)
    return float(np.log(np.maximum(inner[q_inv], LOG_FLOOR)).mean())


def score_embedding_seqs(params: NeuralM1Params, q_embs, d_embs) -> float:
    """Same formula as :func:`score_neural` on externally supplied embedding sequences."""
    q_embs = np.atleast_2d(np.asarray(q_embs, dtype=params.embed_q.dtype))
    d_embs = np.atleast_2d(np.asarray(d_embs, dtype=params.embed_d.dtype))
    E = params.embed_q.shape[1]
    if q_embs.shape[0] == 0 or d_embs.shape[0] == 0 or q_embs.size == 0 or d_embs.size == 0:
        raise ValueError("empty embedding sequence")
    if q_embs.shape[1] != E or d_embs.shape[1] != E:
        raise ValueError(f"embedding dimension mismatch (expected {E})")
    xq = _side_forward(q_embs, params.pq_w, params.pq_b)[0]
    xd = _side_forward(d_embs, params.pd_w, params.pd_b)[0]
    inner = _grid_raw(params, xq, xd).mean(axis=1)
    return float(np.log(np.maximum(inner, LOG_FLOOR)).mean())


# ---- training -------------------------------------------------------------------


def hinge_loss(pos_score, neg_score, margin: float = 1.0):
    if margin < 0:
        raise ValueError("margin must be >= 0")
    out = np.maximum(0.0, margin - (np.asarray(pos_score) - np.asarray(neg_score)))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class TrainConfig:
    epochs: int = 32
    batch_size: int = 32
    lr: float = 3e-3
    lr_decay: float = 0.9
    warmup: float = 0.1
    weight_decay: float = 1e-7
    margin: float = 1.0
    n_neg: int = 20
    pool_depth: int = 500
    seed: int = 0
    emb_dim: int = 128
    proj_dim: int = 128
    hidden_dim: int = 256
    p_self: float = 0.1
    use_self_mix: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "lr", "lr_decay", "margin", "n_neg", "pool_depth",
                     "emb_dim", "proj_dim", "hidden_dim"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.warmup <= 0.5:
            raise ValueError("warmup fraction must be in [0, 0.5]")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def compute_gradients(params: NeuralM1Params, batch, margin: float = 1.0,
                      use_self_mix: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    """Summed hinge loss of a batch of (query, pos doc, neg doc) token arrays and its exact gradient."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    inst_q, inst_d = [], []
    for q, pos, neg in batch:
        for doc in (pos, neg):
            q = np.asarray(q, dtype=np.int64)
            doc = np.asarray(doc, dtype=np.int64)
            if len(q) == 0 or len(doc) == 0:
                raise ValueError("empty query or document in batch")
            inst_q.append(q)
            inst_d.append(doc)
    UQ = np.unique(np.concatenate(inst_q))
    UD = np.unique(np.concatenate(inst_d))

    pq, pd, slot, w = [], [], [], []
    slot_inst, slot_coef = [], []
    n_slots = 0
    for k, (q, doc) in enumerate(zip(inst_q, inst_d)):
        uq, cq = np.unique(q, return_counts=True)
        ud, cd = np.unique(doc, return_counts=True)
        qi = np.searchsorted(UQ, uq)
        di = np.searchsorted(UD, ud)
        nq, nd = len(uq), len(ud)
        pq.append(np.repeat(qi, nd))
        pd.append(np.tile(di, nq))
        slot.append(n_slots + np.repeat(np.arange(nq), nd))
        w.append(np.tile(cd / len(doc), nq))
        slot_inst.append(np.full(nq, k))
        slot_coef.append(cq / len(q))
        n_slots += nq
    pq, pd, slot, w = map(np.concatenate, (pq, pd, slot, w))
    slot_inst = np.concatenate(slot_inst)
    slot_coef = np.concatenate(slot_coef)

    xq_all, cache_q = _query_side(params, UQ)
    xd_all, cache_d = _doc_side(params, UD)
    raw, cache = _pairs_forward(params, xq_all[pq], xd_all[pd])
    if use_self_mix:
        same = UQ[pq] == UD[pd]
        t = mix_self_translation(raw, same, params.p_self)
    else:
        t = raw
    s = np.bincount(slot, weights=w * t, minlength=n_slots)
    ls = np.log(np.maximum(s, LOG_FLOOR))
    scores = np.bincount(slot_inst, weights=slot_coef * ls, minlength=len(inst_q))
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite score in forward pass")
    diff = scores[0::2] - scores[1::2]
    losses = margin - diff
    active = losses > 0
    loss = float(losses[active].sum())

    d_scores = np.zeros(len(inst_q))
    d_scores[0::2] = -active.astype(np.float64)
    d_scores[1::2] = active
    d_ls = d_scores[slot_inst] * slot_coef
    d_s = np.where(s > LOG_FLOOR, d_ls / np.where(s > 0, s, 1.0), 0.0)
    d_t = d_s[slot] * w
    d_raw = np.where(same, 0.0, (1.0 - params.p_self) * d_t) if use_self_mix else d_t

    grads, dxq, dxd = _pairs_backward(params, d_raw, cache)
    dxq_all = np.zeros_like(xq_all)
    dxd_all = np.zeros_like(xd_all)
    np.add.at(dxq_all, pq, dxq)
    np.add.at(dxd_all, pd, dxd)
    de_q, grads["pq_w"], grads["pq_b"] = _side_backward(dxq_all, params.pq_w, cache_q)
    de_d, grads["pd_w"], grads["pd_b"] = _side_backward(dxd_all, params.pd_w, cache_d)
    grads["embed_q"] = np.zeros_like(params.embed_q)
    grads["embed_q"][UQ] = de_q
    grads["embed_d"] = np.zeros_like(params.embed_d)
    grads["embed_d"][UD] = de_d
    return loss, {name: grads[name] for name in PARAM_ORDER}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: NeuralM1Params) -> "AdamState":
        t = params.tensors()
        return cls({k: np.zeros_like(a) for k, a in t.items()}, {k: np.zeros_like(a) for k, a in t.items()})


def adamw_step(params: NeuralM1Params, grads: dict[str, np.ndarray], state: AdamState, lr: float,
               weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """In-place AdamW update with decoupled weight decay and bias correction."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.tensors().items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        p *= 1.0 - lr * weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def lr_at_step(step: int, steps_per_epoch: int, epoch: int, config: TrainConfig) -> float:
    """Per-epoch decayed base rate with a linear warm-up over the first epoch."""
    if step < 0:
        raise ValueError("step must be >= 0")
    base = config.lr * config.lr_decay ** epoch
    warmup_steps = int(round(config.warmup * steps_per_epoch))
    if epoch == 0 and step < warmup_steps:
        return base * step / warmup_steps
    return base


def _qid_seed(qid: str) -> int:
    return zlib.crc32(qid.encode("utf-8"))


def negative_pools(qrels: Qrels, candidates: dict[str, list[str]], n_neg: int = 20,
                   pool_depth: int = 500, seed: int = 0) -> dict[str, list[str]]:
    """Fixed (epoch-independent) negatives per query, drawn from the top candidates."""
    pools = {}
    for qid in sorted(candidates):
        judged = qrels.get(qid, {})
        pool = [d for d in list(candidates[qid])[:pool_depth] if judged.get(d, 0) < 1]
        if len(pool) > n_neg:
            rng = np.random.default_rng([seed, _qid_seed(qid)])
            pick = np.sort(rng.choice(len(pool), size=n_neg, replace=False))
            pool = [pool[i] for i in pick]
        pools[qid] = pool
    return pools


def sample_pairs(qrels: Qrels, candidates: dict[str, list[str]], n_neg: int = 20, pool_depth: int = 500,
                 seed: int = 0, epoch: int = 0, pools: dict[str, list[str]] | None = None):
    """One (query, positive, negative) triple per usable query for this epoch.

    Returns the shuffled triples and the number of skipped queries.
    """
    if pools is None:
        pools = negative_pools(qrels, candidates, n_neg, pool_depth, seed)
    rng = np.random.default_rng([seed, epoch])
    triples, skipped = [], 0
    for qid in sorted(candidates):
        positives = sorted(d for d, g in qrels.get(qid, {}).items() if g >= 1)
        negatives = pools.get(qid, [])
        if not positives or not negatives:
            skipped += 1
            continue
        pos = positives[rng.integers(len(positives))]
        neg = negatives[rng.integers(len(negatives))]
        triples.append((qid, pos, neg))
    order = rng.permutation(len(triples))
    return [triples[i] for i in order], skipped


@dataclass
class TrainResult:
    params: NeuralM1Params
    epoch_losses: list[float] = field(default_factory=list)
    skipped_queries: int = 0


def train(queries: dict[str, np.ndarray], qrels: Qrels, candidates: dict[str, list[str]], docs,
          vocab_size: int, config: TrainConfig = TrainConfig(),
          params: NeuralM1Params | None = None) -> TrainResult:
    """Train with pairwise hinge loss and AdamW.

    ``docs`` maps doc id -> token array (a :class:`DocStore` works).  Judged
    positives missing from ``docs`` are ignored.
    """
    dtype = np.float32 if config.dtype == "float32" else np.float64
    if params is None:
        params = init_params(vocab_size, config.emb_dim, config.proj_dim, config.hidden_dim,
                             config.p_self, config.seed, dtype)
    result = TrainResult(params)
    if config.epochs == 0:
        return result
    usable_qrels = {q: {d: g for d, g in j.items() if d in docs} for q, j in qrels.items()}
    cands = {q: c for q, c in candidates.items() if q in queries and len(queries[q])}
    pools = negative_pools(usable_qrels, cands, config.n_neg, config.pool_depth, config.seed)
    state = AdamState.zeros_like(params)
    for epoch in range(config.epochs):
        triples, skipped = sample_pairs(usable_qrels, cands, config.n_neg, config.pool_depth,
                                        config.seed, epoch, pools)
        result.skipped_queries = skipped
        if not triples:
            raise DataError("no training pairs: every query lacks a positive or a negative")
        steps = math.ceil(len(triples) / config.batch_size)
        total = 0.0
        for step in range(steps):
            chunk = triples[step * config.batch_size:(step + 1) * config.batch_size]
            batch = [(queries[q], docs[p], docs[n]) for q, p, n in chunk]
            loss, grads = compute_gradients(params, batch, config.margin, config.use_self_mix)
            if not math.isfinite(loss):
                raise FloatingPointError("non-finite training loss")
            lr = lr_at_step(step, steps, epoch, config)
            adamw_step(params, grads, state, lr, config.weight_decay)
            total += loss
        result.epoch_losses.append(total / len(triples))
        log.info("epoch %d: mean loss %.5f (%d pairs, lr %.2e)", epoch, result.epoch_losses[-1],
                 len(triples), lr_at_step(steps - 1, steps, epoch, config))
    return result


# ---- persistence ----------------------------------------------------------------

_CKPT_MAGIC = b"M1NN"
_CKPT_HEAD = struct.Struct("<4sIQ")


def save_checkpoint(params: NeuralM1Params, path: str | Path, config: TrainConfig | None = None) -> None:
    """JSON header followed by little-endian float64 tensors in ``PARAM_ORDER``."""
    header = {
        "dims": params.dims,
        "p_self": params.p_self,
        "seed": config.seed if config else None,
        "config": asdict(config) if config else None,
        "tensors": [[name, list(getattr(params, name).shape)] for name in PARAM_ORDER],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_CKPT_HEAD.pack(_CKPT_MAGIC, 1, len(blob)))
        f.write(blob)
        for name in PARAM_ORDER:
            f.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[NeuralM1Params, dict]:
    raw = Path(path).read_bytes()
    magic, version, n = _CKPT_HEAD.unpack_from(raw)
    if magic != _CKPT_MAGIC or version != 1:
        raise DataError(f"{path}: not a neural Model 1 checkpoint")
    off = _CKPT_HEAD.size
    header = json.loads(raw[off:off + n])
    off += n
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        if off + 8 * count > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        tensors[name] = np.frombuffer(raw, "<f8", count, off).reshape(shape).astype(np.float64)
        off += 8 * count
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return NeuralM1Params(**tensors, p_self=header["p_self"]), header


def write_embedding_matrix(path: str | Path, matrix) -> None:
    """Binary matrix: int64 rows, int64 dim, then row-major little-endian float64."""
    m = np.atleast_2d(np.asarray(matrix, dtype="<f8"))
    with open(path, "wb") as f:
        f.write(struct.pack("<qq", *m.shape))
        f.write(m.tobytes())


def read_embedding_matrix(path: str | Path) -> np.ndarray:
    """Read a binary matrix, or a text file with one whitespace-separated vector per line."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) >= 16:
        rows, dim = struct.unpack_from("<qq", raw)
        if rows >= 0 and dim > 0 and len(raw) == 16 + 8 * rows * dim:
            return np.frombuffer(raw, "<f8", rows * dim, 16).reshape(rows, dim).astype(np.float64)
    try:
        lines = [ln.split() for ln in raw.decode("utf-8").splitlines() if ln.strip()]
        m = np.array([[float(x) for x in ln] for ln in lines])
    except (UnicodeDecodeError, ValueError):
        raise DataError(f"{path}: neither a binary nor a text embedding matrix") from None
    if m.ndim != 2:
        raise DataError(f"{path}: rows have different lengths")
    return m
