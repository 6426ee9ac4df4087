"""InfoNCE loss over cosine similarities, with analytic gradients.

Loss for one instance with positive similarity s+ and negative similarities
s_i-: ``-log( exp(s+/t) / (exp(s+/t) + sum_i exp(s_i-/t)) )`` where ``t`` is
the temperature. All loss math runs in double precision with log-sum-exp
stabilization: at t = 0.03 logits reach +-33, where naive single-precision
exponentiation overflows.

Gradients are taken with respect to the RAW (pre-normalization) vectors,
chaining through the L2 normalization inside the cosine, so a trainer can
chain them into whatever produced the vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, InvalidConfig, ZeroVector
from .matrix import ZERO_NORM_THRESHOLD, RecordId


@dataclass(frozen=True)
class LossConfig:
    """Temperature and negative count for the contrastive objective.

    Defaults follow the training recipe this engine implements: temperature
    0.03 and 8 negatives per query. ``in_batch_negatives`` additionally treats
    the other instances' positives in a batch as negatives; it is off by
    default because instances carry explicit negative sets.
    """

    temperature: float = 0.03
    negatives_per_query: int = 8
    in_batch_negatives: bool = False

    def __post_init__(self):
        if not (self.temperature > 0):
            raise InvalidConfig(f"temperature must be > 0, got {self.temperature}")
        if self.negatives_per_query < 1:
            raise InvalidConfig(f"negatives_per_query must be >= 1, got {self.negatives_per_query}")


@dataclass
class LossBatch:
    """One training instance: query, positive candidate, negative candidates.

    Record ids are optional for single-instance calls and required by
    ``batched_infonce``, which accumulates gradients per shared id.
    """

    query: np.ndarray
    positive: np.ndarray
    negatives: list[np.ndarray]
    query_id: RecordId | None = None
    positive_id: RecordId | None = None
    negative_ids: list[RecordId] | None = None


@dataclass
class LossOutput:
    loss: float
    grad_query: np.ndarray
    grad_positive: np.ndarray
    grad_negatives: list[np.ndarray] = field(default_factory=list)


def loss_from_similarities(pos_sim: float, neg_sims: np.ndarray, temperature: float) -> float:
    """Stabilized InfoNCE loss from precomputed similarities."""
    if not (temperature > 0):
        raise InvalidConfig(f"temperature must be > 0, got {temperature}")
    logits = np.concatenate(([pos_sim], np.asarray(neg_sims, dtype=np.float64))) / temperature
    m = np.max(logits)
    lse = m + np.log(np.sum(np.exp(logits - m)))
    return float(lse - logits[0])


def _checked_vectors(batch: LossBatch, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q = np.asarray(batch.query, dtype=np.float64)
    c = np.asarray(batch.positive, dtype=np.float64)
    if len(batch.negatives) != cfg.negatives_per_query:
        raise InvalidConfig(
            f"batch has {len(batch.negatives)} negatives, config expects {cfg.negatives_per_query}"
        )
    negs = np.asarray(batch.negatives, dtype=np.float64)
    if q.ndim != 1 or c.shape != q.shape or negs.shape[1:] != q.shape:
        raise DimensionMismatch("query, positive, and negatives must share one dimension")
    for name, arr in (("query", q[None, :]), ("positive", c[None, :]), ("negatives", negs)):
        norms = np.linalg.norm(arr, axis=1)
        if not np.all(np.isfinite(arr)) or np.any(norms <= ZERO_NORM_THRESHOLD):
            raise ZeroVector(f"{name} contains a zero or non-finite vector")
    return q, c, negs


def infonce_forward(batch: LossBatch, cfg: LossConfig) -> float:
    """Loss of one instance."""
    q, c, negs = _checked_vectors(batch, cfg)
    qn = q / np.linalg.norm(q)
    pos_sim = float(qn @ (c / np.linalg.norm(c)))
    neg_sims = (negs / np.linalg.norm(negs, axis=1)[:, None]) @ qn
    return loss_from_similarities(pos_sim, neg_sims, cfg.temperature)


def _cosine_grad(a: np.ndarray, b_hat: np.ndarray, cos_ab: float) -> np.ndarray:
    # d cos(a, b) / d a = (b_hat - cos(a,b) * a_hat) / ||a||
    norm_a = np.linalg.norm(a)
    return (b_hat - cos_ab * (a / norm_a)) / norm_a


def infonce_backward(batch: LossBatch, cfg: LossConfig) -> LossOutput:
    """Loss plus gradients with respect to the raw input vectors."""
    q, c, negs = _checked_vectors(batch, cfg)
    tau = cfg.temperature

    qn = q / np.linalg.norm(q)
    cn = c / np.linalg.norm(c)
    negs_n = negs / np.linalg.norm(negs, axis=1)[:, None]

    pos_sim = float(qn @ cn)
    neg_sims = negs_n @ qn

    logits = np.concatenate(([pos_sim], neg_sims)) / tau
    m = np.max(logits)
    exps = np.exp(logits - m)
    probs = exps / np.sum(exps)
    loss = float(np.log(np.sum(exps)) + m - logits[0])

    # d loss / d similarity: (p0 - 1)/tau for the positive, p_i/tau for negatives.
    dpos = (probs[0] - 1.0) / tau
    dnegs = probs[1:] / tau

    grad_query = dpos * _cosine_grad(q, cn, pos_sim)
    for i in range(len(negs)):
        grad_query += dnegs[i] * _cosine_grad(q, negs_n[i], float(neg_sims[i]))
    grad_positive = dpos * _cosine_grad(c, qn, pos_sim)
    grad_negatives = [
        dnegs[i] * _cosine_grad(negs[i], qn, float(neg_sims[i])) for i in range(len(negs))
    ]
    return LossOutput(loss, grad_query, grad_positive, grad_negatives)


def batched_infonce(instances: list[LossBatch], cfg: LossConfig) -> tuple[float, dict[RecordId, np.ndarray]]:
    """Mean loss over a mini-batch plus gradients accumulated per record id.

    Per-vector gradients are summed across instances sharing an id, then
    divided by the batch size; instances are reduced in list order so the
    result is bit-reproducible.
    """
    if not instances:
        raise EmptyBatch("batched_infonce needs at least one instance")
    total = 0.0
    grads: dict[RecordId, np.ndarray] = {}

    def _accumulate(rid: RecordId | None, grad: np.ndarray, role: str):
        if rid is None:
            raise InvalidConfig(f"batched_infonce requires a {role} id on every instance")
        if rid in grads:
            grads[rid] += grad
        else:
            grads[rid] = grad.copy()

    for inst in instances:
        effective = inst
        if cfg.in_batch_negatives and len(instances) > 1:
            extra = [o.positive for o in instances if o is not inst]
            extra_ids = [o.positive_id for o in instances if o is not inst]
            effective = LossBatch(
                query=inst.query,
                positive=inst.positive,
                negatives=list(inst.negatives) + extra,
                query_id=inst.query_id,
                positive_id=inst.positive_id,
                negative_ids=list(inst.negative_ids or []) + extra_ids,
            )
            eff_cfg = LossConfig(
                temperature=cfg.temperature,
                negatives_per_query=len(effective.negatives),
            )
        else:
            eff_cfg = cfg
        out = infonce_backward(effective, eff_cfg)
        total += out.loss
        _accumulate(effective.query_id, out.grad_query, "query")
        _accumulate(effective.positive_id, out.grad_positive, "positive")
        neg_ids = effective.negative_ids
        if neg_ids is None or len(neg_ids) != len(out.grad_negatives):
            raise InvalidConfig("batched_infonce requires one id per negative")
        for rid, grad in zip(neg_ids, out.grad_negatives):
            _accumulate(rid, grad, "negative")

    n = len(instances)
    for rid in grads:
        grads[rid] /= n
    return total / n, grads
