"""Desk-scale trainable encoder exercising the full contrastive recipe.

The encoder is a hashed-feature linear projection, not a transformer: token
features are hashed one-hots, pooled (mean or last-token), projected through a
trainable matrix, and L2-normalized. That preserves every mechanism under
test (pooling mode, query-side instruction conditioning, the contrastive
objective, two-stage hard negatives, data-composition mixing) while keeping
gradients hand-derivable and runs in seconds.

Synthetic "modalities" are disjoint vocabulary ranges; cross-modal retrieval
is exactly cross-vocabulary retrieval, and fused items draw from two ranges.
Items of the same cluster are mutually relevant across modalities, so an
untrained projection scores near chance on cross-vocabulary tasks.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DivergenceDetected, InvalidConfig, InvalidSpec, ZeroVector
from .infonce import LossBatch, LossConfig, batched_infonce
from .matrix import ZERO_NORM_THRESHOLD, EmbeddingMatrix
from .metrics import MetricKind, MetricSpec, evaluate_dataset
from .mining import MinedInstance, MiningConfig, mine
from .search import topk

POOLING_MODES = ("mean", "last_token")
INSTRUCTION_MODES = ("query_only", "none")

# The five training-source task types and the category each belongs to.
TASK_SIDES: dict[str, tuple[str, str]] = {
    "T->T": ("text", "text"),
    "I->I": ("image", "image"),
    "T->I": ("text", "image"),
    "T->VD": ("text", "vdoc"),
    "IT->IT": ("fused", "fused"),
}
TASK_CATEGORY: dict[str, str] = {
    "T->T": "single-modal",
    "I->I": "single-modal",
    "T->I": "cross-modal",
    "T->VD": "cross-modal",
    "IT->IT": "fused-modal",
}
CATEGORIES = ("single-modal", "cross-modal", "fused-modal")
MODALITY_KINDS = ("text", "image", "vdoc", "fused")


@dataclass
class ToyItem:
    item_id: str
    tokens: list[int]
    modality: str
    cluster: int
    instruction_tokens: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.tokens:
            raise InvalidSpec(f"item {self.item_id!r} has an empty token sequence")


@dataclass
class ToyEncoderParams:
    """Trainable projection plus the feature configuration around it."""

    projection: np.ndarray  # feature_dim x embed_dim, float64
    pooling: str = "mean"
    instruction_mode: str = "query_only"
    hash_seed: int = 0

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=np.float64)
        if self.projection.ndim != 2:
            raise InvalidConfig("projection must be a 2-d matrix")
        if not np.all(np.isfinite(self.projection)):
            raise InvalidConfig("projection entries must be finite")
        if self.pooling not in POOLING_MODES:
            raise InvalidConfig(f"pooling must be one of {POOLING_MODES}")
        if self.instruction_mode not in INSTRUCTION_MODES:
            raise InvalidConfig(f"instruction_mode must be one of {INSTRUCTION_MODES}")

    @property
    def feature_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[1]

    def copy(self) -> "ToyEncoderParams":
        return replace(self, projection=self.projection.copy())


def init_params(
    feature_dim: int = 256,
    embed_dim: int = 16,
    *,
    pooling: str = "mean",
    instruction_mode: str = "query_only",
    hash_seed: int = 0,
    seed: int = 0,
) -> ToyEncoderParams:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x70F0])))
    projection = rng.normal(0.0, 1.0, size=(feature_dim, embed_dim))
    return ToyEncoderParams(
        projection=projection,
        pooling=pooling,
        instruction_mode=instruction_mode,
        hash_seed=hash_seed,
    )


def _token_slot(token: int, feature_dim: int, hash_seed: int) -> tuple[int, float]:
    digest = zlib.crc32(f"{hash_seed}:{token}".encode("ascii"))
    return digest % feature_dim, 1.0 if (digest >> 17) & 1 else -1.0


def pooled_features(
    tokens: Sequence[int], pooling: str, feature_dim: int, hash_seed: int
) -> np.ndarray:
    """Hashed token features pooled to one vector."""
    if not tokens:
        raise InvalidSpec("cannot pool an empty token sequence")
    x = np.zeros(feature_dim, dtype=np.float64)
    if pooling == "last_token":
        slot, sign = _token_slot(tokens[-1], feature_dim, hash_seed)
        x[slot] = sign
        return x
    for t in tokens:
        slot, sign = _token_slot(t, feature_dim, hash_seed)
        x[slot] += sign
    x /= len(tokens)
    return x


def item_features(params: ToyEncoderParams, item: ToyItem, is_query: bool) -> np.ndarray:
    tokens = item.tokens
    if is_query and params.instruction_mode == "query_only" and item.instruction_tokens:
        tokens = list(item.instruction_tokens) + list(tokens)
    return pooled_features(tokens, params.pooling, params.feature_dim, params.hash_seed)


def encode(params: ToyEncoderParams, item: ToyItem, is_query: bool = False) -> np.ndarray:
    """Unit-norm embedding of one item. Candidate encodings never see instructions."""
    x = item_features(params, item, is_query)
    v = x @ params.projection
    norm = np.linalg.norm(v)
    if norm <= ZERO_NORM_THRESHOLD:
        raise ZeroVector(
            f"item {item.item_id!r}: pooled features annihilate the projection"
        )
    return v / norm


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of the synthetic multimodal-analog corpus.

    With 5 items per cluster a query has at most 5 relevant candidates, so
    Recall@5 spans the full [0, 1] range instead of saturating at k/cluster.
    """

    clusters: int = 32
    items_per_cluster: int = 5
    tokens_per_item: int = 12
    cluster_vocab: int = 8  # cluster-specific tokens per modality
    noise_rate: float = 0.05
    eval_fraction: float = 0.4
    seed: int = 7

    def __post_init__(self):
        if self.clusters < 2:
            raise InvalidSpec("need at least 2 clusters")
        if self.items_per_cluster < 2:
            raise InvalidSpec("need at least 2 items per cluster")
        if self.tokens_per_item < 2:
            raise InvalidSpec("need at least 2 tokens per item")
        if not (0.0 <= self.noise_rate < 1.0):
            raise InvalidSpec("noise_rate must be in [0, 1)")
        if not (0.0 < self.eval_fraction < 1.0):
            raise InvalidSpec("eval_fraction must be in (0, 1)")

    @property
    def modality_vocab(self) -> int:
        return self.clusters * self.cluster_vocab


@dataclass
class ToyTask:
    tag: str
    category: str
    train_queries: list[str]
    eval_queries: list[str]
    candidates: list[str]
    qrels: dict[str, dict[str, int]]  # self-matches excluded
    instruction_tokens: list[int]


@dataclass
class ToyCorpus:
    spec: SyntheticSpec
    items: dict[str, ToyItem]
    tasks: dict[str, ToyTask]

    def item(self, item_id: str) -> ToyItem:
        return self.items[item_id]


def _modality_base(spec: SyntheticSpec, modality: str) -> int:
    order = ("text", "image", "vdoc")
    return order.index(modality) * spec.modality_vocab


def _cluster_tokens(
    rng: np.random.Generator, spec: SyntheticSpec, modality: str, cluster: int, n: int
) -> list[int]:
    base = _modality_base(spec, modality) + cluster * spec.cluster_vocab
    tokens = base + rng.integers(0, spec.cluster_vocab, size=n)
    if spec.noise_rate > 0:
        noisy = rng.random(n) < spec.noise_rate
        if noisy.any():
            lo = _modality_base(spec, modality)
            tokens[noisy] = lo + rng.integers(0, spec.modality_vocab, size=int(noisy.sum()))
    return [int(t) for t in tokens]


def _make_item_tokens(
    rng: np.random.Generator, spec: SyntheticSpec, kind: str, cluster: int
) -> list[int]:
    n = spec.tokens_per_item
    if kind == "fused":
        half = n // 2
        return _cluster_tokens(rng, spec, "text", cluster, half) + _cluster_tokens(
            rng, spec, "image", cluster, n - half
        )
    return _cluster_tokens(rng, spec, kind, cluster, n)


def task_instruction_tokens(spec: SyntheticSpec, tag: str) -> list[int]:
    base = 3 * spec.modality_vocab
    idx = sorted(TASK_SIDES).index(tag)
    return [base + 2 * idx, base + 2 * idx + 1]


def generate_synthetic(spec: SyntheticSpec) -> ToyCorpus:
    """Deterministic corpus + per-task splits and judgments."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed])))
    items: dict[str, ToyItem] = {}
    by_kind_cluster: dict[tuple[str, int], list[str]] = {}
    for kind in MODALITY_KINDS:
        for cluster in range(spec.clusters):
            ids = []
            for i in range(spec.items_per_cluster):
                item_id = f"{kind}-{cluster:03d}-{i:03d}"
                items[item_id] = ToyItem(
                    item_id=item_id,
                    tokens=_make_item_tokens(rng, spec, kind, cluster),
                    modality=kind,
                    cluster=cluster,
                )
                ids.append(item_id)
            by_kind_cluster[(kind, cluster)] = ids

    n_eval = max(1, round(spec.items_per_cluster * spec.eval_fraction))
    tasks: dict[str, ToyTask] = {}
    for tag, (qkind, ckind) in TASK_SIDES.items():
        train_queries: list[str] = []
        eval_queries: list[str] = []
        candidates: list[str] = []
        qrels: dict[str, dict[str, int]] = {}
        for cluster in range(spec.clusters):
            candidates.extend(by_kind_cluster[(ckind, cluster)])
        for cluster in range(spec.clusters):
            pool = by_kind_cluster[(qkind, cluster)]
            train_queries.extend(pool[:-n_eval])
            eval_queries.extend(pool[-n_eval:])
            relevant = by_kind_cluster[(ckind, cluster)]
            for qid in pool:
                qrels[qid] = {cid: 1 for cid in relevant if cid != qid}
        tasks[tag] = ToyTask(
            tag=tag,
            category=TASK_CATEGORY[tag],
            train_queries=train_queries,
            eval_queries=eval_queries,
            candidates=candidates,
            qrels=qrels,
            instruction_tokens=task_instruction_tokens(spec, tag),
        )
    return ToyCorpus(spec=spec, items=items, tasks=tasks)


def nearest_centroid_accuracy(
    corpus: ToyCorpus, kind: str, feature_dim: int = 256, hash_seed: int = 0
) -> float:
    """Cluster recoverability of raw (pre-projection) features for one modality."""
    members = [it for it in corpus.items.values() if it.modality == kind]
    feats = np.stack(
        [pooled_features(it.tokens, "mean", feature_dim, hash_seed) for it in members]
    )
    labels = np.array([it.cluster for it in members])
    centroids = np.stack(
        [feats[labels == c].mean(axis=0) for c in range(corpus.spec.clusters)]
    )
    dists = ((feats[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    predicted = dists.argmin(axis=1)
    return float((predicted == labels).mean())


# --- feature caching -------------------------------------------------------


class _FeatureCache:
    """Pooled features per item, computed once per run; the projection is the
    only thing that changes during training."""

    def __init__(self, corpus: ToyCorpus, params: ToyEncoderParams):
        self.corpus = corpus
        self.params = params
        self._candidate: dict[str, np.ndarray] = {}
        self._query: dict[tuple[str, str], np.ndarray] = {}

    def candidate(self, item_id: str) -> np.ndarray:
        x = self._candidate.get(item_id)
        if x is None:
            x = item_features(self.params, self.corpus.item(item_id), is_query=False)
            self._candidate[item_id] = x
        return x

    def query(self, task_tag: str, item_id: str) -> np.ndarray:
        key = (task_tag, item_id)
        x = self._query.get(key)
        if x is None:
            item = self.corpus.item(item_id)
            view = replace(
                item, instruction_tokens=self.corpus.tasks[task_tag].instruction_tokens
            )
            x = item_features(self.params, view, is_query=True)
            self._query[key] = x
        return x


def _embed_rows(features: np.ndarray, projection: np.ndarray) -> np.ndarray:
    v = features @ projection
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms <= ZERO_NORM_THRESHOLD):
        bad = int(np.argmax(norms <= ZERO_NORM_THRESHOLD))
        raise ZeroVector(f"row {bad}: pooled features annihilate the projection")
    return (v / norms[:, None]).astype(np.float32)


def encode_matrix(
    corpus: ToyCorpus,
    params: ToyEncoderParams,
    item_ids: Sequence[str],
    *,
    task_tag: str | None = None,
    is_query: bool = False,
    cache: _FeatureCache | None = None,
) -> EmbeddingMatrix:
    cache = cache or _FeatureCache(corpus, params)
    if is_query:
        if task_tag is None:
            raise InvalidConfig("query encoding needs the task tag for its instruction")
        feats = np.stack([cache.query(task_tag, i) for i in item_ids])
    else:
        feats = np.stack([cache.candidate(i) for i in item_ids])
    return EmbeddingMatrix(_embed_rows(feats, params.projection), list(item_ids), normalized=True)


# --- training --------------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 400
    batch_size: int = 16
    learning_rate: float = 4.0
    seed: int = 7

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise InvalidConfig("steps must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise InvalidConfig("learning_rate must be >= 0")


@dataclass
class TrainRun:
    stage: str
    settings: TrainSettings
    loss_trace: list[float]
    params: ToyEncoderParams


HardNegativeMap = dict[tuple[str, str], list[str]]  # (task tag, query id) -> negatives


def train(
    corpus: ToyCorpus,
    source_tags: Sequence[str],
    settings: TrainSettings,
    loss_cfg: LossConfig = LossConfig(),
    *,
    params: ToyEncoderParams | None = None,
    hard_negatives: HardNegativeMap | None = None,
    rng: np.random.Generator | None = None,
    stage: str = "random_neg",
) -> TrainRun:
    """Plain SGD on the contrastive loss, gradients chained through the encoder.

    Each step draws ``batch_size`` instances: a source task, a training query,
    one relevant candidate, and K negatives (uniform non-relevant, or the
    query's mined hard negatives when ``hard_negatives`` is given). The whole
    loop is single-threaded and reproducible from the seed.
    """
    for tag in source_tags:
        if tag not in corpus.tasks:
            raise InvalidConfig(f"unknown source task {tag!r}")
    if params is None:
        params = init_params(seed=settings.seed)
    else:
        params = params.copy()
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([settings.seed, 0x5EED])))
    cache = _FeatureCache(corpus, params)
    k = loss_cfg.negatives_per_query

    candidates_by_task = {tag: corpus.tasks[tag].candidates for tag in source_tags}
    relevant_by_task = {
        tag: {q: sorted(corpus.tasks[tag].qrels[q]) for q in corpus.tasks[tag].train_queries}
        for tag in source_tags
    }
    for tag in source_tags:
        pool_size = len(candidates_by_task[tag])
        worst = max(len(r) for r in relevant_by_task[tag].values())
        if pool_size - worst - 1 < k:
            raise InvalidConfig(
                f"task {tag!r}: pool of {pool_size} cannot supply {k} non-relevant negatives"
            )

    loss_trace: list[float] = []
    w = params.projection
    for _step in range(settings.steps):
        instances: list[LossBatch] = []
        feats: dict[str, np.ndarray] = {}
        for _b in range(settings.batch_size):
            tag = source_tags[int(rng.integers(len(source_tags)))]
            task = corpus.tasks[tag]
            qid = task.train_queries[int(rng.integers(len(task.train_queries)))]
            relevant = relevant_by_task[tag][qid]
            pos = relevant[int(rng.integers(len(relevant)))]
            if hard_negatives is not None:
                negs = list(hard_negatives.get((tag, qid), ()))[:k]
            else:
                negs = []
            guard = set(relevant) | {qid, pos} | set(negs)
            pool = candidates_by_task[tag]
            while len(negs) < k:
                cid = pool[int(rng.integers(len(pool)))]
                if cid not in guard:
                    negs.append(cid)
                    guard.add(cid)

            qkey, pkey = f"q/{tag}/{qid}", f"c/{pos}"
            nkeys = [f"c/{n}" for n in negs]
            if qkey not in feats:
                feats[qkey] = cache.query(tag, qid)
            if pkey not in feats:
                feats[pkey] = cache.candidate(pos)
            for nk, n in zip(nkeys, negs):
                if nk not in feats:
                    feats[nk] = cache.candidate(n)
            instances.append(
                LossBatch(
                    query=feats[qkey] @ w,
                    positive=feats[pkey] @ w,
                    negatives=[feats[nk] @ w for nk in nkeys],
                    query_id=qkey,
                    positive_id=pkey,
                    negative_ids=nkeys,
                )
            )
        loss, grads = batched_infonce(instances, loss_cfg)
        if not np.isfinite(loss):
            raise DivergenceDetected(f"loss became {loss} at step {_step}")
        loss_trace.append(loss)
        if settings.learning_rate:
            grad_w = np.zeros_like(w)
            for key, g in grads.items():
                grad_w += np.outer(feats[key], g)
            w = w - settings.learning_rate * grad_w
            if not np.all(np.isfinite(w)):
                raise DivergenceDetected(f"projection became non-finite at step {_step}")
            params = replace(params, projection=w)
            cache.params = params
    return TrainRun(stage=stage, settings=settings, loss_trace=loss_trace, params=params)


def evaluate_tasks(
    corpus: ToyCorpus,
    params: ToyEncoderParams,
    task_tags: Sequence[str],
    *,
    cutoff: int = 5,
    split: str = "eval",
) -> dict[str, float]:
    """Recall@cutoff per task over the requested query split, self-matches excluded."""
    spec = MetricSpec(MetricKind.RECALL, cutoff)
    scores: dict[str, float] = {}
    cache = _FeatureCache(corpus, params)
    for tag in task_tags:
        task = corpus.tasks[tag]
        qids = task.eval_queries if split == "eval" else task.train_queries
        queries = encode_matrix(corpus, params, qids, task_tag=tag, is_query=True, cache=cache)
        pool = encode_matrix(corpus, params, task.candidates, cache=cache)
        pool_ids = set(task.candidates)
        exclude = {qid: {qid} for qid in qids if qid in pool_ids}
        results = topk(queries, pool, cutoff, exclude=exclude)
        scores[tag] = evaluate_dataset(results, task.qrels, spec)
    return scores


# --- two-stage pipeline ----------------------------------------------------


@dataclass
class TwoStageResult:
    stage1: TrainRun
    mined: dict[str, list[MinedInstance]]
    stage2: TrainRun
    eval_table: dict[str, dict[str, float]]  # stage -> task tag -> recall


def _mining_qrels(task: ToyTask) -> dict[str, dict[str, int]]:
    # A query living in its own candidate pool is trivially relevant to
    # itself; mark it so mining never emits the query as its own negative.
    pool = set(task.candidates)
    out: dict[str, dict[str, int]] = {}
    for qid in task.train_queries:
        judged = dict(task.qrels[qid])
        if qid in pool:
            judged[qid] = 1
        out[qid] = judged
    return out


def mine_task_negatives(
    corpus: ToyCorpus,
    params: ToyEncoderParams,
    task_tags: Sequence[str],
    mining_cfg: MiningConfig,
) -> dict[str, list[MinedInstance]]:
    mined: dict[str, list[MinedInstance]] = {}
    cache = _FeatureCache(corpus, params)
    for tag in task_tags:
        task = corpus.tasks[tag]
        queries = encode_matrix(
            corpus, params, task.train_queries, task_tag=tag, is_query=True, cache=cache
        )
        pool = encode_matrix(corpus, params, task.candidates, cache=cache)
        mined[tag] = mine(queries, pool, _mining_qrels(task), mining_cfg)
    return mined


def two_stage(
    corpus: ToyCorpus,
    source_tags: Sequence[str],
    stage1_settings: TrainSettings,
    stage2_settings: TrainSettings,
    loss_cfg: LossConfig = LossConfig(),
    *,
    mining_cfg: MiningConfig | None = None,
    use_hard_negatives: bool = True,
    eval_cutoff: int = 5,
    params: ToyEncoderParams | None = None,
) -> TwoStageResult:
    """Random-negative training, hard-negative mining, continued training.

    With ``use_hard_negatives=False`` stage 2 keeps sampling random negatives
    from the same RNG stream, which makes the pipeline equal to one longer
    stage-1 run with the same seed.
    """
    mining_cfg = mining_cfg or MiningConfig(
        retrieve_k=min(100, len(corpus.tasks[source_tags[0]].candidates)),
        negatives_out=loss_cfg.negatives_per_query,
        seed=stage1_settings.seed,
    )
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([stage1_settings.seed, 0x5EED]))
    )
    if params is None:
        params = init_params(seed=stage1_settings.seed)
    untrained = params.copy()

    stage1 = train(
        corpus, source_tags, stage1_settings, loss_cfg, params=params, rng=rng, stage="random_neg"
    )
    if use_hard_negatives:
        mined = mine_task_negatives(corpus, stage1.params, source_tags, mining_cfg)
        hard_map: HardNegativeMap | None = {
            (tag, inst.query_id): list(inst.hard_negative_ids)
            for tag, instances in mined.items()
            for inst in instances
        }
    else:
        mined = {}
        hard_map = None
    stage2 = train(
        corpus,
        source_tags,
        stage2_settings,
        loss_cfg,
        params=stage1.params,
        hard_negatives=hard_map,
        rng=rng,
        stage="hard_neg",
    )

    eval_table = {
        "untrained": evaluate_tasks(corpus, untrained, source_tags, cutoff=eval_cutoff),
        "stage1": evaluate_tasks(corpus, stage1.params, source_tags, cutoff=eval_cutoff),
        "stage2": evaluate_tasks(corpus, stage2.params, source_tags, cutoff=eval_cutoff),
    }
    return TwoStageResult(stage1=stage1, mined=mined, stage2=stage2, eval_table=eval_table)


# --- data-composition study ------------------------------------------------


@dataclass
class MixStudyResult:
    per_task: dict[str, dict[str, float]]  # model -> task -> recall
    per_category: dict[str, dict[str, float]]  # model -> category -> mean recall
    macro_mean: dict[str, float]  # model -> mean over categories

    @property
    def models(self) -> list[str]:
        return list(self.per_task)


def mix_study(
    corpus: ToyCorpus,
    settings: TrainSettings,
    loss_cfg: LossConfig = LossConfig(),
    *,
    eval_cutoff: int = 5,
) -> MixStudyResult:
    """Train five single-source models plus one uniform mix; evaluate all six.

    Every model starts from the same seeded initialization and trains for the
    same number of steps, differing only in which task(s) feed its batches.
    """
    tags = sorted(TASK_SIDES)
    runs: dict[str, Sequence[str]] = {tag: [tag] for tag in tags}
    runs["mix"] = tags

    per_task: dict[str, dict[str, float]] = {}
    per_category: dict[str, dict[str, float]] = {}
    macro: dict[str, float] = {}
    for model, sources in runs.items():
        init = init_params(seed=settings.seed)
        run = train(corpus, sources, settings, loss_cfg, params=init, stage=f"mix:{model}")
        task_scores = evaluate_tasks(corpus, run.params, tags, cutoff=eval_cutoff)
        cat_scores: dict[str, list[float]] = {}
        for tag, score in task_scores.items():
            cat_scores.setdefault(TASK_CATEGORY[tag], []).append(score)
        cats = {cat: sum(v) / len(v) for cat, v in cat_scores.items()}
        per_task[model] = task_scores
        per_category[model] = cats
        macro[model] = sum(cats.values()) / len(cats)
    return MixStudyResult(per_task=per_task, per_category=per_category, macro_mean=macro)
