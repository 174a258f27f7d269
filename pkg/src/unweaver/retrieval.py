"""Query-time retrieval: class filtering and multi-winner chunk elections.

A query selects its top-k0 most similar entity classes; those classes become
voters whose ballots are the chunks they occur in. A multi-winner approval
rule (AV, PAV or Chamberlin-Courant, greedy or exact) then elects r chunks.
All ties break toward the lower id so results are reproducible.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .embedding import embed
from .errors import DimensionMismatch
from .gateway import ModelGateway
from .index import IncidenceMatrix, Index

log = logging.getLogger("unweaver.retrieval")

METRICS = ("cosine", "euclidean")
RULES = ("av", "pav_greedy", "cc_greedy", "exact_pav", "exact_cc")
EXACT_MAX_CHUNKS = 20


@dataclass(frozen=True)
class SimilarityConfig:
    metric: str = "cosine"
    k0: int = 10

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")


@dataclass(frozen=True)
class ElectionConfig:
    rule: str = "av"
    r: int = 5

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        if self.r < 1:
            raise ValueError("r must be >= 1")


@dataclass
class RetrievalResult:
    selected_classes: list[tuple[int, float]]
    filtered_ballots: np.ndarray  # (n_selected, n_chunks)
    elected_chunks: list[int]
    rule_scores: dict[int, float]
    status: str = "ok"  # ok | empty
    padded: bool = False
    fallback: bool = False


def _unit_columns(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    return matrix / safe


def top_k_classes(
    V: np.ndarray,
    q: np.ndarray,
    cfg: SimilarityConfig,
) -> list[tuple[int, float]]:
    """Rank classes against the query, best first.

    Cosine scores are unit-normalized dot products (higher is better);
    euclidean scores are distances (lower is better). Exactly
    min(k0, n_classes) pairs are returned; equal scores order by class_id.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (V.shape[0],):
        raise DimensionMismatch(
            f"query has dimension {q.shape}, embeddings have {V.shape[0]} rows"
        )
    n_classes = V.shape[1]
    k = min(cfg.k0, n_classes)
    if cfg.k0 > n_classes:
        log.warning("k0=%d exceeds class count %d; clamped", cfg.k0, n_classes)
    if cfg.metric == "cosine":
        q_norm = np.linalg.norm(q)
        q_unit = q / q_norm if q_norm > 0.0 else q
        scores = _unit_columns(V).T @ q_unit
        order = sorted(range(n_classes), key=lambda s: (-scores[s], s))
    else:
        scores = np.linalg.norm(V - q[:, None], axis=0)
        order = sorted(range(n_classes), key=lambda s: (scores[s], s))
    return [(s, float(scores[s])) for s in order[:k]]


def filter_ballots(incidence: IncidenceMatrix, selected: set[int]) -> np.ndarray:
    """Ballot matrix of the surviving classes: row i = chunks of class i.

    Rows follow ascending class_id of the survivors.
    """
    survivors = sorted(selected)
    if survivors and not (0 <= survivors[0] and survivors[-1] < incidence.n_classes):
        raise ValueError("selected class ids out of range")
    if not survivors:
        return np.zeros((0, incidence.n_chunks), dtype=np.float64)
    return incidence.matrix[:, survivors].T.copy()


def _harmonic(n: int) -> float:
    return sum(1.0 / i for i in range(1, n + 1))


def _pav_score(ballots: np.ndarray, committee: tuple[int, ...]) -> float:
    hits = ballots[:, list(committee)].sum(axis=1) if committee else np.zeros(ballots.shape[0])
    return float(sum(_harmonic(int(h)) for h in hits))


def _cc_score(ballots: np.ndarray, committee: tuple[int, ...]) -> float:
    if not committee:
        return 0.0
    return float(np.count_nonzero(ballots[:, list(committee)].sum(axis=1) >= 1))


def _greedy_order(
    ballots: np.ndarray,
    candidates: list[int],
    r: int,
    rule: str,
) -> tuple[list[int], dict[int, float]]:
    """Pick r candidates by marginal gain (PAV harmonic or CC coverage)."""
    committee: list[int] = []
    gains: dict[int, float] = {}
    hits = np.zeros(ballots.shape[0], dtype=np.int64)
    remaining = list(candidates)
    while remaining and len(committee) < r:
        best_id, best_gain = -1, -np.inf
        for chunk in remaining:
            approving = ballots[:, chunk] > 0.0
            if rule == "pav":
                gain = float((1.0 / (hits[approving] + 1.0)).sum())
            else:
                gain = float(np.count_nonzero(approving & (hits == 0)))
            if gain > best_gain or (gain == best_gain and chunk < best_id):
                best_id, best_gain = chunk, gain
        committee.append(best_id)
        gains[best_id] = best_gain
        hits += (ballots[:, best_id] > 0.0).astype(np.int64)
        remaining.remove(best_id)
    return committee, gains


def _exact_committee(
    ballots: np.ndarray,
    candidates: list[int],
    r: int,
    rule: str,
) -> tuple[int, ...]:
    score = _pav_score if rule == "pav" else _cc_score
    best: tuple[int, ...] | None = None
    best_score = -np.inf
    for committee in itertools.combinations(sorted(candidates), r):
        value = score(ballots, committee)
        if value > best_score:  # first maximum = lexicographically smallest
            best, best_score = committee, value
    assert best is not None
    return best


def committee_score(ballots: np.ndarray, committee: list[int], rule: str) -> float:
    """Total committee score under a rule family (av, pav, cc)."""
    members = tuple(committee)
    if rule == "av":
        return float(ballots[:, list(members)].sum()) if members else 0.0
    if rule == "pav":
        return _pav_score(ballots, members)
    return _cc_score(ballots, members)


def _election(
    ballots: np.ndarray,
    cfg: ElectionConfig,
) -> tuple[list[int], dict[int, float], bool]:
    n_chunks = ballots.shape[1]
    r = cfg.r
    if r > n_chunks:
        log.warning("r=%d exceeds candidate count %d; clamped", r, n_chunks)
        r = n_chunks
    if cfg.rule.startswith("exact_") and n_chunks > EXACT_MAX_CHUNKS:
        raise ValueError(
            f"exact rules permit at most {EXACT_MAX_CHUNKS} chunks, got {n_chunks}"
        )

    approvals = ballots.sum(axis=0)
    pool = [k for k in range(n_chunks) if approvals[k] > 0.0]
    quota = min(r, len(pool))

    if cfg.rule == "av":
        ranked = sorted(pool, key=lambda k: (-approvals[k], k))
        elected = ranked[:quota]
        scores = {k: float(approvals[k]) for k in elected}
    elif cfg.rule in ("pav_greedy", "cc_greedy"):
        family = "pav" if cfg.rule == "pav_greedy" else "cc"
        elected, scores = _greedy_order(ballots, pool, quota, family)
    else:
        family = "pav" if cfg.rule == "exact_pav" else "cc"
        committee = _exact_committee(ballots, pool, quota, family) if quota else ()
        # report members in greedy-pick order for a stable, score-led output
        elected, scores = _greedy_order(ballots, list(committee), quota, family)

    padded = False
    if len(elected) < r:
        padded = True
        spare = [k for k in range(n_chunks) if k not in set(elected)]
        for k in spare[: r - len(elected)]:
            elected.append(k)
            scores[k] = 0.0
    return elected, scores, padded


def elect_chunks(ballots: np.ndarray, cfg: ElectionConfig) -> list[int]:
    """Elect r chunks from approval ballots; see ElectionConfig for rules.

    Chunks with no approvals are elected only as padding when fewer than r
    chunks are approved.
    """
    elected, _, _ = _election(np.asarray(ballots, dtype=np.float64), cfg)
    return elected


def retrieve(
    index: Index,
    query_text: str,
    sim_cfg: SimilarityConfig | None = None,
    elect_cfg: ElectionConfig | None = None,
    gateway: ModelGateway | None = None,
) -> RetrievalResult:
    """Embed the query, filter classes, and elect context chunks."""
    sim_cfg = sim_cfg or SimilarityConfig()
    elect_cfg = elect_cfg or ElectionConfig()
    if index.n_classes == 0:
        log.warning("index has no classes; returning empty result")
        return RetrievalResult(
            selected_classes=[],
            filtered_ballots=np.zeros((0, index.n_chunks), dtype=np.float64),
            elected_chunks=[],
            rule_scores={},
            status="empty",
        )
    q = embed([query_text], index.config.embed, gateway, phase="query")[0]
    top = top_k_classes(index.embeddings, q, sim_cfg)
    ballots = filter_ballots(index.incidence(), {class_id for class_id, _ in top})
    elected, scores, padded = _election(ballots, elect_cfg)
    return RetrievalResult(
        selected_classes=top,
        filtered_ballots=ballots,
        elected_chunks=elected,
        rule_scores=scores,
        padded=padded,
    )
