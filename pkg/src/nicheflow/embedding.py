"""Embedding backends, cosine similarity, tag-based retrieval scoring, and
utility tag generation.

Two backends are provided: a remote sentence-embedding client, and a fully
offline deterministic embedder (token 3-gram feature hashing) so that the
whole evolutionary loop is testable with zero network access.
"""

import hashlib
import re
import threading
import time
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np

from .errors import InvalidInput, InvalidState, ProviderError
from .genome import ModelPool, WorkflowGenome

DEFAULT_DIM = 384
_TOKEN_RE = re.compile(r"[a-z0-9]+")


class Embedder(Protocol):
    backend_id: str

    def embed(self, text: str) -> np.ndarray: ...


def _check_unit(vec: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(vec)):
        raise InvalidInput("embedding has non-finite entries")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise InvalidInput("zero embedding vector")
    return vec / norm


class _CachingEmbedder:
    """Shared (backend_id, text) cache; embed results are read-mostly."""

    backend_id = "base"

    def __init__(self):
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        key = text.strip()
        if not key:
            raise InvalidInput("cannot embed empty text")
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        vec = _check_unit(self._embed_uncached(key))
        with self._lock:
            self._cache[key] = vec
        return vec

    def _embed_uncached(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashingEmbedder(_CachingEmbedder):
    """Deterministic offline embedder: character 3-grams of lowercased tokens,
    feature-hashed into ``dim`` buckets with term-frequency weights, L2 norm."""

    def __init__(self, dim: int = DEFAULT_DIM):
        super().__init__()
        if dim < 2:
            raise InvalidInput("embedding dimension must be >= 2")
        self.dim = dim
        self.backend_id = f"hash3-{dim}"

    def _embed_uncached(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            padded = f"#{token}#"
            grams = (
                [padded[i : i + 3] for i in range(len(padded) - 2)]
                if len(padded) >= 3
                else [padded]
            )
            for gram in grams:
                digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
                bucket = int.from_bytes(digest, "big") % self.dim
                vec[bucket] += 1.0
        if not vec.any():
            # text with no alphanumeric tokens still gets a stable vector
            digest = hashlib.blake2b(text.strip().encode("utf-8"), digest_size=8).digest()
            vec[int.from_bytes(digest, "big") % self.dim] = 1.0
        return vec


class RemoteEmbedder(_CachingEmbedder):
    """Client for a remote embedding service.

    Wire contract: POST {model, input: [text]} -> {data: [{embedding: [...]}]}.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str = "",
        session=None,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        sleep=time.sleep,
    ):
        super().__init__()
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.session = session
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.sleep = sleep
        self.backend_id = f"remote-{model}"

    def _embed_uncached(self, text: str) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self.session.post(
                    self.endpoint,
                    json={"model": self.model, "input": [text]},
                    headers=headers,
                    timeout=30,
                )
                resp.raise_for_status()
                data = resp.json()["data"][0]["embedding"]
                return np.asarray(data, dtype=np.float64)
            except Exception as e:  # noqa: BLE001 - transport errors are retried
                last = e
                if attempt + 1 < self.max_attempts:
                    self.sleep(self.backoff_base * (2**attempt))
        raise ProviderError(
            f"embedding request failed after {self.max_attempts} attempts",
            attempts=self.max_attempts,
            last_error=last,
        )


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != v.shape:
        raise InvalidInput(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.dot(u, v))


def tag_vectors(genome: WorkflowGenome, embedder: Embedder) -> tuple[np.ndarray, ...]:
    return tuple(embedder.embed(tag) for tag in genome.tags)


def with_tag_vectors(genome: WorkflowGenome, embedder: Embedder) -> WorkflowGenome:
    return genome.with_tags(genome.tags, tag_vectors=tag_vectors(genome, embedder))


def similarity_score(genome: WorkflowGenome, query_vec: np.ndarray) -> float:
    """Sum over the genome's tag vectors of their cosine with the query."""
    if genome.tag_vectors is None or len(genome.tag_vectors) == 0:
        raise InvalidState(f"genome {genome.workflow_id!r} has no tag vectors")
    return float(sum(cosine(tv, query_vec) for tv in genome.tag_vectors))


def tag_profile(genome: WorkflowGenome) -> np.ndarray:
    """Unit-norm mean of a genome's tag vectors; used for genome-to-genome
    similarity in niching."""
    if genome.tag_vectors is None or len(genome.tag_vectors) == 0:
        raise InvalidState(f"genome {genome.workflow_id!r} has no tag vectors")
    mean = np.mean(np.stack(genome.tag_vectors), axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        return mean
    return mean / norm


# --- tag generation ----------------------------------------------------------

@dataclass(frozen=True)
class TagPrompt:
    """Template for model-driven tag generation; placeholders {NAME},
    {DESCRIPTION}, {CODE}, {TASK}."""

    template: str


def _parse_tag_reply(reply: str, kappa: int) -> Optional[list[str]]:
    line = reply.strip().splitlines()[-1] if reply.strip() else ""
    parts = [p.strip() for p in line.split(",")]
    tags = [p for p in parts if p]
    if len(tags) < kappa:
        return None
    return tags[:kappa]


def structural_tags(genome: WorkflowGenome, pool: ModelPool, kappa: int = 5) -> list[str]:
    """Deterministic fallback tagger built from the genome's own structure."""
    kinds = sorted({op.kind for op in genome.operators})
    models = sorted(
        {n.model_id for op in genome.operators for n in op.invoking_nodes}
    )
    prices = [
        pool.get(m).prompt_price + pool.get(m).completion_price
        for m in models
        if m in pool
    ]
    avg_price = sum(prices) / len(prices) if prices else 0.0
    tier = "budget tier" if avg_price < 1.0 else "premium tier"
    candidates = (
        [f"{k} reasoning" for k in kinds]
        + [f"model {m}" for m in models]
        + [tier, f"{len(genome.operators)} stage workflow"]
    )
    candidates += [f"aspect {i}" for i in range(kappa)]
    return candidates[:kappa]


def generate_tags(
    genome: WorkflowGenome,
    provider,
    template: TagPrompt,
    pool: ModelPool,
    kappa: int = 5,
    tagger_model: str | None = None,
    retries: int = 3,
) -> list[str]:
    """Ask a model for kappa comma-separated tags; fall back to the structural
    tagger after ``retries`` malformed replies or on transport failure.

    Always returns exactly kappa tags.
    """
    from .genome import serialize
    from .provider import ChatRequest

    if provider is None:
        return structural_tags(genome, pool, kappa)
    prompt = template.template.format(
        NAME=genome.workflow_id,
        DESCRIPTION=", ".join(op.kind for op in genome.operators),
        CODE=serialize(genome),
        TASK="(no solved task recorded yet)",
    )
    model_id = tagger_model or pool.model_ids[0]
    for _ in range(retries):
        try:
            resp = provider.chat(
                ChatRequest(
                    model_id=model_id,
                    messages=({"role": "user", "content": prompt},),
                    temperature=1.0,
                )
            )
        except ProviderError:
            break
        tags = _parse_tag_reply(resp.content, kappa)
        if tags is not None:
            return tags
    return structural_tags(genome, pool, kappa)
