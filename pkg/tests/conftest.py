import numpy as np
import pytest

from nicheflow.embedding import HashingEmbedder, with_tag_vectors
from nicheflow.errors import ProviderError
from nicheflow.genome import (
    ModelPool,
    ModelSpec,
    RunStats,
    WorkflowGenome,
    fresh_workflow_id,
)
from nicheflow.provider import ChatResponse, SimModelProfile, SimulatedProvider
from nicheflow.templates import build_operator


MODEL_SPECS = [
    ModelSpec("tiny", prompt_price=0.05, completion_price=0.1, size_params=7_000_000_000),
    ModelSpec("small", prompt_price=0.3, completion_price=0.6, size_params=70_000_000_000),
    ModelSpec("mid", prompt_price=1.0, completion_price=2.0),
    ModelSpec("big", prompt_price=5.0, completion_price=10.0, latency_hint=2.0),
]

SIM_PROFILES = [
    SimModelProfile("tiny", {"easy": 0.55, "hard": 0.15}, prompt_tokens=120, completion_tokens=60),
    SimModelProfile("small", {"easy": 0.7, "hard": 0.35}, prompt_tokens=150, completion_tokens=80),
    SimModelProfile("mid", {"easy": 0.85, "hard": 0.6}, prompt_tokens=200, completion_tokens=100),
    SimModelProfile("big", {"easy": 0.97, "hard": 0.9}, prompt_tokens=300, completion_tokens=150),
]


@pytest.fixture
def pool():
    return ModelPool(MODEL_SPECS)


@pytest.fixture
def sim_provider():
    return SimulatedProvider(SIM_PROFILES, seed=7)


@pytest.fixture
def embedder():
    return HashingEmbedder(dim=64)


def build_genome(kinds=("CoT",), model="tiny", tags=None, stats=None, wid=None,
                 embedder=None, kappa=5):
    """Small chain genome with default templates, one model everywhere."""
    from nicheflow.templates import template_node_count

    ops = [
        build_operator(kind, f"op{i}", [model] * template_node_count(kind))
        for i, kind in enumerate(kinds)
    ]
    edges = tuple((ops[i].op_id, ops[i + 1].op_id) for i in range(len(ops) - 1))
    genome = WorkflowGenome(
        workflow_id="pending",
        operators=tuple(ops),
        inter_edges=edges,
        tags=tuple(tags) if tags is not None else tuple(f"tag {i}" for i in range(kappa)),
        stats=stats or RunStats(),
    )
    genome = genome.with_stats(genome.stats)
    wid = wid or fresh_workflow_id(genome, set())
    genome = WorkflowGenome(
        workflow_id=wid,
        operators=genome.operators,
        inter_edges=genome.inter_edges,
        tags=genome.tags,
        stats=genome.stats,
    )
    if embedder is not None:
        genome = with_tag_vectors(genome, embedder)
    return genome


class ScriptedProvider:
    """Replays canned replies in order (last reply repeats); records requests."""

    def __init__(self, replies, prompt_tokens=100, completion_tokens=50, fail_after=None):
        self.replies = list(replies)
        self.prompt_tokens = prompt_tokens
        self.completion_tokens = completion_tokens
        self.requests = []
        self.fail_after = fail_after

    def chat(self, req):
        if self.fail_after is not None and len(self.requests) >= self.fail_after:
            raise ProviderError("scripted transport failure", attempts=3)
        self.requests.append(req)
        idx = min(len(self.requests) - 1, len(self.replies) - 1)
        return ChatResponse(
            content=self.replies[idx],
            prompt_tokens=self.prompt_tokens,
            completion_tokens=self.completion_tokens,
        )


def unit_vec(dim, angle_cos, rng=None):
    """2-sparse unit vector with a chosen cosine against e0."""
    v = np.zeros(dim)
    v[0] = angle_cos
    v[1] = np.sqrt(max(0.0, 1.0 - angle_cos**2))
    return v
