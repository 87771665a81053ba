"""Configurable text assets: default per-kind node prompts, the tag-generation
template, and the crossover / mutation instruction templates.

All templates use named placeholders; the executor resolves them at call time
and treats any leftover placeholder as an error.
"""

from .embedding import TagPrompt
from .genome import InvokingNode, OperatorNode

TAG_GENERATION_PROMPT = TagPrompt(
    template="""You summarize agentic workflows for retrieval.

Workflow name: {NAME}
Stages: {DESCRIPTION}
Definition:
{CODE}

A task this workflow handled:
{TASK}

Reply with exactly 5 short tags, comma separated, on a single line, and
nothing else. Tags should name the problem domains and the difficulty level
this workflow is suited for. Avoid generic tags.
"""
)

CROSSOVER_PROMPT = """You design multi-agent workflows as JSON documents.

Task to target:
{QUERY}

Reference workflows (parents):
{PARENTS}

Combine the strongest parts of the parents into one new workflow that is
accurate and cheap to run. Reply with a single JSON workflow document using
the same schema as the parents, and nothing else.
"""

PROMPT_MUTATION_PROMPT = """You improve a single agent prompt.

Recent outcomes for this workflow:
{HISTORY}

Current prompt:
{PROMPT}

Rewrite the prompt to be clearer or add brief guidance. Keep every
{{placeholder}} that appears in the original. Reply with the new prompt only.
"""

LLM_MUTATION_PROMPT = """You pick a model backbone for one agent node.

Available models: {MODELS}
Recent per-model outcomes in domain {DOMAIN}:
{HISTORY}

Current model: {CURRENT}
Reply with just the model id to use instead (or the current one to keep it).
"""

OPERATOR_MUTATION_PROMPT = """You restructure a multi-agent workflow.

Current workflow:
{WORKFLOW}

Available operator kinds: {KINDS}
Recent outcomes:
{HISTORY}

Propose one change: add an operator, remove an operator, or rewire one edge.
Reply with a single JSON workflow document using the same schema, and nothing
else.
"""

SELFREFINE_STOP_MARKER = "NO FURTHER REFINEMENT"

# Deterministic prompt-mutation edits; each preserves existing placeholders
# because it only appends or prepends text.
PROMPT_EDITS = (
    lambda p: p + "\nWork through the problem step by step before answering.",
    lambda p: p + "\nState the final answer on its own last line.",
    lambda p: "You are a meticulous domain expert.\n" + p,
)

# Per-kind default node prompts, in node-role order.
_COT = (
    "Solve the following task.\n{task}\n{context}\n"
    "Think step by step, then give the final answer.",
)
_DEBATE = (
    "You are debater 1. Task:\n{task}\n{context}\n"
    "Positions so far:\n{positions}\nArgue for the best answer.",
    "You are debater 2. Task:\n{task}\n{context}\n"
    "Positions so far:\n{positions}\nArgue for the best answer.",
    "You are debater 3. Task:\n{task}\n{context}\n"
    "Positions so far:\n{positions}\nArgue for the best answer.",
    "Task:\n{task}\nDebate positions:\n{positions}\n"
    "Weigh the arguments and give the final answer.",
)
_STEPBACK = (
    "Task:\n{task}\n{context}\n"
    "Before solving, state the general principles this task rests on.",
    "Task:\n{task}\nRelevant principles:\n{principle}\n"
    "Apply the principles and give the final answer.",
)
_SELFCONSISTENCY = (
    "Solve the following task (attempt {sample}).\n{task}\n{context}\n"
    "Reason step by step, then give the final answer.",
)
_SELFREFINE = (
    "Solve the following task.\n{task}\n{context}\n"
    "Reason step by step, then give the final answer.",
    "Task:\n{task}\nCandidate answer:\n{response}\n"
    "Critique the answer. If it needs no change, reply exactly "
    "'" + SELFREFINE_STOP_MARKER + "'.",
)
_ENSEMBLE = (
    "Solve the following task.\n{task}\n{context}\nGive the final answer.",
    "Solve the following task independently.\n{task}\n{context}\nGive the final answer.",
    "Solve the following task your own way.\n{task}\n{context}\nGive the final answer.",
    "Task:\n{task}\nCandidate answers:\n{answers}\n"
    "Compare the candidates pairwise and give the best final answer.",
)
_REACT = (
    "Task:\n{task}\n{context}\nScratchpad:\n{scratchpad}\n"
    "You may call a tool by writing eval(<arithmetic expression>). "
    "Otherwise give the final answer.",
)
_EXPERT = (
    "Task:\n{task}\nName the single best expert persona for this task.",
    "You are {persona}. Task:\n{task}\nGive the final answer.",
)
_CUSTOM = (
    "Solve the following task.\n{task}\n{context}\nGive the final answer.",
)

DEFAULT_NODE_PROMPTS: dict[str, tuple[str, ...]] = {
    "CoT": _COT,
    "Debate": _DEBATE,
    "StepBack": _STEPBACK,
    "SelfConsistency": _SELFCONSISTENCY,
    "SelfRefine": _SELFREFINE,
    "Ensemble": _ENSEMBLE,
    "ReAct": _REACT,
    "ExpertPrompt": _EXPERT,
    "Custom": _CUSTOM,
}

# Default intra-operator wiring, as (from_index, to_index) over the node order.
DEFAULT_INTRA_EDGES: dict[str, tuple[tuple[int, int], ...]] = {
    "CoT": (),
    "Debate": ((0, 3), (1, 3), (2, 3)),
    "StepBack": ((0, 1),),
    "SelfConsistency": (),
    "SelfRefine": ((0, 1),),
    "Ensemble": ((0, 3), (1, 3), (2, 3)),
    "ReAct": (),
    "ExpertPrompt": ((0, 1),),
    "Custom": (),
}

DEFAULT_PARAMS: dict[str, dict] = {
    "Debate": {"rounds": 2},
    "SelfConsistency": {"samples": 5},
    "SelfRefine": {"max_iterations": 5},
    "ReAct": {"max_iterations": 5},
}


def build_operator(kind: str, op_id: str, model_ids: list[str], temperature: float = 1.0) -> OperatorNode:
    """Instantiate an operator template with one model id per node."""
    prompts = DEFAULT_NODE_PROMPTS[kind]
    if len(model_ids) != len(prompts):
        raise ValueError(f"kind {kind} needs {len(prompts)} model ids, got {len(model_ids)}")
    nodes = tuple(
        InvokingNode(
            node_id=f"{op_id}.n{i}",
            model_id=model_ids[i],
            prompt=prompts[i],
            temperature=temperature,
        )
        for i in range(len(prompts))
    )
    edges = tuple(
        (nodes[a].node_id, nodes[b].node_id) for a, b in DEFAULT_INTRA_EDGES[kind]
    )
    return OperatorNode(
        op_id=op_id,
        kind=kind,
        invoking_nodes=nodes,
        intra_edges=edges,
        params=dict(DEFAULT_PARAMS.get(kind, {})),
    )


def template_node_count(kind: str) -> int:
    return len(DEFAULT_NODE_PROMPTS[kind])


DEFAULT_OPERATOR_REPO: tuple[str, ...] = (
    "CoT",
    "Debate",
    "StepBack",
    "SelfConsistency",
    "SelfRefine",
    "Ensemble",
    "ReAct",
    "ExpertPrompt",
)
