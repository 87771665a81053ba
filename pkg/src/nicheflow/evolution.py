"""The niching evolutionary engine: population initialization, tag-based
parent retrieval, crossover, the three mutation classes, niching-area
construction, running-stat updates, indicator fitness, environmental
selection, the per-query evolution step, and inference-time retrieval.
"""

import json
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import embedding as emb
from .errors import BudgetExceeded, ConfigError, ProviderError
from .executor import TaskQuery, evaluate, execute
from .genome import (
    InvokingNode,
    ModelPool,
    OperatorNode,
    RunStats,
    WorkflowGenome,
    from_document,
    fresh_workflow_id,
    topological_order,
    validate,
)
from .memory import (
    LlmExperiencePool,
    LlmExperienceRecord,
    WorkflowExperiencePool,
    WorkflowExperienceRecord,
    default_commentary,
    verdict_from_perf,
)
from .provider import ChatRequest
from .templates import (
    CROSSOVER_PROMPT,
    DEFAULT_OPERATOR_REPO,
    LLM_MUTATION_PROMPT,
    PROMPT_EDITS,
    TAG_GENERATION_PROMPT,
    build_operator,
    template_node_count,
)


@dataclass
class EvolutionConfig:
    population_size: int = 15  # N
    parents_k: int = 3  # K
    kappa: int = 5
    niche_size: int = 5  # E
    phi: float = 0.05
    rho_llm: float = 0.3
    rho_prompt: float = 0.3
    m_max: int = 4
    call_budget: int = 64
    retries: int = 3
    skip_edge_prob: float = 0.25
    mutation_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)  # add/delete/rewire
    success_threshold: float = 1.0
    llm_evolution: bool = False
    evolver_model: Optional[str] = None

    def check(self) -> None:
        if self.population_size < 2:
            raise ConfigError("population size must be >= 2")
        if not (1 <= self.parents_k <= self.population_size):
            raise ConfigError("parents_k must be in [1, N]")
        if not (1 <= self.niche_size <= self.population_size):
            raise ConfigError("niche_size must be in [1, N]")
        if self.kappa < 1:
            raise ConfigError("kappa must be >= 1")
        if self.phi <= 0:
            raise ConfigError("phi must be > 0")
        if self.m_max < 1:
            raise ConfigError("m_max must be >= 1")


@dataclass
class Population:
    members: list[WorkflowGenome]
    generation: int = 0
    seed: int = 0

    @property
    def ids(self) -> set[str]:
        return {m.workflow_id for m in self.members}

    def replace_member(self, genome: WorkflowGenome) -> None:
        for i, m in enumerate(self.members):
            if m.workflow_id == genome.workflow_id:
                self.members[i] = genome
                return
        raise KeyError(genome.workflow_id)


@dataclass(frozen=True)
class ObjectivePoint:
    perf: float
    cost: float


def objective_point(genome: WorkflowGenome) -> ObjectivePoint:
    return ObjectivePoint(genome.stats.mean_perf, genome.stats.mean_cost)


@dataclass(frozen=True)
class NichingPool:
    offspring: WorkflowGenome
    parents: tuple[WorkflowGenome, ...]
    area: tuple[WorkflowGenome, ...]

    def _dedup(self, genomes) -> list[WorkflowGenome]:
        seen: set[str] = set()
        out = []
        for g in genomes:
            if g.workflow_id not in seen:
                seen.add(g.workflow_id)
                out.append(g)
        return out

    @property
    def exec_members(self) -> list[WorkflowGenome]:
        """Everything executed this step: area ∪ parents ∪ offspring."""
        return self._dedup(list(self.area) + list(self.parents) + [self.offspring])

    @property
    def selection_candidates(self) -> list[WorkflowGenome]:
        """Elimination candidates: area ∪ offspring."""
        return self._dedup(list(self.area) + [self.offspring])


# --- structural helpers -------------------------------------------------------

def renumber_operators(operators: Sequence[OperatorNode]) -> tuple[OperatorNode, ...]:
    """Reassign sequential op/node ids so composed genomes never collide."""
    out = []
    for idx, op in enumerate(operators):
        op_id = f"op{idx}"
        id_map = {
            n.node_id: f"{op_id}.n{i}" for i, n in enumerate(op.invoking_nodes)
        }
        nodes = tuple(
            replace(n, node_id=id_map[n.node_id]) for n in op.invoking_nodes
        )
        edges = tuple(
            (id_map[a], id_map[b])
            for a, b in op.intra_edges
            if a in id_map and b in id_map
        )
        out.append(replace(op, op_id=op_id, invoking_nodes=nodes, intra_edges=edges))
    return tuple(out)


def chain_edges(operators: Sequence[OperatorNode]) -> tuple[tuple[str, str], ...]:
    return tuple(
        (operators[i].op_id, operators[i + 1].op_id)
        for i in range(len(operators) - 1)
    )


def _assemble(
    operators: Sequence[OperatorNode],
    inter_edges,
    tags,
    lineage,
    taken: set[str],
) -> WorkflowGenome:
    genome = WorkflowGenome(
        workflow_id="pending",
        operators=tuple(operators),
        inter_edges=tuple(inter_edges),
        tags=tuple(tags),
        stats=RunStats(),
        lineage=dict(lineage),
    )
    return replace(genome, workflow_id=fresh_workflow_id(genome, taken))


# --- initialization -----------------------------------------------------------

def init_population(
    cfg: EvolutionConfig,
    operator_repo: Sequence[str],
    pool: ModelPool,
    embedder,
    rng: np.random.Generator,
    provider=None,
    tag_template=TAG_GENERATION_PROMPT,
    seed: int = 0,
) -> Population:
    """Sample N genomes: uniform operator templates, uniform model choices,
    chain wiring plus optional skip edges, then tag every genome."""
    cfg.check()
    if not operator_repo:
        raise ConfigError("operator repository must be nonempty")
    if len(pool) == 0:
        raise ConfigError("model pool must be nonempty")
    model_ids = pool.model_ids
    members: list[WorkflowGenome] = []
    taken: set[str] = set()
    for _ in range(cfg.population_size):
        m = int(rng.integers(1, cfg.m_max + 1))
        ops = []
        for i in range(m):
            kind = operator_repo[int(rng.integers(len(operator_repo)))]
            n_nodes = template_node_count(kind)
            chosen = [model_ids[int(rng.integers(len(model_ids)))] for _ in range(n_nodes)]
            ops.append(build_operator(kind, f"op{i}", chosen))
        edges = list(chain_edges(ops))
        for i in range(m):
            for j in range(i + 2, m):
                if rng.random() < cfg.skip_edge_prob:
                    edges.append((ops[i].op_id, ops[j].op_id))
        genome = _assemble(ops, edges, [], {"parents": [], "mode": "init"}, taken)
        tags = emb.generate_tags(
            genome,
            provider if cfg.llm_evolution else None,
            tag_template,
            pool,
            kappa=cfg.kappa,
            tagger_model=cfg.evolver_model,
            retries=cfg.retries,
        )
        genome = genome.with_tags(tags)
        genome = emb.with_tag_vectors(genome, embedder)
        violations = validate(genome, pool, kappa=cfg.kappa)
        if violations:
            raise ConfigError(f"initialization produced invalid genome: {violations}")
        taken.add(genome.workflow_id)
        members.append(genome)
    return Population(members=members, generation=0, seed=seed)


def ensure_tag_vectors(pop: Population, embedder) -> None:
    for m in list(pop.members):
        if m.tag_vectors is None:
            pop.replace_member(emb.with_tag_vectors(m, embedder))


# --- retrieval ----------------------------------------------------------------

def select_parents(
    members: Sequence[WorkflowGenome], query_vec: np.ndarray, k: int
) -> list[WorkflowGenome]:
    """The k members with largest tag-similarity score; ties by ascending id."""
    scored = sorted(
        members,
        key=lambda g: (-emb.similarity_score(g, query_vec), g.workflow_id),
    )
    return scored[:k]


# --- crossover ----------------------------------------------------------------

def _extract_json_document(reply: str) -> dict:
    start = reply.find("{")
    end = reply.rfind("}")
    if start < 0 or end <= start:
        raise ValueError("no JSON object in reply")
    return json.loads(reply[start : end + 1])


def _llm_offspring_structure(
    parents, provider, cfg: EvolutionConfig, pool: ModelPool, query_text: str
):
    from .genome import serialize

    prompt = CROSSOVER_PROMPT.format(
        QUERY=query_text or "(general task stream)",
        PARENTS="\n\n".join(serialize(p) for p in parents),
    )
    model_id = cfg.evolver_model or pool.model_ids[0]
    for _ in range(cfg.retries):
        try:
            resp = provider.chat(
                ChatRequest(
                    model_id=model_id,
                    messages=({"role": "user", "content": prompt},),
                    temperature=1.0,
                )
            )
        except ProviderError:
            return None
        try:
            doc = _extract_json_document(resp.content)
            candidate = from_document(doc)
        except Exception:  # noqa: BLE001 - malformed replies trigger a retry
            continue
        ops = renumber_operators(candidate.operators)
        remap = {
            old.op_id: new.op_id
            for old, new in zip(candidate.operators, ops)
        }
        edges = tuple(
            (remap[a], remap[b])
            for a, b in candidate.inter_edges
            if a in remap and b in remap
        )
        trial = WorkflowGenome(
            workflow_id="trial", operators=ops, inter_edges=edges,
            tags=tuple(f"t{i}" for i in range(cfg.kappa)),
        )
        if not validate(trial, pool, kappa=cfg.kappa):
            return ops, edges
    return None


def crossover(
    parents: Sequence[WorkflowGenome],
    provider,
    cfg: EvolutionConfig,
    rng: np.random.Generator,
    pool: ModelPool,
    taken: Optional[set[str]] = None,
    query_text: str = "",
) -> WorkflowGenome:
    """Recombine the parents into an offspring sketch.

    The model-driven route is tried first (when enabled); any parse or
    validation failure falls back to a structured graft so the evolution step
    never aborts.
    """
    if not parents:
        raise ConfigError("crossover needs at least one parent")
    taken = set(taken or ())
    lineage = {"parents": [p.workflow_id for p in parents], "mode": "fallback"}

    if cfg.llm_evolution and provider is not None:
        result = _llm_offspring_structure(parents, provider, cfg, pool, query_text)
        if result is not None:
            ops, edges = result
            lineage["mode"] = "llm"
            return _assemble(ops, edges, [], lineage, taken)

    base = parents[0]
    ops = list(base.operators)
    if len(parents) >= 2:
        donor = parents[1]
        i = int(rng.integers(len(donor.operators)))
        j = int(rng.integers(i, len(donor.operators)))
        segment = list(donor.operators[i : j + 1])
        k = int(rng.integers(len(ops) + 1))
        ops = ops[:k] + segment + ops[k:]
    ops = renumber_operators(ops)
    return _assemble(ops, chain_edges(ops), [], lineage, taken)


# --- mutations ------------------------------------------------------------

def _rebuild_with_nodes(genome: WorkflowGenome, new_nodes: dict[str, InvokingNode]) -> WorkflowGenome:
    ops = tuple(
        replace(
            op,
            invoking_nodes=tuple(new_nodes.get(n.node_id, n) for n in op.invoking_nodes),
        )
        for op in genome.operators
    )
    return replace(genome, operators=ops)


def mutate_llm(
    genome: WorkflowGenome,
    llm_pool: Optional[LlmExperiencePool],
    pool: ModelPool,
    rng: np.random.Generator,
    domain: str = "general",
    rho: float = 0.3,
    provider=None,
    cfg: Optional[EvolutionConfig] = None,
) -> WorkflowGenome:
    """Swap invoking-node model backbones, weighted by each candidate model's
    historical positive rate in the query's domain."""
    model_ids = pool.model_ids
    if len(model_ids) < 2:
        return genome
    new_nodes: dict[str, InvokingNode] = {}
    for op in genome.operators:
        for node in op.invoking_nodes:
            if rng.random() >= rho:
                continue
            replacement = None
            if provider is not None and cfg is not None and cfg.llm_evolution:
                replacement = _llm_pick_model(node, llm_pool, pool, domain, provider, cfg)
            if replacement is None:
                candidates = [m for m in model_ids if m != node.model_id]
                if llm_pool is not None:
                    weights = np.array(
                        [llm_pool.query_summary(m, domain).positive_rate for m in candidates]
                    )
                else:
                    weights = np.ones(len(candidates))
                weights = weights / weights.sum()
                replacement = candidates[int(rng.choice(len(candidates), p=weights))]
            if replacement != node.model_id and replacement in pool:
                new_nodes[node.node_id] = replace(node, model_id=replacement)
    if not new_nodes:
        return genome
    return _rebuild_with_nodes(genome, new_nodes)


def _llm_pick_model(node, llm_pool, pool, domain, provider, cfg) -> Optional[str]:
    history = []
    for m in pool.model_ids:
        if llm_pool is None:
            break
        s = llm_pool.query_summary(m, domain)
        history.append(f"{m}: {s.positive_count} positive / {s.negative_count} negative")
    prompt = LLM_MUTATION_PROMPT.format(
        MODELS=", ".join(pool.model_ids),
        DOMAIN=domain,
        HISTORY="\n".join(history) or "(none)",
        CURRENT=node.model_id,
    )
    try:
        resp = provider.chat(
            ChatRequest(
                model_id=cfg.evolver_model or pool.model_ids[0],
                messages=({"role": "user", "content": prompt},),
                temperature=1.0,
            )
        )
    except ProviderError:
        return None
    candidate = resp.content.strip().split()[-1] if resp.content.strip() else ""
    return candidate if candidate in pool else None


_PLACEHOLDER_CHECK = re.compile(r"\{([a-zA-Z_][a-zA-Z0-9_]*)\}")


def _placeholders(prompt: str) -> set[str]:
    return set(_PLACEHOLDER_CHECK.findall(prompt))


def mutate_prompt(
    genome: WorkflowGenome,
    wf_pool: Optional[WorkflowExperiencePool],
    rng: np.random.Generator,
    rho: float = 0.3,
    provider=None,
    cfg: Optional[EvolutionConfig] = None,
    pool: Optional[ModelPool] = None,
) -> WorkflowGenome:
    """Rewrite node prompts; an edit that drops any original placeholder is
    discarded and the original prompt kept."""
    new_nodes: dict[str, InvokingNode] = {}
    for op in genome.operators:
        for node in op.invoking_nodes:
            if rng.random() >= rho:
                continue
            original = node.prompt
            rewritten = None
            if provider is not None and cfg is not None and cfg.llm_evolution:
                rewritten = _llm_rewrite_prompt(node, genome, wf_pool, provider, cfg, pool)
            if rewritten is None:
                edit = PROMPT_EDITS[int(rng.integers(len(PROMPT_EDITS)))]
                rewritten = edit(original)
            if not _placeholders(original) <= _placeholders(rewritten):
                continue  # guard: edit dropped a placeholder
            if rewritten != original:
                new_nodes[node.node_id] = replace(node, prompt=rewritten)
    if not new_nodes:
        return genome
    return _rebuild_with_nodes(genome, new_nodes)


def _llm_rewrite_prompt(node, genome, wf_pool, provider, cfg, pool) -> Optional[str]:
    from .templates import PROMPT_MUTATION_PROMPT

    summary = (
        wf_pool.query_summary(genome.workflow_id) if wf_pool is not None else None
    )
    history = "\n".join(summary.recent_commentaries) if summary else "(none)"
    prompt = PROMPT_MUTATION_PROMPT.format(HISTORY=history, PROMPT=node.prompt)
    model_id = (cfg.evolver_model or (pool.model_ids[0] if pool else node.model_id))
    try:
        resp = provider.chat(
            ChatRequest(
                model_id=model_id,
                messages=({"role": "user", "content": prompt},),
                temperature=1.0,
            )
        )
    except ProviderError:
        return None
    return resp.content.strip() or None


def mutate_operator(
    genome: WorkflowGenome,
    wf_pool: Optional[WorkflowExperiencePool],
    rng: np.random.Generator,
    repo: Sequence[str] = DEFAULT_OPERATOR_REPO,
    pool: Optional[ModelPool] = None,
    cfg: Optional[EvolutionConfig] = None,
    provider=None,
) -> WorkflowGenome:
    """Add an operator, delete a non-sink operator, or rewire one inter-edge;
    any result failing validation is discarded."""
    cfg = cfg or EvolutionConfig()
    if pool is None:
        raise ConfigError("mutate_operator requires the model pool")
    weights = np.asarray(cfg.mutation_weights, dtype=float)
    weights = weights / weights.sum()
    action = int(rng.choice(3, p=weights))
    ops = list(genome.operators)
    edges = list(genome.inter_edges)

    if action == 0:  # add
        kind = repo[int(rng.integers(len(repo)))]
        model_ids = pool.model_ids
        chosen = [
            model_ids[int(rng.integers(len(model_ids)))]
            for _ in range(template_node_count(kind))
        ]
        new_op = build_operator(kind, "opX", chosen)
        k = int(rng.integers(len(ops) + 1))
        ops = ops[:k] + [new_op] + ops[k:]
        new_ops = renumber_operators(ops)
        candidate = replace(
            genome, operators=new_ops, inter_edges=chain_edges(new_ops)
        )
    elif action == 1:  # delete a non-sink operator
        if len(ops) <= 1:
            return genome
        has_out = {a for a, _ in edges}
        non_sink = [i for i, op in enumerate(ops) if op.op_id in has_out]
        if not non_sink:
            return genome
        del ops[non_sink[int(rng.integers(len(non_sink)))]]
        new_ops = renumber_operators(ops)
        candidate = replace(
            genome, operators=new_ops, inter_edges=chain_edges(new_ops)
        )
    else:  # rewire: add one forward skip edge
        order = topological_order([op.op_id for op in ops], edges)
        if order is None or len(ops) < 3:
            return genome
        pos = {oid: i for i, oid in enumerate(order)}
        existing = set(edges)
        candidates = [
            (a, b)
            for a in order
            for b in order
            if pos[a] + 1 < pos[b] and (a, b) not in existing
        ]
        if not candidates:
            return genome
        edges.append(candidates[int(rng.integers(len(candidates)))])
        candidate = replace(genome, inter_edges=tuple(edges))

    if validate(candidate, pool, kappa=len(genome.tags) or 5):
        return genome
    return candidate


# --- niching, stats, indicator fitness -----------------------------------------

def niching_area(
    pop: Population,
    offspring: WorkflowGenome,
    e: int,
    parents: Sequence[WorkflowGenome] = (),
) -> NichingPool:
    """Select the E members minimizing combined rank: position in descending
    tag-similarity order plus position in ascending cost-distance order."""
    members = list(pop.members)
    off_profile = emb.tag_profile(offspring)
    kappa = len(offspring.tags)
    sims = {
        m.workflow_id: kappa * emb.cosine(off_profile, emb.tag_profile(m))
        for m in members
    }
    cost_dist = {
        m.workflow_id: abs(offspring.stats.mean_cost - m.stats.mean_cost)
        for m in members
    }
    by_sim = sorted(members, key=lambda g: (-sims[g.workflow_id], g.workflow_id))
    by_cost = sorted(members, key=lambda g: (cost_dist[g.workflow_id], g.workflow_id))
    rank_s = {g.workflow_id: i for i, g in enumerate(by_sim)}
    rank_c = {g.workflow_id: i for i, g in enumerate(by_cost)}
    chosen = sorted(
        members,
        key=lambda g: (rank_s[g.workflow_id] + rank_c[g.workflow_id], g.workflow_id),
    )[:e]
    return NichingPool(offspring=offspring, parents=tuple(parents), area=tuple(chosen))


def combined_ranks(
    pop: Population, offspring: WorkflowGenome
) -> dict[str, int]:
    """Rank_S + Rank_c per member (exposed for oracle tests)."""
    members = list(pop.members)
    off_profile = emb.tag_profile(offspring)
    kappa = len(offspring.tags)
    sims = {
        m.workflow_id: kappa * emb.cosine(off_profile, emb.tag_profile(m))
        for m in members
    }
    cost_dist = {
        m.workflow_id: abs(offspring.stats.mean_cost - m.stats.mean_cost)
        for m in members
    }
    by_sim = sorted(members, key=lambda g: (-sims[g.workflow_id], g.workflow_id))
    by_cost = sorted(members, key=lambda g: (cost_dist[g.workflow_id], g.workflow_id))
    rank_s = {g.workflow_id: i for i, g in enumerate(by_sim)}
    rank_c = {g.workflow_id: i for i, g in enumerate(by_cost)}
    return {m.workflow_id: rank_s[m.workflow_id] + rank_c[m.workflow_id] for m in members}


def update_stats(genome: WorkflowGenome, observed_cost: float, observed_perf: float) -> WorkflowGenome:
    """Incremental mean update of cost and performance."""
    if not (0.0 <= observed_perf <= 1.0):
        raise ConfigError(f"observed_perf {observed_perf} out of [0,1]")
    if observed_cost < 0:
        raise ConfigError(f"observed_cost {observed_cost} negative")
    n = genome.stats.exec_count
    new = RunStats(
        exec_count=n + 1,
        mean_cost=(genome.stats.mean_cost * n + observed_cost) / (n + 1),
        mean_perf=(genome.stats.mean_perf * n + observed_perf) / (n + 1),
    )
    return genome.with_stats(new)


def dominates(a: ObjectivePoint, b: ObjectivePoint) -> bool:
    """Higher performance and lower cost, strictly better in at least one."""
    return (
        a.perf >= b.perf
        and a.cost <= b.cost
        and (a.perf > b.perf or a.cost < b.cost)
    )


@dataclass(frozen=True)
class NormBox:
    perf_min: float
    perf_max: float
    cost_min: float
    cost_max: float

    @classmethod
    def from_points(cls, points: Sequence[ObjectivePoint]) -> "NormBox":
        perfs = [p.perf for p in points]
        costs = [p.cost for p in points]
        return cls(min(perfs), max(perfs), min(costs), max(costs))

    def maximize_coords(self, p: ObjectivePoint) -> tuple[float, float]:
        """Both coordinates to-maximize in [0,1]; degenerate axes pin to 0.5."""
        if self.perf_max > self.perf_min:
            g1 = (p.perf - self.perf_min) / (self.perf_max - self.perf_min)
        else:
            g1 = 0.5
        if self.cost_max > self.cost_min:
            g2 = 1.0 - (p.cost - self.cost_min) / (self.cost_max - self.cost_min)
        else:
            g2 = 0.5
        return g1, g2


def epsilon_indicator(a: ObjectivePoint, b: ObjectivePoint, normbox: NormBox) -> float:
    """Additive epsilon indicator I(a,b): the smallest uniform shift of a's
    normalized objectives that makes a weakly dominate b."""
    ga = normbox.maximize_coords(a)
    gb = normbox.maximize_coords(b)
    return max(gb[0] - ga[0], gb[1] - ga[1])


def fitness(points: dict[str, ObjectivePoint], phi: float = 0.05) -> dict[str, float]:
    """Indicator fitness: F(x) = sum over y != x of exp(-I(y,x) / (phi*Imax)).

    Smaller is better; the largest value marks the elimination candidate.
    """
    ids = sorted(points)
    if len(ids) < 2:
        raise ConfigError("fitness needs a pool of at least 2")
    normbox = NormBox.from_points([points[i] for i in ids])
    indicator: dict[tuple[str, str], float] = {}
    for y in ids:
        for x in ids:
            if x == y:
                continue
            indicator[(y, x)] = epsilon_indicator(points[y], points[x], normbox)
    imax = max(abs(v) for v in indicator.values())
    divisor = phi * imax if imax > 0 else 1.0
    return {
        x: sum(
            float(np.exp(-indicator[(y, x)] / divisor)) for y in ids if y != x
        )
        for x in ids
    }


def environmental_selection(
    pop: Population, pool: NichingPool, phi: float = 0.05
) -> tuple[Population, str]:
    """Eliminate the worst-fitness candidate; the offspring only enters the
    population when an incumbent is eliminated instead."""
    candidates = pool.selection_candidates
    for g in candidates:
        if g.stats.exec_count < 1:
            raise ConfigError(
                f"candidate {g.workflow_id!r} entered selection without execution"
            )
    points = {g.workflow_id: objective_point(g) for g in candidates}
    fit = fitness(points, phi)
    worst = max(
        candidates,
        key=lambda g: (fit[g.workflow_id], g.stats.mean_cost, g.workflow_id),
    )
    if worst.workflow_id == pool.offspring.workflow_id:
        return Population(list(pop.members), pop.generation, pop.seed), worst.workflow_id
    members = [m for m in pop.members if m.workflow_id != worst.workflow_id]
    members.append(pool.offspring)
    return Population(members, pop.generation, pop.seed), worst.workflow_id


# --- the per-query evolution step ----------------------------------------------

@dataclass
class EvolveDeps:
    cfg: EvolutionConfig
    pool: ModelPool
    provider: object
    embedder: object
    repo: Sequence[str] = DEFAULT_OPERATOR_REPO
    llm_pool: Optional[LlmExperiencePool] = None
    wf_pool: Optional[WorkflowExperiencePool] = None
    tag_template: object = TAG_GENERATION_PROMPT
    tools: Optional[dict] = None


@dataclass
class StepReport:
    generation: int
    query_id: str
    offspring_id: str
    accepted: bool
    eliminated_id: str
    evaluations: dict[str, dict[str, float]]

    def to_doc(self) -> dict:
        return {
            "generation": self.generation,
            "query_id": self.query_id,
            "offspring_id": self.offspring_id,
            "accepted": self.accepted,
            "eliminated_id": self.eliminated_id,
            "evaluations": self.evaluations,
        }


def evolve_step(
    pop: Population,
    query: TaskQuery,
    deps: EvolveDeps,
    rng: np.random.Generator,
) -> tuple[Population, StepReport]:
    """One full evolution iteration on a single query: retrieve parents,
    breed and mutate an offspring, build the niching pool, execute and update
    stats, then environmentally select."""
    cfg = deps.cfg
    cfg.check()
    ensure_tag_vectors(pop, deps.embedder)
    query_vec = deps.embedder.embed(query.text)

    parents = select_parents(pop.members, query_vec, cfg.parents_k)

    offspring = crossover(
        parents, deps.provider, cfg, rng, deps.pool, pop.ids, query_text=query.text
    )
    offspring = mutate_llm(
        offspring, deps.llm_pool, deps.pool, rng,
        domain=query.domain, rho=cfg.rho_llm, provider=deps.provider, cfg=cfg,
    )
    offspring = mutate_prompt(
        offspring, deps.wf_pool, rng, rho=cfg.rho_prompt,
        provider=deps.provider, cfg=cfg, pool=deps.pool,
    )
    offspring = mutate_operator(
        offspring, deps.wf_pool, rng, repo=deps.repo, pool=deps.pool,
        cfg=cfg, provider=deps.provider,
    )
    tags = emb.generate_tags(
        offspring,
        deps.provider if cfg.llm_evolution else None,
        deps.tag_template,
        deps.pool,
        kappa=cfg.kappa,
        tagger_model=cfg.evolver_model,
        retries=cfg.retries,
    )
    offspring = offspring.with_tags(tags)
    offspring = emb.with_tag_vectors(offspring, deps.embedder)
    offspring = replace(offspring, workflow_id=fresh_workflow_id(offspring, pop.ids))
    if validate(offspring, deps.pool, kappa=cfg.kappa):
        # pathological offspring: fall back to a renumbered clone of parent 1
        ops = renumber_operators(parents[0].operators)
        offspring = _assemble(
            ops, chain_edges(ops), parents[0].tags,
            {"parents": [parents[0].workflow_id], "mode": "clone"}, pop.ids,
        )
        offspring = emb.with_tag_vectors(offspring, deps.embedder)

    niche = niching_area(pop, offspring, cfg.niche_size, parents=parents)

    evaluations: dict[str, dict[str, float]] = {}
    updated: dict[str, WorkflowGenome] = {}
    for genome in sorted(niche.exec_members, key=lambda g: g.workflow_id):
        try:
            trace = execute(
                genome, query, deps.provider, deps.pool,
                call_budget=cfg.call_budget, tools=deps.tools,
            )
            perf = evaluate(trace.answer, query)
            cost = trace.total_cost
        except BudgetExceeded as e:
            # over-budget genomes score zero but still pay for their calls
            perf, cost = 0.0, e.partial_cost
        new_genome = update_stats(genome, cost, perf)
        updated[new_genome.workflow_id] = new_genome
        evaluations[new_genome.workflow_id] = {"perf": perf, "cost": cost}
        _append_experience(deps, new_genome, query, perf, cost, cfg)

    for wid, genome in updated.items():
        if wid in pop.ids:
            pop.replace_member(genome)
    offspring = updated[offspring.workflow_id]
    niche = NichingPool(
        offspring=offspring,
        parents=tuple(updated[p.workflow_id] for p in parents),
        area=tuple(updated[a.workflow_id] for a in niche.area),
    )

    new_pop, eliminated = environmental_selection(pop, niche, cfg.phi)
    new_pop.generation = pop.generation + 1
    report = StepReport(
        generation=new_pop.generation,
        query_id=query.query_id,
        offspring_id=offspring.workflow_id,
        accepted=eliminated != offspring.workflow_id,
        eliminated_id=eliminated,
        evaluations=evaluations,
    )
    return new_pop, report


def _append_experience(deps, genome, query, perf, cost, cfg) -> None:
    verdict = verdict_from_perf(perf, cfg.success_threshold)
    kinds = [op.kind for op in genome.operators]
    if deps.wf_pool is not None:
        deps.wf_pool.append(
            WorkflowExperienceRecord(
                workflow_id=genome.workflow_id,
                query_id=query.query_id,
                verdict=verdict,
                commentary=default_commentary("workflow", verdict, query.domain, kinds),
                perf=perf,
                cost=cost,
                domain=query.domain,
            )
        )
    if deps.llm_pool is not None:
        used_models = sorted(
            {n.model_id for op in genome.operators for n in op.invoking_nodes}
        )
        for model_id in used_models:
            deps.llm_pool.append(
                LlmExperienceRecord(
                    model_id=model_id,
                    workflow_id=genome.workflow_id,
                    query_id=query.query_id,
                    verdict=verdict,
                    commentary=default_commentary(model_id, verdict, query.domain, kinds),
                    domain=query.domain,
                )
            )


# --- inference ------------------------------------------------------------

def choose_workflow(
    pop: Population,
    query_vec: np.ndarray,
    mode: str = "best",
    budget: Optional[float] = None,
) -> WorkflowGenome:
    """best: argmax tag similarity (ties: lower mean cost, then id).
    budget: same among members with mean_cost <= budget; empty set falls back
    to the cheapest member."""
    members = list(pop.members)
    if mode == "budget":
        if budget is None:
            raise ConfigError("budget mode requires a budget")
        affordable = [m for m in members if m.stats.mean_cost <= budget]
        if not affordable:
            return min(members, key=lambda g: (g.stats.mean_cost, g.workflow_id))
        members = affordable
    elif mode != "best":
        raise ConfigError(f"unknown inference mode {mode!r}")
    return min(
        members,
        key=lambda g: (
            -emb.similarity_score(g, query_vec),
            g.stats.mean_cost,
            g.workflow_id,
        ),
    )


def infer(
    pop: Population,
    query: TaskQuery,
    embedder,
    provider,
    pool: ModelPool,
    mode: str = "best",
    budget: Optional[float] = None,
    call_budget: int = 64,
    tools: Optional[dict] = None,
):
    ensure_tag_vectors(pop, embedder)
    query_vec = embedder.embed(query.text)
    genome = choose_workflow(pop, query_vec, mode=mode, budget=budget)
    trace = execute(genome, query, provider, pool, call_budget=call_budget, tools=tools)
    return genome, trace
