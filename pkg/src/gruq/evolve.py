"""NSGA-II over 17-gene bit-width genomes.

Both objectives (accuracy, size complement) are maximized. Variation
uses real-coded simulated binary crossover and polynomial mutation with
round-half-away-from-zero plus clamping to keep genes in [2, 8].
Fitness evaluations are memoized by genome; with jobs > 1 the distinct
genomes of a generation are evaluated concurrently, which cannot change
any result because each evaluation is a pure function of its genome.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from gruq.blocks import NUM_BLOCKS

log = logging.getLogger(__name__)

GENE_MIN = 2
GENE_MAX = 8


@dataclass
class SearchConfig:
    population_size: int = 32
    generations: int = 20
    crossover_probability: float = 0.9
    crossover_index: float = 15.0
    mutation_probability: float = 1.0 / NUM_BLOCKS
    mutation_index: float = 20.0
    seed: int = 42
    finetune_mode: str = "ptq"
    # pinned template for restricted searches; None frees all genes
    template: tuple | None = None
    free_genes: tuple | None = None

    def __post_init__(self):
        if self.population_size < 4 or self.population_size % 2:
            raise ValueError("population_size must be even and >= 4")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.finetune_mode not in ("ptq", "qat"):
            raise ValueError(f"unknown finetune_mode {self.finetune_mode!r}")


@dataclass
class Individual:
    genome: tuple
    fitness: tuple | None = None       # (accuracy, size_complement)
    rank: int = -1
    crowding: float = 0.0
    generation_born: int = 0


def validate_genome(genome):
    genome = tuple(int(g) for g in genome)
    if len(genome) != NUM_BLOCKS:
        raise ValueError(f"genome must have {NUM_BLOCKS} genes, got {len(genome)}")
    if any(not (GENE_MIN <= g <= GENE_MAX) for g in genome):
        raise ValueError(f"genes must lie in [{GENE_MIN}, {GENE_MAX}]: {genome}")
    return genome


def sample_genome(rng, cfg: SearchConfig | None = None) -> tuple:
    """Uniform draws from {2..8}, honoring a pinned template if present."""
    genes = rng.integers(GENE_MIN, GENE_MAX + 1, size=NUM_BLOCKS)
    return _apply_template(tuple(int(g) for g in genes), cfg)


def _apply_template(genome, cfg):
    if cfg is None or cfg.template is None:
        return genome
    free = set(cfg.free_genes or range(NUM_BLOCKS))
    return tuple(g if i in free else cfg.template[i]
                 for i, g in enumerate(genome))


def dominates(a, b) -> bool:
    """Componentwise >= with at least one strict improvement (maximization)."""
    return a[0] >= b[0] and a[1] >= b[1] and a != b


def fast_nondominated_sort(fitnesses) -> list[list[int]]:
    """Deb's fast non-dominated sort; returns fronts of indices."""
    n = len(fitnesses)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    dom_count = [0] * n
    fronts: list[list[int]] = [[]]
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(fitnesses[p], fitnesses[q]):
                dominated_by[p].append(q)
            elif dominates(fitnesses[q], fitnesses[p]):
                dom_count[p] += 1
        if dom_count[p] == 0:
            fronts[0].append(p)
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                dom_count[q] -= 1
                if dom_count[q] == 0:
                    nxt.append(q)
        i += 1
        fronts.append(nxt)
    return fronts[:-1]


def crowding_distance(front_fitnesses) -> list[float]:
    """Cuboid crowding distance; boundary points per objective get +inf."""
    n = len(front_fitnesses)
    if n == 0:
        raise ValueError("front must be non-empty")
    dist = [0.0] * n
    for obj in range(2):
        vals = [f[obj] for f in front_fitnesses]
        order = sorted(range(n), key=lambda i: vals[i])
        dist[order[0]] = dist[order[-1]] = math.inf
        span = vals[order[-1]] - vals[order[0]]
        if span == 0:
            continue
        for k in range(1, n - 1):
            dist[order[k]] += (vals[order[k + 1]] - vals[order[k - 1]]) / span
    return dist


def assign_rank_crowding(pop: list[Individual]):
    fronts = fast_nondominated_sort([ind.fitness for ind in pop])
    for rank, front in enumerate(fronts):
        dists = crowding_distance([pop[i].fitness for i in front])
        for i, d in zip(front, dists):
            pop[i].rank = rank
            pop[i].crowding = d
    return fronts


def tournament_select(pop: list[Individual], rng) -> int:
    """Binary tournament on (rank asc, crowding desc), coin flip on full tie."""
    i, j = rng.integers(0, len(pop), size=2)
    a, b = pop[i], pop[j]
    if a.rank != b.rank:
        return int(i if a.rank < b.rank else j)
    if a.crowding != b.crowding:
        return int(i if a.crowding > b.crowding else j)
    return int(i if rng.random() < 0.5 else j)


def _round_clamp(v: float) -> int:
    return int(min(max(math.floor(v + 0.5), GENE_MIN), GENE_MAX))


def sbx_crossover(p1, p2, cfg: SearchConfig, rng):
    """Per-gene simulated binary crossover, rounded and clamped to [2, 8]."""
    if rng.random() > cfg.crossover_probability:
        return tuple(p1), tuple(p2)
    eta = cfg.crossover_index
    c1, c2 = [], []
    for g1, g2 in zip(p1, p2):
        u = rng.random()
        if u <= 0.5:
            beta = (2.0 * u) ** (1.0 / (eta + 1.0))
        else:
            beta = (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0))
        c1.append(_round_clamp(0.5 * ((1 + beta) * g1 + (1 - beta) * g2)))
        c2.append(_round_clamp(0.5 * ((1 - beta) * g1 + (1 + beta) * g2)))
    return _apply_template(tuple(c1), cfg), _apply_template(tuple(c2), cfg)


def polynomial_mutation(genome, cfg: SearchConfig, rng):
    """Deb's polynomial mutation over the box [2, 8], rounded and clamped."""
    eta = cfg.mutation_index
    span = GENE_MAX - GENE_MIN
    out = []
    for g in genome:
        if rng.random() >= cfg.mutation_probability:
            out.append(g)
            continue
        u = rng.random()
        d1 = (g - GENE_MIN) / span
        d2 = (GENE_MAX - g) / span
        if u < 0.5:
            dq = (2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1) ** (eta + 1.0)) \
                ** (1.0 / (eta + 1.0)) - 1.0
        else:
            dq = 1.0 - (2.0 * (1.0 - u) + (2.0 * u - 1.0) * (1.0 - d2) ** (eta + 1.0)) \
                ** (1.0 / (eta + 1.0))
        out.append(_round_clamp(g + dq * span))
    return _apply_template(tuple(out), cfg)


def survival(candidates: list[Individual], population_size: int) -> list[Individual]:
    """Elitist fill by ascending front, splitting the last by crowding."""
    fronts = assign_rank_crowding(candidates)
    survivors: list[Individual] = []
    for front in fronts:
        if len(survivors) + len(front) <= population_size:
            survivors.extend(candidates[i] for i in front)
        else:
            rest = sorted(front, key=lambda i: -candidates[i].crowding)
            survivors.extend(candidates[i]
                             for i in rest[:population_size - len(survivors)])
            break
    return survivors


def pareto_front(points):
    """Non-dominated subset, stable order by accuracy descending."""
    keep = [p for p in points
            if not any(dominates(q, p) for q in points)]
    return sorted(keep, key=lambda p: (-p[0], -p[1]))


@dataclass
class SearchResult:
    archive: list[Individual] = field(default_factory=list)
    front: list[Individual] = field(default_factory=list)
    final_population: list[Individual] = field(default_factory=list)


def run_nsga2(cfg: SearchConfig, eval_fn, jobs: int = 1,
              on_evaluated=None) -> SearchResult:
    """Run the full search loop.

    eval_fn(genome) -> (accuracy, size_complement) must be a pure function
    of the genome. Every newly evaluated genome is appended to the archive
    (memoized duplicates collapse); `on_evaluated(individual)` is invoked
    per archive row, in deterministic order, for streaming export.
    """
    rng = np.random.default_rng(cfg.seed)
    cache: dict[tuple, tuple] = {}
    lock = threading.Lock()
    result = SearchResult()

    def evaluate_batch(genomes, generation):
        todo = []
        seen = set()
        for g in genomes:
            if g not in cache and g not in seen:
                seen.add(g)
                todo.append(g)

        def one(g):
            try:
                return eval_fn(g)
            except Exception:
                log.exception("evaluation failed for genome %s", g)
                return (0.0, 0.0)

        if jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                fits = list(pool.map(one, todo))
        else:
            fits = [one(g) for g in todo]
        with lock:
            for g, fit in zip(todo, fits):
                cache[g] = fit
        for index, (g, fit) in enumerate(zip(todo, fits)):
            ind = Individual(genome=g, fitness=fit, generation_born=generation)
            result.archive.append(ind)
            if on_evaluated is not None:
                on_evaluated(ind, index)

    pop = [Individual(genome=sample_genome(rng, cfg), generation_born=0)
           for _ in range(cfg.population_size)]
    evaluate_batch([ind.genome for ind in pop], 0)
    for ind in pop:
        ind.fitness = cache[ind.genome]
    assign_rank_crowding(pop)

    for generation in range(1, cfg.generations + 1):
        offspring: list[Individual] = []
        while len(offspring) < cfg.population_size:
            parent1 = pop[tournament_select(pop, rng)].genome
            parent2 = pop[tournament_select(pop, rng)].genome
            child1, child2 = sbx_crossover(parent1, parent2, cfg, rng)
            child1 = polynomial_mutation(child1, cfg, rng)
            child2 = polynomial_mutation(child2, cfg, rng)
            offspring.append(Individual(genome=child1, generation_born=generation))
            offspring.append(Individual(genome=child2, generation_born=generation))
        offspring = offspring[:cfg.population_size]

        evaluate_batch([ind.genome for ind in offspring], generation)
        for ind in offspring:
            ind.fitness = cache[ind.genome]
        pop = survival(pop + offspring, cfg.population_size)

    front_fits = pareto_front([ind.fitness for ind in pop])
    front = []
    taken = set()
    for fit in front_fits:
        for i, ind in enumerate(pop):
            if i not in taken and ind.fitness == fit:
                front.append(ind)
                taken.add(i)
                break
    result.front = front
    result.final_population = pop
    return result


# ---------------------------------------------------------------------------
# fitness evaluation against a trained model


@dataclass
class EvalContext:
    """Everything a genome evaluation needs: weights, stats, and data."""

    weights: object                 # GRUWeights
    stats: object                   # CalibrationStats
    val_X: np.ndarray
    val_y: np.ndarray
    finetune_mode: str = "ptq"
    qat_data: object = None         # SequenceDataset for QAT fine-tuning
    qat_config: object = None       # TrainConfig template for QAT
    seed: int = 42


def make_evaluator(ctx: EvalContext):
    """Build a memoizable eval_fn(genome) -> (accuracy, size_complement)."""
    from gruq import calib as calib_mod
    from gruq import qgru, refnet

    dims = ctx.weights.dims
    # the input grid depends only on stats and the fixed input bit-width,
    # so quantized validation inputs are shared across genomes
    input_cache = {}

    def eval_fn(genome):
        genome = tuple(genome)
        try:
            weights, stats = ctx.weights, ctx.stats
            if ctx.finetune_mode == "qat":
                eval_seed = _genome_seed(ctx.seed, genome)
                cfg = replace(ctx.qat_config, seed=eval_seed)
                weights = refnet.qat_finetune(weights, genome, ctx.qat_data, cfg)
                stats = calib_mod.calibrate(weights, ctx.qat_data.X,
                                            fraction=1.0, seed=ctx.seed)
            model = qgru.quantize_model(weights, stats, genome)
            key = (model.input_qp.scale, model.input_qp.zero_point)
            if key not in input_cache:
                input_cache[key] = model.quantize_input(ctx.val_X)
            preds = qgru.classify_batch(input_cache[key], model)
            accuracy = float(np.mean(preds == ctx.val_y))
        except Exception:
            log.exception("genome %s failed to evaluate", genome)
            accuracy = 0.0
        return accuracy, qgru.size_complement(genome, dims)

    return eval_fn


def _genome_seed(master_seed: int, genome) -> int:
    # stable across processes (no PYTHONHASHSEED dependence)
    seed = master_seed & 0x7FFFFFFF
    for g in genome:
        seed = (seed * 1000003 + int(g)) & 0x7FFFFFFF
    return seed
