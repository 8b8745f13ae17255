"""NSGA-II over pipeline genomes: evaluation, sorting, crowding, selection, survival."""
from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import imagecore
from .genome import (
    Genome,
    decode,
    edge_recombination,
    inversion_mutation,
    node_set,
    pipeline_key,
    random_genome,
)
from .metrics import dists, style_distance
from .operators import BUILTIN, OperatorError, PluginRunner, PluginSpec, StyleContext, apply_pipeline

log = logging.getLogger(__name__)

INFEASIBLE = (1.0, 1.0)
HV_REFERENCE = (1.05, 1.05)
UNIQUE_ATTEMPTS = 50


class ConfigurationError(ValueError):
    pass


@dataclass
class Individual:
    genome: Genome
    objectives: Optional[tuple[float, float]] = None
    feasible: bool = True
    rank: Optional[int] = None
    crowding: Optional[float] = None
    error: Optional[str] = None

    @property
    def pipeline(self) -> tuple[str, ...]:
        return decode(self.genome)

    @property
    def key(self) -> str:
        return pipeline_key(self.pipeline)


@dataclass(frozen=True)
class Sample:
    """One content image paired with the style context of its condition."""

    content: np.ndarray
    context: StyleContext


@dataclass
class RunConfig:
    seed: int = 0
    population_size: int = 20
    offspring_size: int = 20
    generations: int = 20
    operators: tuple[str, ...] = BUILTIN
    content: list[str] = field(default_factory=list)
    styles: list[tuple[str, str]] = field(default_factory=list)  # (condition label, path)
    masks: list[str] = field(default_factory=list)
    style_masks: list[str] = field(default_factory=list)
    pyramid_levels: int = 4
    plugins: dict[str, PluginSpec] = field(default_factory=dict)
    out_dir: str = "out"
    resolution: Optional[tuple[int, int]] = None  # (width, height)
    workers: int = 1

    def validate(self, need_files: bool = True) -> None:
        if self.population_size < 2:
            raise ConfigurationError("population_size must be >= 2")
        if self.offspring_size < 1:
            raise ConfigurationError("offspring_size must be >= 1")
        if self.generations < 0:
            raise ConfigurationError("generations must be >= 0")
        if self.pyramid_levels < 1:
            raise ConfigurationError("pyramid_levels must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if not self.operators:
            raise ConfigurationError("operators must list at least one operator")
        for op in self.operators:
            if op not in BUILTIN and op not in self.plugins:
                raise ConfigurationError(f"unknown operator {op!r} (not built in, no plugin.{op} entry)")
        try:
            node_set(self.operators)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        if need_files:
            if not self.content:
                raise ConfigurationError("at least one content image is required")
            if len(self.styles) != len(self.content):
                raise ConfigurationError(
                    f"{len(self.content)} content images but {len(self.styles)} styles; "
                    "content i is paired with style i"
                )
            for key in ("masks", "style_masks"):
                paths = getattr(self, key)
                if paths and len(paths) != len(self.content):
                    raise ConfigurationError(f"{key} must list one file per content image")

    def pairing(self) -> list[dict]:
        rows = []
        for i, (path, (label, style)) in enumerate(zip(self.content, self.styles)):
            rows.append(
                {
                    "content": path,
                    "condition": label,
                    "style": style,
                    "mask": self.masks[i] if self.masks else None,
                    "style_mask": self.style_masks[i] if self.style_masks else None,
                }
            )
        return rows


def load_samples(cfg: RunConfig) -> list[Sample]:
    """Read content/style/mask files named by ``cfg`` (resized when configured)."""
    samples = []
    for row in cfg.pairing():
        content = imagecore.read_image(row["content"])
        style = imagecore.read_image(row["style"])
        mask = imagecore.read_mask(row["mask"]) if row["mask"] else None
        smask = imagecore.read_mask(row["style_mask"]) if row["style_mask"] else None
        if cfg.resolution is not None:
            w, h = cfg.resolution
            content = imagecore.resize(content, w, h)
            style = imagecore.resize(style, w, h)
            mask = imagecore.resize_mask(mask, w, h) if mask is not None else None
            smask = imagecore.resize_mask(smask, w, h) if smask is not None else None
        if mask is not None and mask.shape != content.shape[:2]:
            raise ConfigurationError(f"mask {row['mask']} does not match {row['content']}")
        if smask is not None and smask.shape != style.shape[:2]:
            raise ConfigurationError(f"style mask {row['style_mask']} does not match {row['style']}")
        ctx = StyleContext(style, style_mask=smask, content_mask=mask, condition_name=row["condition"])
        samples.append(Sample(content, ctx))
    return samples


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Evaluation:
    objectives: tuple[float, float]
    feasible: bool
    error: Optional[str] = None


class FitnessCache:
    """Phenotype-keyed cache shared between evaluation threads."""

    def __init__(self):
        self._data: dict[str, Evaluation] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> Optional[Evaluation]:
        with self._lock:
            value = self._data.get(key)
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
            return value

    def put(self, key: str, value: Evaluation) -> Evaluation:
        with self._lock:
            existing = self._data.setdefault(key, value)
        if existing != value:
            raise RuntimeError(f"divergent fitness for pipeline {key!r}")
        return existing

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: str) -> bool:
        return key in self._data


def evaluate_pipeline(
    pipeline: Sequence[str],
    samples: Sequence[Sample],
    levels: int = 4,
    plugins: Optional[PluginRunner] = None,
) -> Evaluation:
    content_total = style_total = 0.0
    try:
        for sample in samples:
            out = apply_pipeline(pipeline, sample.content, sample.context, plugins)
            content_total += dists(sample.content, out, levels)
            style_total += style_distance(out, sample.context.style_image, levels)
    except OperatorError as exc:
        return Evaluation(INFEASIBLE, False, str(exc))
    n = len(samples)
    return Evaluation((content_total / n, style_total / n), True)


def evaluate(
    genome: Genome,
    samples: Sequence[Sample],
    cache: Optional[FitnessCache] = None,
    levels: int = 4,
    plugins: Optional[PluginRunner] = None,
) -> Evaluation:
    """Objectives of ``genome``; cached under its decoded pipeline."""
    pipeline = decode(genome)
    key = pipeline_key(pipeline)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    result = evaluate_pipeline(pipeline, samples, levels, plugins)
    if not result.feasible:
        log.warning("pipeline %r infeasible: %s", key, result.error)
    return cache.put(key, result) if cache is not None else result


# --------------------------------------------------------------------------
# Dominance, sorting, crowding
# --------------------------------------------------------------------------

def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True when ``a`` is no worse than ``b`` everywhere and better somewhere (minimisation)."""
    better = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            better = True
    return better


def _beats(a: Individual, b: Individual) -> bool:
    if a.feasible != b.feasible:
        return a.feasible
    return dominates(a.objectives, b.objectives)


def fast_non_dominated_sort(pop: Sequence[Individual]) -> list[list[int]]:
    """Partition ``pop`` into fronts of indices; ranks are written back."""
    for ind in pop:
        if ind.objectives is None:
            raise ValueError("cannot sort an unevaluated individual")
    n = len(pop)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    counts = [0] * n
    for p in range(n):
        for q in range(p + 1, n):
            if _beats(pop[p], pop[q]):
                dominated_by[p].append(q)
                counts[q] += 1
            elif _beats(pop[q], pop[p]):
                dominated_by[q].append(p)
                counts[p] += 1
    fronts = [[i for i in range(n) if counts[i] == 0]]
    while fronts[-1]:
        nxt = []
        for p in fronts[-1]:
            for q in dominated_by[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    nxt.append(q)
        fronts.append(sorted(nxt))
    fronts.pop()
    for rank, front in enumerate(fronts):
        for i in front:
            pop[i].rank = rank
    return fronts


def crowding_distance(front: Sequence[Individual]) -> list[float]:
    """Crowding distance per member of ``front``; also written to each individual."""
    n = len(front)
    dist = [0.0] * n
    if n <= 2:
        dist = [math.inf] * n
    else:
        for m in range(len(front[0].objectives)):
            order = sorted(range(n), key=lambda i: front[i].objectives[m])
            lo = front[order[0]].objectives[m]
            hi = front[order[-1]].objectives[m]
            dist[order[0]] = dist[order[-1]] = math.inf
            if hi == lo:
                continue
            for k in range(1, n - 1):
                i = order[k]
                if dist[i] != math.inf:
                    gap = front[order[k + 1]].objectives[m] - front[order[k - 1]].objectives[m]
                    dist[i] += gap / (hi - lo)
    for ind, d in zip(front, dist):
        ind.crowding = d
    return dist


def rank_population(pop: Sequence[Individual]) -> list[list[int]]:
    fronts = fast_non_dominated_sort(pop)
    for front in fronts:
        crowding_distance([pop[i] for i in front])
    return fronts


def _crowded_better(a: Individual, b: Individual) -> Optional[bool]:
    if a.rank != b.rank:
        return a.rank < b.rank
    if a.crowding != b.crowding:
        return a.crowding > b.crowding
    return None


def tournament(pop: Sequence[Individual], rng: np.random.Generator) -> Individual:
    i, j = rng.choice(len(pop), size=2, replace=False)
    a, b = pop[int(i)], pop[int(j)]
    verdict = _crowded_better(a, b)
    if verdict is None:
        verdict = bool(rng.random() < 0.5)
    return a if verdict else b


def select_parents(pop: Sequence[Individual], rng: np.random.Generator) -> tuple[Individual, Individual]:
    """Two independent crowded binary tournaments."""
    return tournament(pop, rng), tournament(pop, rng)


def survive(pool: Sequence[Individual], size: int) -> list[Individual]:
    """Elitist NSGA-II survival of ``size`` individuals from ``pool``."""
    fronts = rank_population(pool)
    chosen: list[Individual] = []
    for front in fronts:
        members = [pool[i] for i in front]
        if len(chosen) + len(members) <= size:
            chosen.extend(members)
            continue
        # stable sort keeps index order among equal crowding
        members.sort(key=lambda ind: -ind.crowding)
        chosen.extend(members[: size - len(chosen)])
        break
    return chosen


def hypervolume(points: Sequence[Sequence[float]], reference: Sequence[float] = HV_REFERENCE) -> float:
    """Area dominated by ``points`` and bounded by ``reference`` (two objectives)."""
    pts = sorted((float(x), float(y)) for x, y in points if x < reference[0] and y < reference[1])
    area, prev_y = 0.0, float(reference[1])
    for x, y in pts:
        if y < prev_y:
            area += (reference[0] - x) * (prev_y - y)
            prev_y = y
    return area


def non_dominated(points: Sequence[Sequence[float]]) -> list[tuple[float, float]]:
    uniq = sorted(set((float(p[0]), float(p[1])) for p in points))
    return [p for p in uniq if not any(dominates(q, p) for q in uniq)]


# --------------------------------------------------------------------------
# Generation loop
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    rows: tuple[tuple[str, float, float, int], ...]  # (pipeline, dists, style, rank)

    def front_points(self) -> list[tuple[float, float]]:
        return [(d, s) for _, d, s, r in self.rows if r == 0]


@dataclass
class RunResult:
    population: list[Individual]
    records: list[GenerationRecord]
    front: list[Individual]
    cache: FitnessCache


class Engine:
    """Holds everything one optimisation run needs; ``run`` drives it."""

    def __init__(
        self,
        cfg: RunConfig,
        samples: Optional[Sequence[Sample]] = None,
        cache: Optional[FitnessCache] = None,
    ):
        cfg.validate(need_files=samples is None)
        self.cfg = cfg
        self.samples = list(samples) if samples is not None else load_samples(cfg)
        if not self.samples:
            raise ConfigurationError("at least one content/style pair is required")
        self.nodes = node_set(cfg.operators)
        self.cache = cache if cache is not None else FitnessCache()
        self.plugins = PluginRunner(dict(cfg.plugins), max_procs=cfg.workers)
        self.rng = np.random.default_rng(cfg.seed)

    def evaluate(self, genomes: Sequence[Genome]) -> list[Individual]:
        def one(g: Genome) -> Individual:
            ev = evaluate(g, self.samples, self.cache, self.cfg.pyramid_levels, self.plugins)
            return Individual(g, ev.objectives, ev.feasible, error=ev.error)

        if self.cfg.workers > 1 and len(genomes) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(one, genomes))  # map preserves input order
        return [one(g) for g in genomes]

    def initial_population(self) -> list[Individual]:
        genomes: list[Genome] = []
        seen: set[tuple[str, ...]] = set()
        for _ in range(self.cfg.population_size):
            for _attempt in range(UNIQUE_ATTEMPTS):
                g = random_genome(self.nodes, self.rng)
                if decode(g) not in seen:
                    break
            seen.add(decode(g))
            genomes.append(g)
        pop = self.evaluate(genomes)
        rank_population(pop)
        return pop

    def make_offspring(self, pop: Sequence[Individual]) -> list[Individual]:
        return make_offspring(pop, self.cfg.offspring_size, self.rng, self.evaluate)

    def record(self, generation: int, pop: Sequence[Individual]) -> GenerationRecord:
        rows = tuple((ind.key, ind.objectives[0], ind.objectives[1], ind.rank) for ind in pop)
        return GenerationRecord(generation, rows)

    def run(self) -> RunResult:
        pop = self.initial_population()
        records = [self.record(0, pop)]
        for gen in range(1, self.cfg.generations + 1):
            offspring = self.make_offspring(pop)
            pop = survive(list(pop) + offspring, self.cfg.population_size)
            rank_population(pop)
            records.append(self.record(gen, pop))
            log.info("generation %d: %d on front, %d cached pipelines", gen,
                     sum(1 for ind in pop if ind.rank == 0), len(self.cache))
        return RunResult(pop, records, pareto_front(pop), self.cache)


def make_offspring(pop, count: int, rng: np.random.Generator, evaluate_batch) -> list[Individual]:
    """Crossover + mutation until ``count`` genomes distinct from parents and siblings."""
    seen = {decode(ind.genome) for ind in pop}
    genomes: list[Genome] = []
    for _ in range(count):
        for _attempt in range(UNIQUE_ATTEMPTS):
            a, b = select_parents(pop, rng)
            child = inversion_mutation(edge_recombination(a.genome, b.genome, rng), rng)
            if decode(child) not in seen:
                break
        seen.add(decode(child))
        genomes.append(child)
    return evaluate_batch(genomes)


def pareto_front(pop: Sequence[Individual]) -> list[Individual]:
    """Feasible rank-0 members, one per pipeline, sorted by content distance."""
    front, keys = [], set()
    for ind in sorted(pop, key=lambda i: (i.objectives[0], i.objectives[1], i.key)):
        if ind.rank == 0 and ind.feasible and ind.key not in keys:
            keys.add(ind.key)
            front.append(ind)
    return front


def run(
    cfg: RunConfig,
    samples: Optional[Sequence[Sample]] = None,
    cache: Optional[FitnessCache] = None,
) -> RunResult:
    return Engine(cfg, samples, cache).run()
