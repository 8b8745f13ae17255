"""Permutation genomes with a stop node, and their variation operators.

A genome is a tuple holding every configured operator name plus ``"stop"``
exactly once. Only the prefix before ``"stop"`` is executed.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .operators import STOP

Genome = tuple[str, ...]
Pipeline = tuple[str, ...]


class GenomeError(ValueError):
    pass


def node_set(operators: Iterable[str]) -> tuple[str, ...]:
    ops = tuple(operators)
    if STOP in ops:
        raise GenomeError("the operator set must not contain the stop node")
    if len(set(ops)) != len(ops):
        raise GenomeError(f"duplicate operators in {ops}")
    return ops + (STOP,)


def validate(genome: Sequence[str], nodes: Sequence[str] | None = None) -> None:
    if len(set(genome)) != len(genome):
        raise GenomeError(f"genome repeats a node: {genome}")
    if STOP not in genome:
        raise GenomeError(f"genome lacks the stop node: {genome}")
    if nodes is not None and set(genome) != set(nodes):
        raise GenomeError(f"genome {genome} is not a permutation of {tuple(nodes)}")


def random_genome(nodes: Sequence[str], rng: np.random.Generator) -> Genome:
    """Uniform random permutation of ``nodes`` (Fisher-Yates)."""
    order = list(nodes)
    for i in range(len(order) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return tuple(order)


def decode(genome: Sequence[str]) -> Pipeline:
    genome = tuple(genome)
    return genome[: genome.index(STOP)]


def pipeline_key(pipeline: Sequence[str]) -> str:
    return ",".join(pipeline)


def parse_pipeline(text: str) -> Pipeline:
    """Inverse of :func:`pipeline_key`; a trailing ``stop`` is accepted and dropped."""
    steps = [s.strip().lower() for s in text.split(",") if s.strip()]
    if steps and steps[-1] == STOP:
        steps.pop()
    if STOP in steps:
        raise GenomeError("stop may only appear at the end of a pipeline")
    if len(set(steps)) != len(steps):
        raise GenomeError(f"pipeline repeats an operator: {text!r}")
    return tuple(steps)


def count_pipelines(n_ops: int) -> int:
    """Number of distinct decoded pipelines over ``n_ops`` operators."""
    total, term = 0, 1
    for k in range(n_ops + 1):
        total += term
        term *= n_ops - k
    return total


def _adjacency(parents: Sequence[Genome]) -> dict[str, list[str]]:
    # ordered lists keep rng choices reproducible
    table: dict[str, list[str]] = {node: [] for node in parents[0]}
    for parent in parents:
        m = len(parent)
        for i, node in enumerate(parent):
            for nb in (parent[i - 1], parent[(i + 1) % m]):
                if nb != node and nb not in table[node]:
                    table[node].append(nb)
    return table


def edge_recombination(a: Sequence[str], b: Sequence[str], rng: np.random.Generator) -> Genome:
    """Edge recombination crossover treating both parents as cycles."""
    a, b = tuple(a), tuple(b)
    if set(a) != set(b) or len(a) != len(b):
        raise GenomeError("parents are permutations of different node sets")
    table = _adjacency([a, b])
    remaining = list(a)
    child: list[str] = []
    current = a[0]
    while True:
        child.append(current)
        remaining.remove(current)
        for nbs in table.values():
            if current in nbs:
                nbs.remove(current)
        if not remaining:
            break
        candidates = table[current]
        if candidates:
            fewest = min(len(table[c]) for c in candidates)
            pool = [c for c in candidates if len(table[c]) == fewest]
        else:
            pool = remaining
        current = pool[int(rng.integers(len(pool)))] if len(pool) > 1 else pool[0]
    return tuple(child)


def invert(genome: Sequence[str], i: int, j: int) -> Genome:
    """Reverse ``genome[i..j]`` inclusive."""
    g = list(genome)
    if not 0 <= i <= j < len(g):
        raise IndexError(f"invalid inversion bounds ({i}, {j}) for length {len(g)}")
    g[i : j + 1] = g[i : j + 1][::-1]
    return tuple(g)


def inversion_mutation(genome: Sequence[str], rng: np.random.Generator) -> Genome:
    """Reverse a segment whose bounds (i <= j) are drawn uniformly over all pairs."""
    m = len(genome)
    k = int(rng.integers(m * (m + 1) // 2))
    # unrank k into the pair (i, j), rows i = 0..m-1 holding m - i pairs each
    i = 0
    while k >= m - i:
        k -= m - i
        i += 1
    return invert(genome, i, i + k)
