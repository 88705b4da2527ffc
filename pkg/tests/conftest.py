import itertools

import numpy as np
import pytest

from curvlab.space import from_weights, two_point_space

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one verdict line per acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number: int, passed: bool, text: str):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {text}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)


def connected_graphs(n: int):
    """All connected simple graphs on ``n`` vertices, one per isomorphism class.

    Yields edge lists.  Canonical forms are the smallest edge bitmask over
    all vertex relabellings.
    """
    pairs = list(itertools.combinations(range(n), 2))
    index = {p: i for i, p in enumerate(pairs)}
    E = len(pairs)
    masks = np.arange(1 << E, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(E)) & 1
    canon = masks.copy()
    for perm in itertools.permutations(range(n)):
        target = np.array([index[tuple(sorted((perm[a], perm[b])))] for a, b in pairs])
        image = (bits << target).sum(axis=1)
        np.minimum(canon, image, out=canon)
    for mask in np.unique(canon):
        edges = [pairs[k] for k in range(E) if (mask >> k) & 1]
        if _connected(n, edges):
            yield edges


def _connected(n, edges):
    seen, stack = {0}, [0]
    adj = {i: set() for i in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    while stack:
        for y in adj[stack.pop()]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == n


def graph_space(n, edges):
    if n == 2:
        return two_point_space()
    w = np.zeros((n, n))
    for a, b in edges:
        w[a, b] = w[b, a] = 1.0
    return from_weights(w, name=f"graph-{n}-{len(edges)}")


def random_density(rng, n, floor=0.05):
    return rng.random(n) + floor
