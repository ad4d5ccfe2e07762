import numpy as np
import pytest
from hypothesis import strategies as st

from cascl.graph import Adoption, CascadeGraph, build_graph


def tree(parents, times=None, id="t", pub_time=0.0) -> CascadeGraph:
    """Graph from a parent-index list (node 0 is the root, parents[0] = -1)."""
    n = len(parents)
    if times is None:
        times = np.arange(n, dtype=float)
    names = [f"n{k}" for k in range(n)]
    return build_graph(
        [Adoption(names[k], float(times[k]), names[p] if p >= 0 else None) for k, p in enumerate(parents)],
        id=id, pub_time=pub_time,
    )


def random_tree(rng: np.random.Generator, n: int, id: str = "r", t_max: float = 1.0) -> CascadeGraph:
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.0, t_max, n - 1))])
    parents = [-1] + [int(rng.integers(k)) for k in range(1, n)]
    return tree(parents, times, id=id)


@st.composite
def cascades(draw, min_nodes=1, max_nodes=30):
    n = draw(st.integers(min_nodes, max_nodes))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_tree(np.random.default_rng(seed), n, id=f"h{seed}")


@pytest.fixture
def path3():
    return tree([-1, 0, 1])


@pytest.fixture
def star3():
    return tree([-1, 0, 0, 0])


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
