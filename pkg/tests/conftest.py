import numpy as np
import pytest

from core.network import DIRICHLET, Material, Network, Node, cross_network, make_edge


@pytest.fixture(autouse=True)
def _quiet_environment(monkeypatch):
    monkeypatch.setenv("HDG_LOG_FILE", "")
    for name in ("HDG_THREADS", "HDG_TOL", "HDG_MAXIT", "HDG_GRID", "HDG_OUTPUT_DIR"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cross():
    return cross_network()


def segment(p0=(0.0, 0.0, 0.0), p1=(1.0, 0.0, 0.0), material=Material(), force=None, moment=None,
            dirichlet_u=None, dirichlet_r=None) -> Network:
    """Two-node network: node 0 clamped (zero data unless given), node 1 free with optional point loads."""
    nodes = [
        Node(id=0, position=np.array(p0, dtype=float), kind=DIRICHLET,
             dirichlet_u=np.zeros(3) if dirichlet_u is None else np.asarray(dirichlet_u, float),
             dirichlet_r=np.zeros(3) if dirichlet_r is None else np.asarray(dirichlet_r, float)),
        Node(id=1, position=np.array(p1, dtype=float),
             force=np.zeros(3) if force is None else np.asarray(force, float),
             moment=np.zeros(3) if moment is None else np.asarray(moment, float)),
    ]
    return Network(nodes, [make_edge(0, nodes, 0, 1, material)])


def random_material(rng) -> Material:
    values = rng.uniform(0.5, 2.0, 6)
    return Material(EA=values[0], kGA2=values[1], kGA3=values[2], GIt=values[3], EI2=values[4], EI3=values[5])


def random_network(rng, num_nodes: int = 20, extra_edges: int = 6, num_dirichlet: int = 1,
                   loaded: bool = False) -> Network:
    """Random spanning tree plus extra edges in the unit cube; the first nodes are clamped."""
    positions = rng.uniform(0.0, 1.0, (num_nodes, 3))
    nodes = []
    for i, p in enumerate(positions):
        if i < num_dirichlet:
            nodes.append(Node(id=i, position=p, kind=DIRICHLET, dirichlet_u=rng.normal(size=3),
                              dirichlet_r=rng.normal(size=3)))
        elif loaded:
            nodes.append(Node(id=i, position=p, force=rng.normal(size=3), moment=rng.normal(size=3)))
        else:
            nodes.append(Node(id=i, position=p))
    pairs = {(int(rng.integers(0, i)), i) for i in range(1, num_nodes)}
    while len(pairs) < num_nodes - 1 + extra_edges:
        a, b = sorted(int(v) for v in rng.choice(num_nodes, 2, replace=False))
        pairs.add((a, b))
    edges = [make_edge(k, nodes, a, b, random_material(rng)) for k, (a, b) in enumerate(sorted(pairs))]
    return Network(nodes, edges)


def random_edge(rng, edge_id: int = 0):
    """Random single edge with length in [0.2, 2] and random material."""
    p0 = rng.uniform(-1.0, 1.0, 3)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    p1 = p0 + rng.uniform(0.2, 2.0) * direction
    nodes = [Node(id=0, position=p0), Node(id=1, position=p1)]
    return make_edge(edge_id, nodes, 0, 1, random_material(rng), hint_j=rng.normal(size=3))
