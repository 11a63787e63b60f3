"""Beam network data model: nodes, edges, frames, file ingestion, refinement and graph operators."""
import json
import logging
import math
import re
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.sparse.linalg import splu

from core.errors import ConvergenceError, FrameError, NetworkParseError, NetworkValidationError

logger = logging.getLogger(__name__)

FREE = "free"
DIRICHLET = "dirichlet"

ORTHONORMAL_TOL = 1e-12

# x -> (diag of local C_n, diag of local C_m), arc length measured from the edge's first node
CoefficientCallback = Callable[[float], Tuple[np.ndarray, np.ndarray]]


class Material(BaseModel):
    """Edgewise constant local moduli: C_n = diag(EA, kGA2, kGA3), C_m = diag(GIt, EI2, EI3)."""

    model_config = ConfigDict(frozen=True)

    EA: float = 1.0
    kGA2: float = 1.0
    kGA3: float = 1.0
    GIt: float = 1.0
    EI2: float = 1.0
    EI3: float = 1.0

    @property
    def c_n(self) -> np.ndarray:
        return np.array([self.EA, self.kGA2, self.kGA3])

    @property
    def c_m(self) -> np.ndarray:
        return np.array([self.GIt, self.EI2, self.EI3])

    def scaled(self, factor: float) -> "Material":
        return Material(**{k: v * factor for k, v in self.model_dump().items()})

    def is_positive(self) -> bool:
        return all(v > 0.0 for v in self.model_dump().values())


# ---------------------------------------------------------------------------
# File schema
# ---------------------------------------------------------------------------

class DirichletRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    u: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    r: Tuple[float, float, float] = (0.0, 0.0, 0.0)


class NodeRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pos: Tuple[float, float, float]
    dirichlet: Optional[DirichletRecord] = None
    force: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    moment: Tuple[float, float, float] = (0.0, 0.0, 0.0)


class EdgeRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nodes: Tuple[int, int]
    material: Material = Material()
    frame_j: Optional[Tuple[float, float, float]] = None


class NetworkFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nodes: List[NodeRecord]
    edges: List[EdgeRecord]


# ---------------------------------------------------------------------------
# Runtime types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Node:
    id: int
    position: np.ndarray
    kind: str = FREE
    dirichlet_u: Optional[np.ndarray] = None
    dirichlet_r: Optional[np.ndarray] = None
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    moment: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def is_dirichlet(self) -> bool:
        return self.kind == DIRICHLET

    @property
    def prescribed(self) -> np.ndarray:
        """Prescribed 6-vector (u^D, r^D); zero for free nodes."""
        if not self.is_dirichlet:
            return np.zeros(6)
        return np.concatenate([self.dirichlet_u, self.dirichlet_r])


@dataclass(frozen=True, eq=False)
class Edge:
    id: int
    nodes: Tuple[int, int]
    length: float
    frame: np.ndarray
    material: Material = Material()
    coefficients: Optional[CoefficientCallback] = None
    frame_hint: Optional[np.ndarray] = None

    @property
    def tangent(self) -> np.ndarray:
        return self.frame[:, 0]

    @property
    def is_constant(self) -> bool:
        return self.coefficients is None

    def local_coefficients(self, x: float) -> Tuple[np.ndarray, np.ndarray]:
        """Diagonals of the local C_n, C_m at arc length x."""
        if self.coefficients is None:
            return self.material.c_n, self.material.c_m
        c_n, c_m = self.coefficients(x)
        return np.asarray(c_n, dtype=float), np.asarray(c_m, dtype=float)

    def global_coefficients(self) -> Tuple[np.ndarray, np.ndarray]:
        """Global C_n = T diag T^T and C_m for constant materials."""
        t = self.frame
        return (t @ np.diag(self.material.c_n) @ t.T, t @ np.diag(self.material.c_m) @ t.T)


class Network:
    """Immutable beam network; validated on construction."""

    def __init__(self, nodes: Sequence[Node], edges: Sequence[Edge], validate: bool = True):
        self.nodes: List[Node] = list(nodes)
        self.edges: List[Edge] = list(edges)
        self.adjacency: Dict[int, List[Tuple[int, int]]] = {n.id: [] for n in self.nodes}
        for edge in self.edges:
            k, l = edge.nodes
            if k in self.adjacency:
                self.adjacency[k].append((edge.id, -1))
            if l in self.adjacency and l != k:
                self.adjacency[l].append((edge.id, +1))
        if validate:
            self.validate()

    # -- queries -----------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes], dtype=float).reshape(-1, 3)

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return np.array([n.is_dirichlet for n in self.nodes], dtype=bool)

    @property
    def free_nodes(self) -> List[int]:
        return [n.id for n in self.nodes if not n.is_dirichlet]

    @property
    def dirichlet_nodes(self) -> List[int]:
        return [n.id for n in self.nodes if n.is_dirichlet]

    @property
    def h_max(self) -> float:
        return max(e.length for e in self.edges)

    @property
    def h_min(self) -> float:
        return min(e.length for e in self.edges)

    def normal(self, edge: Edge, node_id: int) -> int:
        """nu_e(n): -1 at the first endpoint, +1 at the second."""
        if node_id == edge.nodes[0]:
            return -1
        if node_id == edge.nodes[1]:
            return 1
        raise KeyError(f"node {node_id} is not an endpoint of edge {edge.id}")

    def unreachable_nodes(self) -> List[int]:
        """Nodes not reached by BFS from node 0."""
        if not self.nodes:
            return []
        seen = {0}
        queue = deque([0])
        while queue:
            current = queue.popleft()
            for edge_id, _ in self.adjacency[current]:
                for nb in self.edges[edge_id].nodes:
                    if nb not in seen:
                        seen.add(nb)
                        queue.append(nb)
        return [n.id for n in self.nodes if n.id not in seen]

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        if not self.nodes:
            raise NetworkValidationError("network", "no nodes")
        if not self.edges:
            raise NetworkValidationError("network", "no edges")
        for index, node in enumerate(self.nodes):
            if node.id != index:
                raise NetworkValidationError(f"node {node.id}", f"ids must be contiguous, expected {index}")
        for index, edge in enumerate(self.edges):
            if edge.id != index:
                raise NetworkValidationError(f"edge {edge.id}", f"ids must be contiguous, expected {index}")
            k, l = edge.nodes
            if k == l:
                raise NetworkValidationError(f"edge {edge.id}", f"self-loop at node {k}")
            if not (0 <= k < self.num_nodes and 0 <= l < self.num_nodes):
                raise NetworkValidationError(f"edge {edge.id}", f"endpoint out of range ({k}, {l})")
            if k > l:
                raise NetworkValidationError(f"edge {edge.id}", f"endpoints must be ordered, got ({k}, {l})")
            if not edge.length > 0.0:
                raise NetworkValidationError(f"edge {edge.id}", "nonpositive length")
            if not edge.material.is_positive():
                raise NetworkValidationError(f"edge {edge.id}", f"nonpositive material {edge.material.model_dump()}")
            t = edge.frame
            if (np.abs(t.T @ t - np.eye(3)).max() > ORTHONORMAL_TOL * 10
                    or abs(np.linalg.det(t) - 1.0) > ORTHONORMAL_TOL * 10):
                raise FrameError(f"edge {edge.id}", "frame is not orthonormal and right-handed")
        missing = self.unreachable_nodes()
        if missing:
            raise NetworkValidationError(f"node {missing[0]}", "unreachable: network is not connected")
        if not self.dirichlet_nodes:
            raise NetworkValidationError("network", "at least one Dirichlet node is required")

    # -- derived networks --------------------------------------------------

    def with_dirichlet(self, data: Dict[int, Tuple[np.ndarray, np.ndarray]]) -> "Network":
        """Copy with new Dirichlet data (u, r) for the listed nodes."""
        nodes = list(self.nodes)
        for node_id, (u, r) in data.items():
            nodes[node_id] = replace(nodes[node_id], kind=DIRICHLET,
                                     dirichlet_u=np.asarray(u, float), dirichlet_r=np.asarray(r, float),
                                     force=np.zeros(3), moment=np.zeros(3))
        return Network(nodes, self.edges)

    def with_loads(self, loads: Dict[int, Tuple[np.ndarray, np.ndarray]]) -> "Network":
        """Copy with new point force/moment for the listed free nodes."""
        nodes = list(self.nodes)
        for node_id, (f, g) in loads.items():
            if nodes[node_id].is_dirichlet:
                raise NetworkValidationError(f"node {node_id}", "point loads apply to free nodes only")
            nodes[node_id] = replace(nodes[node_id], force=np.asarray(f, float), moment=np.asarray(g, float))
        return Network(nodes, self.edges)

    def with_material(self, factor: float) -> "Network":
        """Copy with every material scaled by `factor`."""
        edges = [replace(e, material=e.material.scaled(factor)) for e in self.edges]
        return Network(self.nodes, edges)

    def to_dict(self) -> dict:
        nodes = []
        for node in self.nodes:
            record = {"pos": node.position.tolist()}
            if node.is_dirichlet:
                record["dirichlet"] = {"u": node.dirichlet_u.tolist(), "r": node.dirichlet_r.tolist()}
            else:
                if np.any(node.force):
                    record["force"] = node.force.tolist()
                if np.any(node.moment):
                    record["moment"] = node.moment.tolist()
            nodes.append(record)
        edges = []
        for edge in self.edges:
            record = {"nodes": list(edge.nodes), "material": edge.material.model_dump(),
                      "frame_j": edge.frame[:, 1].tolist()}
            edges.append(record)
        return {"nodes": nodes, "edges": edges}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        connected = "connected" if not self.unreachable_nodes() else "disconnected"
        return (f"{self.num_nodes} nodes, {self.num_edges} edges, {connected}, "
                f"{len(self.dirichlet_nodes)} Dirichlet")


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def build_frame(p_k, p_l, hint_j=None) -> np.ndarray:
    """Orthonormal right-handed frame (i_e, j_e, k_e) with i_e pointing from p_k to p_l."""
    p_k = np.asarray(p_k, dtype=float)
    p_l = np.asarray(p_l, dtype=float)
    d = p_l - p_k
    length = np.linalg.norm(d)
    if length <= 0.0:
        raise FrameError("edge", f"coincident endpoints at {p_k.tolist()}")
    i_e = d / length
    if hint_j is not None:
        hint = np.asarray(hint_j, dtype=float)
        j = hint - np.dot(hint, i_e) * i_e
        if np.linalg.norm(j) <= 1e-12 * max(np.linalg.norm(hint), 1e-300):
            raise FrameError("edge", f"frame hint {hint.tolist()} is parallel to the tangent")
    else:
        axis = np.zeros(3)
        axis[int(np.argmin(np.abs(i_e)))] = 1.0
        j = axis - np.dot(axis, i_e) * i_e
    j_e = j / np.linalg.norm(j)
    k_e = np.cross(i_e, j_e)
    return np.column_stack([i_e, j_e, k_e])


def make_edge(edge_id: int, nodes: Sequence[Node], k: int, l: int, material: Material = Material(),
              hint_j=None, coefficients: Optional[CoefficientCallback] = None) -> Edge:
    """Edge between node ids k and l, normalized so the smaller id comes first."""
    if k > l:
        k, l = l, k
    p_k, p_l = nodes[k].position, nodes[l].position
    try:
        frame = build_frame(p_k, p_l, hint_j)
    except FrameError as e:
        raise FrameError(f"edge {edge_id}", str(e).split(": ", 1)[-1]) from e
    hint = None if hint_j is None else np.asarray(hint_j, dtype=float)
    return Edge(id=edge_id, nodes=(k, l), length=float(np.linalg.norm(p_l - p_k)), frame=frame,
                material=material, coefficients=coefficients, frame_hint=hint)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _field_path(loc) -> str:
    path = ""
    for part in loc:
        path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else str(part))
    return path


_WHITESPACE = re.compile(r"[ \t\n\r]*")


def _source_line(text: str, loc) -> Optional[int]:
    """Line of the JSON value at `loc`, or of the innermost enclosing value that exists."""
    decoder = json.JSONDecoder()

    def skip(pos: int) -> int:
        return _WHITESPACE.match(text, pos).end()

    pos = skip(0)
    try:
        for index, part in enumerate(loc):
            opener = text[pos]
            if opener == "{" and isinstance(part, str):
                cursor = skip(pos + 1)
                found = None
                while text[cursor] != "}":
                    key, end = decoder.raw_decode(text, cursor)
                    value = skip(skip(end) + 1)
                    if key == part:
                        found = cursor
                        break
                    _, end = decoder.raw_decode(text, value)
                    cursor = skip(end)
                    if text[cursor] == ",":
                        cursor = skip(cursor + 1)
                if found is None:
                    break
                pos = found if index == len(loc) - 1 else skip(skip(decoder.raw_decode(text, found)[1]) + 1)
            elif opener == "[" and isinstance(part, int):
                cursor = skip(pos + 1)
                for _ in range(part):
                    _, end = decoder.raw_decode(text, cursor)
                    cursor = skip(skip(end) + 1)
                if text[cursor] == "]":
                    break
                pos = cursor
            else:
                break
    except (ValueError, IndexError):
        return None
    return text.count("\n", 0, pos) + 1


def parse_network(text: str) -> Network:
    """Parse network file content (JSON) into a validated Network."""
    if not text or not text.strip():
        raise NetworkParseError("empty network file", line=1)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetworkParseError(e.msg, line=e.lineno) from e
    try:
        record = NetworkFile.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise NetworkParseError(first["msg"], line=_source_line(text, first["loc"]),
                                field=_field_path(first["loc"])) from e

    nodes = []
    for index, rec in enumerate(record.nodes):
        position = np.array(rec.pos, dtype=float)
        if rec.dirichlet is not None:
            nodes.append(Node(id=index, position=position, kind=DIRICHLET,
                              dirichlet_u=np.array(rec.dirichlet.u), dirichlet_r=np.array(rec.dirichlet.r)))
        else:
            nodes.append(Node(id=index, position=position, force=np.array(rec.force),
                              moment=np.array(rec.moment)))

    edges = []
    for index, rec in enumerate(record.edges):
        k, l = rec.nodes
        if k == l:
            raise NetworkValidationError(f"edge {index}", f"self-loop at node {k}")
        if not (0 <= k < len(nodes) and 0 <= l < len(nodes)):
            raise NetworkValidationError(f"edge {index}", f"endpoint out of range ({k}, {l})")
        if not rec.material.is_positive():
            raise NetworkValidationError(f"edge {index}", f"nonpositive material {rec.material.model_dump()}")
        edges.append(make_edge(index, nodes, k, l, rec.material, rec.frame_j))

    network = Network(nodes, edges)
    logger.info(f"Parsed network: {network.summary()}")
    return network


def load_network(path: str) -> Network:
    with open(path, "r", encoding="utf-8") as f:
        return parse_network(f.read())


# ---------------------------------------------------------------------------
# Builders and transformations
# ---------------------------------------------------------------------------

def cross_network(material: Material = Material()) -> Network:
    """Unit cross in the z=0 plane: tips at (+-1,0,0), (0,+-1,0) are Dirichlet, center is node 4."""
    tips = [(-1.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 1.0, 0.0)]
    nodes = [Node(id=i, position=np.array(p), kind=DIRICHLET, dirichlet_u=np.zeros(3), dirichlet_r=np.zeros(3))
             for i, p in enumerate(tips)]
    nodes.append(Node(id=4, position=np.zeros(3)))
    edges = [make_edge(i, nodes, i, 4, material) for i in range(4)]
    return Network(nodes, edges)


def _shifted(callback: Optional[CoefficientCallback], offset: float, length: float,
             reverse: bool) -> Optional[CoefficientCallback]:
    if callback is None:
        return None
    if reverse:
        return lambda x: callback(offset + length - x)
    return lambda x: callback(offset + x)


def refine_uniform(net: Network, k: int) -> Network:
    """Split every edge into 2**k equal collinear segments; new nodes are free and unloaded."""
    if k < 0:
        raise ValueError(f"refinement level must be nonnegative, got {k}")
    if k == 0:
        return net
    pieces = 2 ** k
    nodes = list(net.nodes)
    edges: List[Edge] = []
    flip = np.diag([-1.0, -1.0, 1.0])
    for edge in net.edges:
        a, b = edge.nodes
        p_a, p_b = net.nodes[a].position, net.nodes[b].position
        chain = [a]
        for j in range(1, pieces):
            new_id = len(nodes)
            nodes.append(Node(id=new_id, position=p_a + (j / pieces) * (p_b - p_a)))
            chain.append(new_id)
        chain.append(b)
        h = edge.length / pieces
        for j in range(pieces):
            s, t = chain[j], chain[j + 1]
            reverse = s > t
            frame = edge.frame @ flip if reverse else edge.frame
            ends = (t, s) if reverse else (s, t)
            edges.append(Edge(id=len(edges), nodes=ends, length=h, frame=frame, material=edge.material,
                              coefficients=_shifted(edge.coefficients, j * h, h, reverse),
                              frame_hint=edge.frame_hint))
    refined = Network(nodes, edges)
    logger.debug(f"Refined {k} level(s): {refined.num_nodes} nodes, {refined.num_edges} edges")
    return refined


def rotate_network(net: Network, q: np.ndarray) -> Network:
    """Rigidly rotate positions, frames and nodal data by the rotation matrix q."""
    q = np.asarray(q, dtype=float)
    nodes = []
    for node in net.nodes:
        if node.is_dirichlet:
            nodes.append(replace(node, position=q @ node.position,
                                 dirichlet_u=q @ node.dirichlet_u, dirichlet_r=q @ node.dirichlet_r))
        else:
            nodes.append(replace(node, position=q @ node.position, force=q @ node.force, moment=q @ node.moment))
    edges = [replace(e, frame=q @ e.frame,
                     frame_hint=None if e.frame_hint is None else q @ e.frame_hint) for e in net.edges]
    return Network(nodes, edges)


def rigid_body_modes(net: Network, nodes: Optional[Sequence[int]] = None) -> np.ndarray:
    """Columns: 3 translations and 3 infinitesimal rotations about the centroid, 6 dofs per node."""
    ids = list(range(net.num_nodes)) if nodes is None else list(nodes)
    positions = net.positions
    centroid = positions.mean(axis=0)
    modes = np.zeros((6 * len(ids), 6))
    for row, node_id in enumerate(ids):
        offset = positions[node_id] - centroid
        for a in range(3):
            e = np.zeros(3)
            e[a] = 1.0
            modes[6 * row:6 * row + 3, a] = e
            modes[6 * row:6 * row + 3, 3 + a] = np.cross(e, offset)
            modes[6 * row + 3:6 * row + 6, 3 + a] = e
    return modes


# ---------------------------------------------------------------------------
# Graph operators
# ---------------------------------------------------------------------------

def graph_laplacian(net: Network) -> sp.csr_matrix:
    """Edge-length weighted graph Laplacian (one scalar component)."""
    rows, cols, vals = [], [], []
    for edge in net.edges:
        k, l = edge.nodes
        w = 1.0 / edge.length
        rows += [k, l, k, l]
        cols += [k, l, l, k]
        vals += [w, w, -w, -w]
    n = net.num_nodes
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def mass_operator(net: Network) -> sp.csr_matrix:
    """Lumped nodal mass M[n, n] = 1/2 * sum of incident edge lengths."""
    diag = np.zeros(net.num_nodes)
    for edge in net.edges:
        for node_id in edge.nodes:
            diag[node_id] += 0.5 * edge.length
    return sp.diags(diag).tocsr()


def lambda_min_estimate(laplacian, mass, dirichlet_mask, tol: float = 1e-8, maxit: int = 500) -> float:
    """Smallest eigenvalue of L x = lambda M x on the free nodes, by inverse iteration."""
    free = np.flatnonzero(~np.asarray(dirichlet_mask, dtype=bool))
    if free.size == 0:
        logger.warning("No free nodes: lambda_min is infinite")
        return math.inf
    l_ff = sp.csc_matrix(laplacian)[free][:, free].tocsc()
    m_ff = sp.csr_matrix(mass)[free][:, free]
    lu = splu(l_ff)
    x = np.ones(free.size)
    x /= math.sqrt(x @ (m_ff @ x))
    estimate = (x @ (l_ff @ x))
    for iteration in range(1, maxit + 1):
        y = lu.solve(m_ff @ x)
        y /= math.sqrt(y @ (m_ff @ y))
        new_estimate = y @ (l_ff @ y)
        x = y
        if abs(new_estimate - estimate) <= tol * abs(new_estimate):
            logger.debug(f"lambda_min converged after {iteration} iterations: {new_estimate:.12g}")
            return float(new_estimate)
        estimate = new_estimate
    raise ConvergenceError(f"lambda_min inverse iteration did not converge in {maxit} iterations", maxit)
