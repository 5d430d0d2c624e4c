"""Two-domain disc/annulus triangle meshes with tagged interface.

The elastic body occupies the disc r < r0 and the fluid the annulus
r0 < r < r1.  Meshes are structured polar grids: concentric node rings
split into triangles.  Inside the disc the sector count halves toward
the center (with conforming 3-triangle transition bands) so cells stay
near-isotropic; the interface circle r = r0 is meshed once and shared
by both subdomains, which makes the interface conforming by
construction.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadGeometry, UnknownTag

CELL_FLUID = 0
CELL_ELASTIC = 1
EDGE_INTERFACE = 0
EDGE_OUTER = 1

_CELL_TAGS = {"fluid": CELL_FLUID, "elastic": CELL_ELASTIC}
_EDGE_TAGS = {"interface": EDGE_INTERFACE, "outer": EDGE_OUTER}


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature nodes and weights on the reference cell.

    Triangle rules store barycentric coordinates (nq, 3) and weights
    summing to the reference-triangle measure 1/2.  Edge rules store
    parameters in [0, 1] and weights summing to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


def tri_quadrature() -> QuadratureRule:
    """Degree-4 six-point rule on the reference triangle."""
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts = np.array(
        [
            [1.0 - 2.0 * a1, a1, a1],
            [a1, 1.0 - 2.0 * a1, a1],
            [a1, a1, 1.0 - 2.0 * a1],
            [1.0 - 2.0 * a2, a2, a2],
            [a2, 1.0 - 2.0 * a2, a2],
            [a2, a2, 1.0 - 2.0 * a2],
        ]
    )
    w = 0.5 * np.array([w1, w1, w1, w2, w2, w2])
    return QuadratureRule(points=pts, weights=w, degree=4)


def edge_quadrature() -> QuadratureRule:
    """Three-point Gauss rule on [0, 1] (degree 5)."""
    c = 0.5 * math.sqrt(3.0 / 5.0)
    pts = np.array([0.5 - c, 0.5, 0.5 + c])
    w = np.array([5.0, 8.0, 5.0]) / 18.0
    return QuadratureRule(points=pts, weights=w, degree=5)


@dataclass
class Mesh:
    """Conforming two-domain triangle mesh.

    nodes            (N, 2) coordinates, single node set for both domains
    cells            (C, 3) positively oriented vertex triples
    cell_tags        (C,)   CELL_FLUID or CELL_ELASTIC
    boundary_edges   (B, 2) node pairs on the interface and outer circles
    edge_tags        (B,)   EDGE_INTERFACE or EDGE_OUTER
    edge_normals     (B, 2) unit normals: outward w.r.t. the elastic body
                     on the interface, outward w.r.t. the fluid on Gamma_f
    interface_elastic_cell / interface_fluid_cell
                     cell owning each interface edge on either side
    """

    dim: int
    nodes: np.ndarray
    cells: np.ndarray
    cell_tags: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    edge_normals: np.ndarray
    interface_elastic_cell: np.ndarray
    interface_fluid_cell: np.ndarray
    h_max: float
    r0: float = 0.0
    r1: float = 0.0
    _edge_owner_cells: np.ndarray = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def cells_with_tag(self, tag):
        return np.nonzero(self.cell_tags == _resolve_cell_tag(tag))[0]

    def edges_with_tag(self, tag):
        return np.nonzero(self.edge_tags == _resolve_edge_tag(tag))[0]


def _resolve_cell_tag(tag):
    if tag in (CELL_FLUID, CELL_ELASTIC):
        return tag
    try:
        return _CELL_TAGS[tag]
    except (KeyError, TypeError):
        raise UnknownTag(f"unknown cell tag {tag!r}") from None


def _resolve_edge_tag(tag):
    if tag in (EDGE_INTERFACE, EDGE_OUTER):
        return tag
    try:
        return _EDGE_TAGS[tag]
    except (KeyError, TypeError):
        raise UnknownTag(f"unknown edge tag {tag!r}") from None


def _ring_layout(r0, r1, h):
    """Ring radii and sector counts for both subdomains.

    Returns (radii, sectors, n_elastic) where ring index n_elastic is
    the interface circle.  Sector counts inside the disc are M / 2**d
    with d = floor(log2(n_e / k)), which keeps the circumferential
    spacing within a factor 2 of the radial spacing.
    """
    n_e = max(1, math.ceil(r0 / h))
    n_f = max(1, math.ceil((r1 - r0) / h))
    d_max = int(math.floor(math.log2(n_e))) if n_e > 1 else 0
    m_raw = max(8, math.ceil(2.0 * math.pi * r0 / h))
    block = 1 << d_max
    m_interface = block * math.ceil(m_raw / block)

    radii = []
    sectors = []
    for k in range(1, n_e + 1):
        d = int(math.floor(math.log2(n_e / k)))
        radii.append(r0 * k / n_e)
        sectors.append(m_interface >> d)
    for j in range(1, n_f + 1):
        radii.append(r0 + (r1 - r0) * j / n_f)
        sectors.append(m_interface)
    return radii, sectors, n_e


def build_disc_annulus(r0: float, r1: float, h: float) -> Mesh:
    """Build the conforming disc-in-annulus mesh at target size h."""
    if not (0.0 < r0 < r1):
        raise BadGeometry(f"need 0 < r0 < r1, got r0={r0}, r1={r1}")
    if not (0.0 < h < r0):
        raise BadGeometry(f"need 0 < h < r0, got h={h}, r0={r0}")

    radii, sectors, n_e = _ring_layout(r0, r1, h)
    n_rings = len(radii)

    ring_start = [1]
    for m in sectors[:-1]:
        ring_start.append(ring_start[-1] + m)
    num_nodes = ring_start[-1] + sectors[-1]

    nodes = np.zeros((num_nodes, 2))
    for rad, m, start in zip(radii, sectors, ring_start):
        ang = 2.0 * np.pi * np.arange(m) / m
        nodes[start : start + m, 0] = rad * np.cos(ang)
        nodes[start : start + m, 1] = rad * np.sin(ang)

    def ring_node(ring, j):
        m = sectors[ring]
        return ring_start[ring] + (j % m)

    cells = []
    tags = []

    # Center fan.
    m1 = sectors[0]
    for j in range(m1):
        cells.append((0, ring_node(0, j), ring_node(0, j + 1)))
        tags.append(CELL_ELASTIC)

    # Bands between consecutive rings.
    for ring in range(n_rings - 1):
        tag = CELL_ELASTIC if ring + 1 < n_e else CELL_FLUID
        m_in, m_out = sectors[ring], sectors[ring + 1]
        if m_out == m_in:
            for j in range(m_in):
                a0, a1b = ring_node(ring, j), ring_node(ring, j + 1)
                b0, b1 = ring_node(ring + 1, j), ring_node(ring + 1, j + 1)
                cells.append((a0, b0, b1))
                cells.append((a0, b1, a1b))
                tags.extend((tag, tag))
        elif m_out == 2 * m_in:
            for j in range(m_in):
                a0, a1b = ring_node(ring, j), ring_node(ring, j + 1)
                b0 = ring_node(ring + 1, 2 * j)
                b1 = ring_node(ring + 1, 2 * j + 1)
                b2 = ring_node(ring + 1, 2 * j + 2)
                cells.append((a0, b0, b1))
                cells.append((a0, b1, a1b))
                cells.append((a1b, b1, b2))
                tags.extend((tag, tag, tag))
        else:  # pragma: no cover - layout guarantees ratios 1 or 2
            raise BadGeometry("inconsistent ring sector counts")

    cells = np.asarray(cells, dtype=np.int64)
    cell_tags = np.asarray(tags, dtype=np.int8)

    # Enforce positive orientation.
    p = nodes[cells]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]
    ) * (p[:, 1, 1] - p[:, 0, 1])
    flip = area2 < 0.0
    cells[flip, 1], cells[flip, 2] = cells[flip, 2].copy(), cells[flip, 1].copy()

    # Boundary edges: interface ring and outermost ring, consecutive pairs.
    iface_ring = n_e - 1
    outer_ring = n_rings - 1
    b_edges = []
    b_tags = []
    for j in range(sectors[iface_ring]):
        b_edges.append((ring_node(iface_ring, j), ring_node(iface_ring, j + 1)))
        b_tags.append(EDGE_INTERFACE)
    for j in range(sectors[outer_ring]):
        b_edges.append((ring_node(outer_ring, j), ring_node(outer_ring, j + 1)))
        b_tags.append(EDGE_OUTER)
    boundary_edges = np.asarray(b_edges, dtype=np.int64)
    edge_tags = np.asarray(b_tags, dtype=np.int8)

    # Map undirected edges to adjacent cells.
    edge_cells = {}
    for c in range(cells.shape[0]):
        tri = cells[c]
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edge_cells.setdefault(key, []).append(c)

    iface_elastic = []
    iface_fluid = []
    owners = np.full(boundary_edges.shape[0], -1, dtype=np.int64)
    for e, (a, b) in enumerate(boundary_edges):
        adj = edge_cells[(min(a, b), max(a, b))]
        if edge_tags[e] == EDGE_INTERFACE:
            el = [c for c in adj if cell_tags[c] == CELL_ELASTIC]
            fl = [c for c in adj if cell_tags[c] == CELL_FLUID]
            if len(el) != 1 or len(fl) != 1:
                raise BadGeometry("non-conforming interface edge")
            iface_elastic.append(el[0])
            iface_fluid.append(fl[0])
            owners[e] = el[0]
        else:
            if len(adj) != 1 or cell_tags[adj[0]] != CELL_FLUID:
                raise BadGeometry("outer edge not owned by a single fluid cell")
            owners[e] = adj[0]

    # Outward normals: away from the owning cell's centroid.  On the
    # interface the owner is the elastic cell, matching the convention
    # that nu points from the elastic body into the fluid.
    p0 = nodes[boundary_edges[:, 0]]
    p1 = nodes[boundary_edges[:, 1]]
    tangent = p1 - p0
    normals = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    mid = 0.5 * (p0 + p1)
    centroid = nodes[cells[owners]].mean(axis=1)
    wrong = np.einsum("ed,ed->e", normals, mid - centroid) < 0.0
    normals[wrong] *= -1.0

    edge_vecs = np.concatenate(
        [
            nodes[cells[:, 1]] - nodes[cells[:, 0]],
            nodes[cells[:, 2]] - nodes[cells[:, 1]],
            nodes[cells[:, 0]] - nodes[cells[:, 2]],
        ]
    )
    h_max = float(np.max(np.linalg.norm(edge_vecs, axis=1)))

    return Mesh(
        dim=2,
        nodes=nodes,
        cells=cells,
        cell_tags=cell_tags,
        boundary_edges=boundary_edges,
        edge_tags=edge_tags,
        edge_normals=normals,
        interface_elastic_cell=np.asarray(iface_elastic, dtype=np.int64),
        interface_fluid_cell=np.asarray(iface_fluid, dtype=np.int64),
        h_max=h_max,
        r0=r0,
        r1=r1,
        _edge_owner_cells=owners,
    )


def _evaluate(integrand, *args):
    vals = integrand(*args)
    return np.asarray(vals, dtype=float).reshape(args[0].shape[0])


def integrate_domain(mesh: Mesh, tag, integrand, rule: QuadratureRule = None) -> float:
    """Composite quadrature of integrand(points) over one subdomain."""
    rule = rule or tri_quadrature()
    cells = mesh.cells_with_tag(tag)
    verts = mesh.nodes[mesh.cells[cells]]  # (C, 3, 2)
    pts = np.einsum("qb,cbd->cqd", rule.points, verts)
    j00 = verts[:, 1, 0] - verts[:, 0, 0]
    j01 = verts[:, 2, 0] - verts[:, 0, 0]
    j10 = verts[:, 1, 1] - verts[:, 0, 1]
    j11 = verts[:, 2, 1] - verts[:, 0, 1]
    detj = j00 * j11 - j01 * j10
    vals = _evaluate(integrand, pts.reshape(-1, 2)).reshape(pts.shape[:2])
    return float(np.sum(detj[:, None] * rule.weights[None, :] * vals))


def integrate_boundary(mesh: Mesh, tag, integrand, rule: QuadratureRule = None) -> float:
    """Composite quadrature of integrand(points, normals) over a boundary."""
    rule = rule or edge_quadrature()
    edges = mesh.edges_with_tag(tag)
    p0 = mesh.nodes[mesh.boundary_edges[edges, 0]]
    p1 = mesh.nodes[mesh.boundary_edges[edges, 1]]
    s = rule.points
    pts = p0[:, None, :] * (1.0 - s)[None, :, None] + p1[:, None, :] * s[None, :, None]
    lengths = np.linalg.norm(p1 - p0, axis=1)
    normals = np.broadcast_to(
        mesh.edge_normals[edges][:, None, :], pts.shape
    ).reshape(-1, 2)
    vals = _evaluate(integrand, pts.reshape(-1, 2), normals).reshape(pts.shape[:2])
    return float(np.sum(lengths[:, None] * rule.weights[None, :] * vals))


def write_mesh_text(mesh: Mesh, path) -> None:
    """Dump the mesh in the documented plain-text debug format."""
    cell_names = {CELL_FLUID: "fluid", CELL_ELASTIC: "elastic"}
    edge_names = {EDGE_INTERFACE: "interface", EDGE_OUTER: "outer"}
    with open(path, "w", newline="\n") as fh:
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"node {i} {x:.17g} {y:.17g}\n")
        for i, ((a, b, c), t) in enumerate(zip(mesh.cells, mesh.cell_tags)):
            fh.write(f"cell {i} {a} {b} {c} {cell_names[int(t)]}\n")
        for i, ((a, b), t) in enumerate(zip(mesh.boundary_edges, mesh.edge_tags)):
            fh.write(f"edge {i} {a} {b} {edge_names[int(t)]}\n")
