"""Nodal P2/P1 finite element spaces on the two-domain mesh.

The velocity and displacement spaces are componentwise P2 Lagrange on
the fluid and elastic cells; the pressure space is P1 on the fluid
cells (Taylor-Hood pair).  Both P2 spaces draw their degrees of freedom
from one global numbering (mesh nodes followed by mesh edges), so
interface nodes and edge midpoints are literally shared between the
fluid and elastic sides.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .meshing import (
    CELL_ELASTIC,
    CELL_FLUID,
    EDGE_INTERFACE,
    EDGE_OUTER,
    Mesh,
    edge_quadrature,
    tri_quadrature,
)

_GRAD_BARY = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_EDGE_VERTS = ((0, 1), (1, 2), (2, 0))


def p1_basis(bary):
    """P1 values and reference gradients at barycentric points (Q, 3)."""
    vals = np.asarray(bary, dtype=float)
    grads = np.broadcast_to(_GRAD_BARY, (vals.shape[0], 3, 2)).copy()
    return vals, grads


def p2_basis(bary):
    """P2 values and reference gradients at barycentric points (Q, 3).

    Local order: three vertices, then midpoints of edges (0,1), (1,2),
    (2,0).
    """
    lam = np.asarray(bary, dtype=float)
    nq = lam.shape[0]
    vals = np.empty((nq, 6))
    grads = np.empty((nq, 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * _GRAD_BARY[i]
    for k, (i, j) in enumerate(_EDGE_VERTS):
        vals[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
        grads[:, 3 + k, :] = 4.0 * (
            lam[:, j][:, None] * _GRAD_BARY[i] + lam[:, i][:, None] * _GRAD_BARY[j]
        )
    return vals, grads


def edge_p2_values(s):
    """Trace of P2 on an edge: quadratic Lagrange at [end0, end1, mid]."""
    s = np.asarray(s, dtype=float)
    return np.stack(
        [(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)],
        axis=1,
    )


def _build_edge_table(cells):
    """Unique undirected edges, lexicographically ordered."""
    pairs = np.concatenate(
        [cells[:, [i, j]] for i, j in _EDGE_VERTS]
    )
    pairs = np.sort(pairs, axis=1)
    edges = np.unique(pairs, axis=0)
    index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
    return edges, index


@dataclass
class ScalarSpace:
    """One scalar P1/P2 space restricted to a subdomain."""

    order: int
    tag: int
    cells: np.ndarray      # mesh cell indices in the subdomain
    cell_dofs: np.ndarray  # (Ct, k) space-local dof indices
    ndof: int
    dof_coords: np.ndarray
    global_keys: np.ndarray  # global dof key per local dof (shared numbering)

    def interpolate(self, f):
        """Nodal interpolation of a callable f(points (N,2)) -> (N,)."""
        return np.asarray(f(self.dof_coords), dtype=float).reshape(self.ndof)


def _make_space(mesh, order, tag, edge_index, edges):
    cells_idx = mesh.cells_with_tag(tag)
    tris = mesh.cells[cells_idx]
    nn = mesh.num_nodes
    if order == 1:
        gdofs = tris.copy()
    else:
        mid = np.empty((tris.shape[0], 3), dtype=np.int64)
        for k, (i, j) in enumerate(_EDGE_VERTS):
            a = np.minimum(tris[:, i], tris[:, j])
            b = np.maximum(tris[:, i], tris[:, j])
            mid[:, k] = [edge_index[(int(x), int(y))] for x, y in zip(a, b)]
        gdofs = np.concatenate([tris, nn + mid], axis=1)
    used = np.unique(gdofs)
    lookup = -np.ones(used.max() + 1, dtype=np.int64)
    lookup[used] = np.arange(used.size)
    cell_dofs = lookup[gdofs]

    coords = np.empty((used.size, 2))
    node_mask = used < nn
    coords[node_mask] = mesh.nodes[used[node_mask]]
    if order == 2:
        eids = used[~node_mask] - nn
        coords[~node_mask] = 0.5 * (
            mesh.nodes[edges[eids, 0]] + mesh.nodes[edges[eids, 1]]
        )
    return ScalarSpace(
        order=order,
        tag=tag,
        cells=cells_idx,
        cell_dofs=cell_dofs,
        ndof=used.size,
        dof_coords=coords,
        global_keys=used,
    )


@dataclass
class SpaceTables:
    """Per-cell quadrature tables for one space."""

    phi: np.ndarray       # (Q, k) reference values
    gradphi: np.ndarray   # (Ct, Q, k, 2) physical gradients
    wdet: np.ndarray      # (Ct, Q) weight * |J|
    qpoints: np.ndarray   # (Ct, Q, 2)


def _cell_geometry(mesh, cells_idx, rule):
    verts = mesh.nodes[mesh.cells[cells_idx]]
    j = np.stack(
        [verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=2
    )  # (Ct, 2, 2), columns are edge vectors
    detj = j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] * j[:, 1, 0]
    inv_t = np.empty_like(j)
    inv_t[:, 0, 0] = j[:, 1, 1]
    inv_t[:, 0, 1] = -j[:, 1, 0]
    inv_t[:, 1, 0] = -j[:, 0, 1]
    inv_t[:, 1, 1] = j[:, 0, 0]
    inv_t /= detj[:, None, None]
    qp = np.einsum("qb,cbd->cqd", rule.points, verts)
    wdet = rule.weights[None, :] * detj[:, None]
    return inv_t, wdet, qp


def _make_tables(mesh, space, rule):
    inv_t, wdet, qp = _cell_geometry(mesh, space.cells, rule)
    basis = p2_basis if space.order == 2 else p1_basis
    phi, gref = basis(rule.points)
    gradphi = np.einsum("cde,qae->cqad", inv_t, gref)
    return SpaceTables(
        phi=phi,
        gradphi=np.ascontiguousarray(gradphi),
        wdet=np.ascontiguousarray(wdet),
        qpoints=qp,
    )


def cell_basis_at_points(mesh, cells, points, order):
    """Evaluate a cell's basis at arbitrary physical points inside it.

    cells (E,), points (E, P, 2) -> values (E, P, k), gradients
    (E, P, k, 2).  Used to take volume traces on boundary edges.
    """
    verts = mesh.nodes[mesh.cells[cells]]
    j = np.stack([verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]], axis=2)
    detj = j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] * j[:, 1, 0]
    rel = points - verts[:, None, 0, :]
    xi = (j[:, None, 1, 1] * rel[..., 0] - j[:, None, 0, 1] * rel[..., 1]) / detj[:, None]
    eta = (-j[:, None, 1, 0] * rel[..., 0] + j[:, None, 0, 0] * rel[..., 1]) / detj[:, None]
    bary = np.stack([1.0 - xi - eta, xi, eta], axis=-1)
    basis = p2_basis if order == 2 else p1_basis
    flat = bary.reshape(-1, 3)
    vals, gref = basis(flat)
    k = vals.shape[1]
    vals = vals.reshape(points.shape[0], points.shape[1], k)
    gref = gref.reshape(points.shape[0], points.shape[1], k, 2)
    inv_t = np.empty_like(j)
    inv_t[:, 0, 0] = j[:, 1, 1]
    inv_t[:, 0, 1] = -j[:, 1, 0]
    inv_t[:, 1, 0] = -j[:, 0, 1]
    inv_t[:, 1, 1] = j[:, 0, 0]
    inv_t /= detj[:, None, None]
    grads = np.einsum("cde,cpae->cpad", inv_t, gref)
    return vals, grads


@dataclass
class BoundaryTables:
    """Quadrature tables along one tagged boundary."""

    edges: np.ndarray        # indices into mesh.boundary_edges
    lengths: np.ndarray
    normals: np.ndarray      # (E, 2)
    qpoints: np.ndarray      # (E, Qe, 2)
    wlen: np.ndarray         # (E, Qe) weight * |edge|
    trace_phi: np.ndarray    # (Qe, 3) P2 trace values at [end0, end1, mid]
    trace_dofs: dict         # space name -> (E, 3) space dof indices
    cell_dofs: dict          # space name -> (E, k) owner-cell dofs
    cell_gradphi: dict       # space name -> (E, Qe, k, 2)
    dof_indices: dict        # space name -> sorted unique boundary dofs


class Discretization:
    """Meshes, spaces and quadrature tables for one simulation."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.tri_rule = tri_quadrature()
        self.edge_rule = edge_quadrature()

        edges, edge_index = _build_edge_table(mesh.cells)
        self.global_edges = edges
        self.vel = _make_space(mesh, 2, CELL_FLUID, edge_index, edges)
        self.pre = _make_space(mesh, 1, CELL_FLUID, edge_index, edges)
        self.dis = _make_space(mesh, 2, CELL_ELASTIC, edge_index, edges)
        self._edge_index = edge_index

        self.vel_t = _make_tables(mesh, self.vel, self.tri_rule)
        self.pre_t = _make_tables(mesh, self.pre, self.tri_rule)
        self.dis_t = _make_tables(mesh, self.dis, self.tri_rule)

        self.iface = self._boundary_tables(
            EDGE_INTERFACE,
            owners={"vel": mesh.interface_fluid_cell, "dis": mesh.interface_elastic_cell},
        )
        self.outer = self._boundary_tables(
            EDGE_OUTER, owners={"vel": mesh._edge_owner_cells[mesh.edges_with_tag(EDGE_OUTER)]}
        )
        self.dirichlet_vel = self.outer.dof_indices["vel"]
        free = np.setdiff1d(np.arange(self.vel.ndof), self.dirichlet_vel)
        self.free_vel = free

    def _space(self, name) -> ScalarSpace:
        return {"vel": self.vel, "pre": self.pre, "dis": self.dis}[name]

    def _boundary_tables(self, tag, owners):
        mesh = self.mesh
        eidx = mesh.edges_with_tag(tag)
        pairs = mesh.boundary_edges[eidx]
        p0 = mesh.nodes[pairs[:, 0]]
        p1 = mesh.nodes[pairs[:, 1]]
        lengths = np.linalg.norm(p1 - p0, axis=1)
        s = self.edge_rule.points
        qp = p0[:, None, :] * (1 - s)[None, :, None] + p1[:, None, :] * s[None, :, None]
        wlen = self.edge_rule.weights[None, :] * lengths[:, None]
        trace_phi = edge_p2_values(s)

        nn = mesh.num_nodes
        trace_dofs = {}
        cell_dofs = {}
        cell_grad = {}
        dof_idx = {}
        for name, owner_cells in owners.items():
            space = self._space(name)
            glookup = -np.ones(space.global_keys.max() + 1, dtype=np.int64)
            glookup[space.global_keys] = np.arange(space.ndof)
            mid_keys = np.array(
                [
                    nn + self._edge_index[(int(min(a, b)), int(max(a, b)))]
                    for a, b in pairs
                ]
            )
            tdofs = np.stack(
                [glookup[pairs[:, 0]], glookup[pairs[:, 1]], glookup[mid_keys]], axis=1
            )
            trace_dofs[name] = tdofs
            dof_idx[name] = np.unique(tdofs)

            local = np.searchsorted(space.cells, owner_cells)
            cdofs = space.cell_dofs[local]
            _, grads = cell_basis_at_points(mesh, owner_cells, qp, space.order)
            cell_dofs[name] = cdofs
            cell_grad[name] = grads
        return BoundaryTables(
            edges=eidx,
            lengths=lengths,
            normals=mesh.edge_normals[eidx],
            qpoints=qp,
            wlen=wlen,
            trace_phi=trace_phi,
            trace_dofs=trace_dofs,
            cell_dofs=cell_dofs,
            cell_gradphi=cell_grad,
            dof_indices=dof_idx,
        )

    # -- assembly -----------------------------------------------------

    @staticmethod
    def assemble(local, row_dofs, col_dofs, shape):
        rows = np.broadcast_to(row_dofs[:, :, None], local.shape).ravel()
        cols = np.broadcast_to(col_dofs[:, None, :], local.shape).ravel()
        mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape)
        return mat.tocsr()

    def mass_matrix(self, which):
        space, tables = self._pair(which)
        local = kernels.local_mass(tables.phi, tables.wdet)
        n = space.ndof
        return self.assemble(local, space.cell_dofs, space.cell_dofs, (n, n))

    def stiffness_matrix(self, which, coeff):
        """Matrix of the form grad u . coeff(x) . grad v; coeff (Ct,Q,2,2)."""
        space, tables = self._pair(which)
        local = kernels.local_stiffness(tables.gradphi, tables.wdet, coeff)
        n = space.ndof
        return self.assemble(local, space.cell_dofs, space.cell_dofs, (n, n))

    def div_matrix(self, bvec):
        """Pressure-row matrix of q * (bvec . grad phi); bvec (Cf,Q,2)."""
        local = kernels.local_div(
            self.vel_t.gradphi, self.pre_t.phi, self.vel_t.wdet, bvec
        )
        return self.assemble(
            local, self.pre.cell_dofs, self.vel.cell_dofs, (self.pre.ndof, self.vel.ndof)
        )

    def boundary_mass(self, boundary: BoundaryTables, row_space, col_space):
        phi = boundary.trace_phi
        local = np.einsum("eq,qa,qb->eab", boundary.wlen, phi, phi)
        rdofs = boundary.trace_dofs[row_space]
        cdofs = boundary.trace_dofs[col_space]
        nr = self._space(row_space).ndof
        nc = self._space(col_space).ndof
        return self.assemble(local, rdofs, cdofs, (nr, nc))

    def _pair(self, which):
        return {
            "vel": (self.vel, self.vel_t),
            "pre": (self.pre, self.pre_t),
            "dis": (self.dis, self.dis_t),
        }[which]

    # -- field evaluation ---------------------------------------------

    def grad_at_qp(self, which, coefs):
        space, tables = self._pair(which)
        return kernels.field_grad(tables.gradphi, np.ascontiguousarray(coefs[space.cell_dofs]))

    def value_at_qp(self, which, coefs):
        space, tables = self._pair(which)
        return kernels.field_value(tables.phi, np.ascontiguousarray(coefs[space.cell_dofs]))

    def trace_values(self, boundary: BoundaryTables, which, coefs):
        """Values of a field along a boundary, (E, Qe)."""
        tdofs = boundary.trace_dofs[which]
        return np.einsum("qa,ea->eq", boundary.trace_phi, coefs[tdofs])

    def trace_gradient(self, boundary: BoundaryTables, which, coefs):
        """Volume gradient of a field at boundary quadrature points."""
        cdofs = boundary.cell_dofs[which]
        grads = boundary.cell_gradphi[which]
        return np.einsum("eqad,ea->eqd", grads, coefs[cdofs])

    def domain_integral(self, which, values):
        """Sum of values (Ct, Q) against quadrature weights."""
        return float(np.sum(self._pair(which)[1].wdet * values))

    def boundary_integral(self, boundary: BoundaryTables, values):
        return float(np.sum(boundary.wlen * values))
