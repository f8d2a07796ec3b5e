"""Structured Q1 meshes and sparse stiffness/mass assembly.

Every mesh here is a tensor grid in some computational coordinates. Thin
and curved regions are handled by a graph map from the computational
rectangle to physical space; the map's Jacobian is folded into the
coefficients of the bilinear forms, so elements stay unit-aspect no
matter how thin the channel gets.

For the channel ``{0 < x < L, |y| < g(x)}`` with ``x = y1``, ``y = g(y1) y2``::

    int |grad u|^2 = int_Q [(u_1 - (g'/g) y2 u_2)^2 + u_2^2 / g^2] g dy
    int u^2        = int_Q u^2 g dy
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, ConditioningError, ParameterError
from .geometry import PerturbedDomain

MIN_WIDTH = 1e-12

_GP = 1.0 / np.sqrt(3.0)
_QUAD_PTS = np.array([[-_GP, -_GP], [_GP, -_GP], [_GP, _GP], [-_GP, _GP]])
_REF_NODES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
# shape functions and reference gradients at the four Gauss points
_N = 0.25 * (1 + _QUAD_PTS[:, None, 0] * _REF_NODES[None, :, 0]) * \
    (1 + _QUAD_PTS[:, None, 1] * _REF_NODES[None, :, 1])
_DN = np.stack([
    0.25 * _REF_NODES[None, :, 0] * (1 + _QUAD_PTS[:, None, 1] * _REF_NODES[None, :, 1]),
    0.25 * _REF_NODES[None, :, 1] * (1 + _QUAD_PTS[:, None, 0] * _REF_NODES[None, :, 0]),
], axis=-1)  # (q, a, 2)


@dataclass(frozen=True)
class StructuredMesh:
    """Tensor-grid quadrilateral mesh.

    Node ``(i, j)`` has index ``j * (nx + 1) + i``. ``edges`` lists boundary
    edges as node pairs with a matching ``edge_tags`` entry.
    """

    nodes: np.ndarray
    quads: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    nx: int
    ny: int
    to_physical: Optional[Callable] = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def tagged_edges(self, tag):
        return self.edges[self.edge_tags == tag]

    def tagged_nodes(self, *tags):
        mask = np.isin(self.edge_tags, tags)
        return np.unique(self.edges[mask])

    def physical_nodes(self):
        if self.to_physical is None:
            return self.nodes
        return self.to_physical(self.nodes)


def rect_mesh(x0, x1, y0, y1, nx, ny, tags=("outer",) * 4, to_physical=None):
    """Uniform grid on ``[x0, x1] x [y0, y1]``.

    ``tags`` gives the boundary tag of the (left, right, bottom, top) sides.
    """
    if nx < 1 or ny < 1:
        raise ParameterError("nx and ny must be >= 1")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    quads = np.column_stack([
        idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(),
        idx[1:, 1:].ravel(), idx[1:, :-1].ravel(),
    ])
    left = np.column_stack([idx[:-1, 0], idx[1:, 0]])
    right = np.column_stack([idx[:-1, -1], idx[1:, -1]])
    bottom = np.column_stack([idx[0, :-1], idx[0, 1:]])
    top = np.column_stack([idx[-1, :-1], idx[-1, 1:]])
    edges = np.vstack([left, right, bottom, top])
    edge_tags = np.array([tags[0]] * ny + [tags[1]] * ny + [tags[2]] * nx + [tags[3]] * nx)
    return StructuredMesh(nodes, quads, edges, edge_tags, nx, ny, to_physical)


def build_channel_mesh(profile, nx, ny):
    """Grid on the reference cylinder ``Q = (0, L) x (-1, 1)``."""
    if nx < 4 or ny < 4:
        raise ParameterError("channel mesh needs nx, ny >= 4")

    def to_physical(nodes):
        return np.column_stack([nodes[:, 0], profile.g(nodes[:, 0]) * nodes[:, 1]])

    return rect_mesh(0.0, profile.L, -1.0, 1.0, nx, ny,
                     tags=("gamma0", "gammaL", "lateral", "lateral"),
                     to_physical=to_physical)


def interior_edge_counts(mesh):
    """Map every element edge to the number of elements sharing it."""
    q = mesh.quads
    pairs = np.vstack([q[:, [0, 1]], q[:, [1, 2]], q[:, [2, 3]], q[:, [3, 0]]])
    pairs.sort(axis=1)
    _, counts = np.unique(pairs, axis=0, return_counts=True)
    return counts


# -- assembly ----------------------------------------------------------------


def _geometry(mesh):
    """Quadrature points, gradients and Jacobian determinants per element."""
    X = mesh.nodes[mesh.quads]                       # (e, a, 2)
    pts = np.einsum("qa,ead->eqd", _N, X)            # (e, q, 2)
    J = np.einsum("ead,qak->eqdk", X, _DN)           # dx_d / dxi_k
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise AssemblyError("non-positive element Jacobian")
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    grads = np.einsum("eqkd,qak->eqad", inv, _DN)    # (e, q, a, 2)
    return pts, grads, det


def assemble_q1(mesh, coefficients):
    """Assemble ``K`` and ``M`` for ``int grad(u).A grad(v)`` and ``int c u v``.

    ``coefficients(points)`` receives quadrature points of shape ``(e, q, 2)``
    in mesh coordinates and returns ``A`` with shape ``(e, q, 2, 2)`` and
    ``c`` with shape ``(e, q)``.
    """
    pts, grads, det = _geometry(mesh)
    A, c = coefficients(pts)
    Ke = np.einsum("eqad,eqdk,eqbk,eq->eab", grads, A, grads, det)
    Me = np.einsum("qa,qb,eq->eab", _N, _N, c * det)
    rows = np.repeat(mesh.quads, 4, axis=1).ravel()
    cols = np.tile(mesh.quads, (1, 4)).ravel()
    n = mesh.n_nodes
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return ((K + K.T) * 0.5).tocsr(), ((M + M.T) * 0.5).tocsr()


def _laplace_coefficients(pts):
    e, q, _ = pts.shape
    A = np.broadcast_to(np.eye(2), (e, q, 2, 2))
    return A, np.ones((e, q))


def mapped_channel_coefficients(profile):
    """Coefficients of the channel Laplacian pulled back to ``Q``."""
    if profile.dimension != 2:
        raise ParameterError("mapped assembly is implemented for N = 2 only")

    def coefficients(pts):
        y1, y2 = pts[..., 0], pts[..., 1]
        g = profile.g(y1)
        if np.any(~(g >= MIN_WIDTH)):
            raise ConditioningError(
                f"channel half-width {np.nanmin(g):.3g} < {MIN_WIDTH:g} at a quadrature "
                "point; use a larger epsilon")
        r, _ = profile.log_derivatives(y1)
        A = np.empty(pts.shape[:2] + (2, 2))
        A[..., 0, 0] = g
        A[..., 0, 1] = A[..., 1, 0] = -g * r * y2
        A[..., 1, 1] = g * (r * y2) ** 2 + 1.0 / g
        return A, g

    return coefficients


@dataclass(frozen=True)
class DumbbellParts:
    """Sub-blocks of a composite assembly, for norms on each piece."""

    base_mesh: StructuredMesh
    base_K: sp.csr_matrix
    base_M: sp.csr_matrix
    channel_mesh: Optional[StructuredMesh] = None
    channel_K: Optional[sp.csr_matrix] = None
    channel_M: Optional[sp.csr_matrix] = None

    @property
    def n_base(self):
        return self.base_mesh.n_nodes


@dataclass(frozen=True)
class AssembledForms:
    """Stiffness/mass pencil after constraint elimination.

    ``K`` and ``M`` act on free degrees of freedom. ``prolongation`` maps
    free values to all nodal values (zeros on Dirichlet nodes, interpolated
    values on tied nodes); ``K_full``/``M_full`` are the unconstrained
    nodal matrices.
    """

    K: sp.csr_matrix
    M: sp.csr_matrix
    K_full: sp.csr_matrix
    M_full: sp.csr_matrix
    prolongation: sp.csr_matrix
    dirichlet_mask: np.ndarray
    dof_map: np.ndarray
    mesh: Optional[StructuredMesh] = None
    parts: Optional[DumbbellParts] = None

    @property
    def n(self):
        return self.K.shape[0]

    @property
    def has_dirichlet(self):
        return bool(self.dirichlet_mask.any())

    def expand(self, x):
        """Nodal values of free-DOF vector(s) ``x``."""
        return self.prolongation @ x

    @classmethod
    def from_matrices(cls, K, M):
        """Wrap a bare pencil (no mesh, no constraints)."""
        K = sp.csr_matrix(K, dtype=float)
        M = sp.csr_matrix(M, dtype=float)
        n = K.shape[0]
        return cls(K, M, K, M, sp.identity(n, format="csr"), np.zeros(n, dtype=bool),
                   np.arange(n))


def _prolongation(n_nodes, eliminated, ties=None):
    """Sparse map from free DOFs to nodal values.

    ``ties`` maps a tied node to a list of ``(master_node, weight)``; masters
    must be free nodes.
    """
    ties = ties or {}
    removed = np.zeros(n_nodes, dtype=bool)
    removed[eliminated] = True
    for node in ties:
        removed[node] = True
    dof_map = -np.ones(n_nodes, dtype=int)
    free = np.flatnonzero(~removed)
    dof_map[free] = np.arange(len(free))
    rows, cols, vals = list(free), list(dof_map[free]), [1.0] * len(free)
    for node, masters in ties.items():
        for master, w in masters:
            if dof_map[master] < 0:
                raise AssemblyError(f"tie of node {node} references constrained node {master}")
            rows.append(node)
            cols.append(dof_map[master])
            vals.append(w)
    P = sp.coo_matrix((vals, (rows, cols)), shape=(n_nodes, len(free))).tocsr()
    return P, dof_map


def _reduce(K_full, M_full, P):
    K = (P.T @ K_full @ P).tocsr()
    M = (P.T @ M_full @ P).tocsr()
    return ((K + K.T) * 0.5).tocsr(), ((M + M.T) * 0.5).tocsr()


def assemble_mapped_channel_forms(mesh, profile, dirichlet=("gamma0",)):
    """Forms of the mixed problem on the channel in mapped coordinates.

    Dirichlet conditions are imposed on the nodes of the listed tags by
    deleting their rows and columns; the remaining boundary is natural
    (Neumann).
    """
    K_full, M_full = assemble_q1(mesh, mapped_channel_coefficients(profile))
    eliminated = mesh.tagged_nodes(*dirichlet) if dirichlet else np.array([], dtype=int)
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    mask[eliminated] = True
    P, dof_map = _prolongation(mesh.n_nodes, eliminated)
    K, M = _reduce(K_full, M_full, P)
    return AssembledForms(K, M, K_full, M_full, P, mask, dof_map, mesh=mesh)


def build_rect_forms(x0, x1, y0, y1, nx, ny, dirichlet=False):
    """Plain Laplacian forms on a rectangle; all-Neumann or all-Dirichlet."""
    mesh = rect_mesh(x0, x1, y0, y1, nx, ny)
    K_full, M_full = assemble_q1(mesh, _laplace_coefficients)
    eliminated = mesh.tagged_nodes("outer") if dirichlet else np.array([], dtype=int)
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    mask[eliminated] = True
    P, dof_map = _prolongation(mesh.n_nodes, eliminated)
    K, M = _reduce(K_full, M_full, P)
    return AssembledForms(K, M, K_full, M_full, P, mask, dof_map, mesh=mesh)


def base_grid_size(domain, h_base):
    nx = max(int(round(1.0 / h_base)), 1)
    ny = max(int(round(domain.base_height / h_base)), 1)
    return nx, ny


def build_dumbbell_forms(domain: PerturbedDomain, h_base, nx, ny):
    """Pure Neumann forms on the base rectangle joined to the channel.

    The base ``(-1, 0) x (-h/2, h/2)`` gets a uniform grid of size about
    ``h_base``. The channel is meshed on ``Q`` with ``nx x ny`` cells; its
    nodes on ``x = 0`` are tied to the base edge trace by linear
    interpolation and eliminated.
    """
    if domain.variant != "dumbbell-neumann":
        raise ParameterError(f"expected a dumbbell-neumann domain, got {domain.variant}")
    half = domain.base_height / 2.0
    nbx, nby = base_grid_size(domain, h_base)
    g0 = domain.attachment_half_width
    base_mesh = rect_mesh(-1.0, 0.0, -half, half, nbx, nby)
    if g0 > 0:
        # right edge segments touching the attachment are interface edges
        tags = base_mesh.edge_tags.astype("<U9")
        right = slice(nby, 2 * nby)
        ys = base_mesh.nodes[base_mesh.edges[right], 1]
        touches = (ys.max(axis=1) > -g0) & (ys.min(axis=1) < g0)
        tags[right] = np.where(touches, "interface", "outer")
        base_mesh = StructuredMesh(base_mesh.nodes, base_mesh.quads, base_mesh.edges,
                                   tags, nbx, nby)
    Kb, Mb = assemble_q1(base_mesh, _laplace_coefficients)
    nb = base_mesh.n_nodes

    if domain.channel is None:
        P, dof_map = _prolongation(nb, np.array([], dtype=int))
        K, M = _reduce(Kb, Mb, P)
        parts = DumbbellParts(base_mesh, Kb, Mb)
        return AssembledForms(K, M, Kb, Mb, P, np.zeros(nb, dtype=bool), dof_map,
                              mesh=base_mesh, parts=parts)

    profile = domain.channel
    ch_mesh = build_channel_mesh(profile, nx, ny)
    Kc, Mc = assemble_q1(ch_mesh, mapped_channel_coefficients(profile))
    n_total = nb + ch_mesh.n_nodes

    edge_nodes = np.flatnonzero(np.isclose(base_mesh.nodes[:, 0], 0.0))
    edge_nodes = edge_nodes[np.argsort(base_mesh.nodes[edge_nodes, 1])]
    edge_y = base_mesh.nodes[edge_nodes, 1]
    ties = {}
    for node in ch_mesh.tagged_nodes("gamma0"):
        y = g0 * ch_mesh.nodes[node, 1]
        if not (-half <= y <= half):
            raise AssemblyError(f"channel node at y={y:g} falls outside the base edge")
        m = int(np.clip(np.searchsorted(edge_y, y, side="right") - 1, 0, len(edge_y) - 2))
        t = (y - edge_y[m]) / (edge_y[m + 1] - edge_y[m])
        masters = [(edge_nodes[m], 1.0 - t), (edge_nodes[m + 1], t)]
        ties[nb + node] = [(a, w) for a, w in masters if w != 0.0]
    P, dof_map = _prolongation(n_total, np.array([], dtype=int), ties)
    if P.shape[1] != n_total - len(ties):
        raise AssemblyError("interface tie produced a rank-deficient constraint")

    K_full = sp.block_diag([Kb, Kc], format="csr")
    M_full = sp.block_diag([Mb, Mc], format="csr")
    K, M = _reduce(K_full, M_full, P)
    parts = DumbbellParts(base_mesh, Kb, Mb, ch_mesh, Kc, Mc)
    return AssembledForms(K, M, K_full, M_full, P, np.zeros(n_total, dtype=bool), dof_map,
                          mesh=None, parts=parts)


def oscillating_coefficients(amplitude, eps):
    """Pull-back of the Laplacian under ``y = -1 + H(x) t``, ``t in (0, 1)``."""

    def coefficients(pts):
        x, t = pts[..., 0], pts[..., 1]
        H = 1.0 + amplitude * (1.0 + np.sin(x / eps))
        Hp = amplitude / eps * np.cos(x / eps)
        A = np.empty(pts.shape[:2] + (2, 2))
        A[..., 0, 0] = H
        A[..., 0, 1] = A[..., 1, 0] = -Hp * t
        A[..., 1, 1] = ((Hp * t) ** 2 + 1.0) / H
        return A, H

    return coefficients


def build_oscillating_forms(a, eps, nx, ny):
    """Dirichlet forms on ``{0 < x < 1, -1 < y < a (1 + sin(x / eps))}``."""
    if a < 0:
        raise ParameterError("amplitude must be >= 0")
    if not eps > 0:
        raise ParameterError("eps must be > 0")

    def to_physical(nodes):
        x, t = nodes[:, 0], nodes[:, 1]
        H = 1.0 + a * (1.0 + np.sin(x / eps))
        return np.column_stack([x, -1.0 + H * t])

    mesh = rect_mesh(0.0, 1.0, 0.0, 1.0, nx, ny, to_physical=to_physical)
    K_full, M_full = assemble_q1(mesh, oscillating_coefficients(a, eps))
    eliminated = mesh.tagged_nodes("outer")
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    mask[eliminated] = True
    P, dof_map = _prolongation(mesh.n_nodes, eliminated)
    K, M = _reduce(K_full, M_full, P)
    return AssembledForms(K, M, K_full, M_full, P, mask, dof_map, mesh=mesh)


def write_mesh(mesh, path):
    """Plain-text dump: one record per node, element and tagged boundary edge.

    ``node <index> <x> <y>`` in physical coordinates,
    ``quad <index> <n0> <n1> <n2> <n3>``, ``edge <n0> <n1> <tag>``.
    """
    phys = mesh.physical_nodes()
    with open(path, "w", encoding="ascii") as fh:
        for i, (x, y) in enumerate(phys):
            fh.write(f"node {i} {x:.17g} {y:.17g}\n")
        for e, q in enumerate(mesh.quads):
            fh.write(f"quad {e} {q[0]} {q[1]} {q[2]} {q[3]}\n")
        for (a, b), tag in zip(mesh.edges, mesh.edge_tags):
            fh.write(f"edge {a} {b} {tag}\n")
