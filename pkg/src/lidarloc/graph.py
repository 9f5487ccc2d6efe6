"""GPS-constrained pose graph: residuals, Levenberg-Marquardt, map assembly.

State and conventions
---------------------
Each node holds a ``Pose3`` estimate.  During optimization a free node is
updated right-multiplicatively, ``T <- T o P(delta)`` with the 6-vector
local step ``delta = [dt, dr]`` applied as ``P(delta) = (Exp(dr), dt)``
(rotation-vector exponential; translation used directly).  Residuals:

* odometry/loop edge (i -> j) with measurement Z:
  ``D = Z^-1 o (T_i^-1 o T_j)``, residual ``[D.translation, Log(D.R)]``
  (meters, radians).  Information matrices are 6x6 in that block order.
* GPS edge on node n: ``T_n.translation - measured`` (meters), 3x3
  information, i.e. GPS constrains translation only.

The total objective is ``F(p) = sum_e r^T H r`` over all edges.  The LM
loop only keeps steps that strictly decrease F(p); the damping factor is
halved on accepted steps and quadrupled on rejected ones.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse
from scipy.sparse.linalg import spsolve
from scipy.spatial.transform import Rotation

from . import icp as _icp
from .cloud import PointCloud, build_index, voxel_downsample
from .errors import (
    DanglingNodeError,
    DegenerateGeometryError,
    EmptyInputError,
    GaugeFreedomError,
    InsufficientOverlapError,
    InvalidEdgeError,
    InvalidParameterError,
)
from .geom import Pose3, apply, compose, inverse, relative

log = logging.getLogger(__name__)

# Defaults for edge uncertainties when the caller has nothing better.
DEFAULT_ODOMETRY_SIGMA_TRANSLATION = 0.05  # m per meter travelled
DEFAULT_ODOMETRY_SIGMA_ROTATION = 0.01  # rad
DEFAULT_GPS_SIGMA = 0.02  # m

_STEP_NORM_EPS = 1e-10
_RELATIVE_DECREASE_EPS = 1e-9


def _check_information(info, size: int) -> np.ndarray:
    m = np.asarray(info, dtype=float)
    if m.shape != (size, size):
        raise InvalidEdgeError(f"information must be {size}x{size}")
    if not np.all(np.isfinite(m)):
        raise InvalidEdgeError("information must be finite")
    if np.max(np.abs(m - m.T)) > 1e-9:
        raise InvalidEdgeError("information must be symmetric within 1e-9")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise InvalidEdgeError("information must be positive definite") from exc
    return 0.5 * (m + m.T)


@dataclass(eq=False)
class PoseNode:
    id: int
    estimate: Pose3
    fixed: bool = False


@dataclass(frozen=True, eq=False)
class OdometryEdge:
    """Relative-pose constraint between consecutive trajectory nodes."""

    from_id: int
    to_id: int
    measured_relative: Pose3  # frame from_id -> frame to_id
    information: np.ndarray  # 6x6, [translation, rotation] blocks

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise InvalidEdgeError("edge endpoints must differ")
        object.__setattr__(
            self, "information", _check_information(self.information, 6)
        )


@dataclass(frozen=True, eq=False)
class LoopEdge(OdometryEdge):
    """Same payload as an odometry edge but between revisited, non-adjacent nodes."""

    def __post_init__(self):
        super().__post_init__()
        if abs(self.from_id - self.to_id) <= 1:
            raise InvalidEdgeError("loop edge must join non-consecutive nodes")


@dataclass(frozen=True, eq=False)
class GpsEdge:
    node_id: int
    measured_position: np.ndarray  # (3,) in the map frame
    information: np.ndarray  # 3x3

    def __post_init__(self):
        p = np.asarray(self.measured_position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise InvalidEdgeError("measured_position must be finite")
        object.__setattr__(self, "measured_position", p)
        object.__setattr__(
            self, "information", _check_information(self.information, 3)
        )


def odometry_information(
    sigma_translation: float, sigma_rotation: float
) -> np.ndarray:
    if not sigma_translation > 0.0 or not sigma_rotation > 0.0:
        raise InvalidParameterError("sigmas must be > 0")
    w = [1.0 / sigma_translation**2] * 3 + [1.0 / sigma_rotation**2] * 3
    return np.diag(w)


def gps_information(sigma: float) -> np.ndarray:
    if not sigma > 0.0:
        raise InvalidParameterError("sigma must be > 0")
    return np.eye(3) / sigma**2


class PoseGraph:
    """Nodes keyed by integer id plus a flat edge list."""

    def __init__(self):
        self.nodes: dict[int, PoseNode] = {}
        self.edges: list = []

    def add_node(self, node_id: int, estimate: Pose3, fixed: bool = False) -> PoseNode:
        if node_id in self.nodes:
            raise InvalidParameterError(f"duplicate node id {node_id}")
        node = PoseNode(int(node_id), estimate, bool(fixed))
        self.nodes[node.id] = node
        return node

    def add_edge(self, edge) -> None:
        for nid in _edge_node_ids(edge):
            if nid not in self.nodes:
                raise DanglingNodeError(f"edge references unknown node {nid}")
        self.edges.append(edge)


def _edge_node_ids(edge) -> tuple[int, ...]:
    if isinstance(edge, GpsEdge):
        return (edge.node_id,)
    if isinstance(edge, OdometryEdge):
        return (edge.from_id, edge.to_id)
    raise InvalidEdgeError(f"unknown edge type {type(edge).__name__}")


def _node(nodes, nid: int) -> PoseNode:
    try:
        return nodes[nid]
    except KeyError:
        raise DanglingNodeError(f"edge references unknown node {nid}") from None


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _rotvec_step_matrix(phi: np.ndarray) -> np.ndarray:
    """d Log(R Exp(dr)) / d dr at dr = 0, for phi = Log(R).

    Closed form of the inverse right Jacobian of SO(3); series fallback
    below 1e-4 rad where the trigonometric form loses digits.
    """
    theta2 = float(phi @ phi)
    k = _skew(phi)
    if theta2 < 1e-8:
        c = 1.0 / 12.0 + theta2 / 720.0
    else:
        theta = math.sqrt(theta2)
        c = 1.0 / theta2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * k + c * (k @ k)


def residual(edge, nodes) -> np.ndarray:
    """Stacked residual vector of one edge given a node mapping."""
    if isinstance(edge, GpsEdge):
        node = _node(nodes, edge.node_id)
        return node.estimate.translation - edge.measured_position
    ti = _node(nodes, edge.from_id).estimate
    tj = _node(nodes, edge.to_id).estimate
    disc = compose(inverse(edge.measured_relative), relative(ti, tj))
    rot = Rotation.from_quat(disc.quaternion).as_rotvec()
    return np.concatenate([disc.translation, rot])


def residual_and_jacobians(edge, nodes):
    """Residual plus analytic Jacobians w.r.t. each endpoint's local step.

    Returns ``(r, [(node_id, J), ...])`` where each J has one 6-column
    block in ``[dt, dr]`` order.  Fixed nodes are included; the assembler
    drops them.
    """
    if isinstance(edge, GpsEdge):
        node = _node(nodes, edge.node_id)
        r = node.estimate.translation - edge.measured_position
        jac = np.zeros((3, 6))
        jac[:, :3] = node.estimate.rotation_matrix
        return r, [(edge.node_id, jac)]

    ti = _node(nodes, edge.from_id).estimate
    tj = _node(nodes, edge.to_id).estimate
    z = edge.measured_relative
    m = relative(ti, tj)
    r_z_t = z.rotation_matrix.T
    r_m = m.rotation_matrix
    disc_rot = r_z_t @ r_m
    e_t = r_z_t @ (m.translation - z.translation)
    phi = Rotation.from_matrix(disc_rot).as_rotvec()
    step = _rotvec_step_matrix(phi)

    j_i = np.zeros((6, 6))
    j_i[:3, :3] = -r_z_t
    j_i[:3, 3:] = r_z_t @ _skew(m.translation)
    j_i[3:, 3:] = -step @ r_m.T

    j_j = np.zeros((6, 6))
    j_j[:3, :3] = disc_rot
    j_j[3:, 3:] = step

    r = np.concatenate([e_t, phi])
    return r, [(edge.from_id, j_i), (edge.to_id, j_j)]


def total_cost(graph: PoseGraph) -> float:
    """F(p): information-weighted squared residuals over every edge.

    Summed with ``math.fsum`` so the value does not depend on edge order.
    """
    terms = []
    for edge in graph.edges:
        r = residual(edge, graph.nodes)
        terms.append(float(r @ edge.information @ r))
    return math.fsum(terms)


@dataclass(frozen=True)
class OptimizeReport:
    costs: tuple[float, ...]  # accepted F(p) values, starting at the initial cost
    iterations: int  # LM trial steps, accepted and rejected
    accepted: int
    termination: str  # "max_iterations" | "relative_decrease" | "step_norm"
    lambda_final: float


def _perturb(pose: Pose3, delta: np.ndarray) -> Pose3:
    step = Pose3(Rotation.from_rotvec(delta[3:]).as_quat(), delta[:3])
    return compose(pose, step)


def _assemble(graph: PoseGraph, offsets: dict[int, int], dim: int):
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    b = np.zeros(dim)
    for edge in graph.edges:
        r, jacs = residual_and_jacobians(edge, graph.nodes)
        h = edge.information
        jacs = [(nid, jac) for nid, jac in jacs if nid in offsets]
        for nid, jac in jacs:
            b[offsets[nid] : offsets[nid] + 6] -= jac.T @ (h @ r)
        for nid_a, jac_a in jacs:
            for nid_b, jac_b in jacs:
                block = jac_a.T @ h @ jac_b
                oa, ob = offsets[nid_a], offsets[nid_b]
                rr, cc = np.meshgrid(
                    np.arange(oa, oa + 6), np.arange(ob, ob + 6), indexing="ij"
                )
                rows.append(rr.ravel())
                cols.append(cc.ravel())
                vals.append(block.ravel())
    a = scipy.sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )
    return a, b


def optimize(
    graph: PoseGraph, max_iterations: int = 50, lambda_init: float = 1e-4
) -> tuple[PoseGraph, OptimizeReport]:
    """Damped Gauss-Newton (Levenberg-Marquardt) over all free nodes.

    Terminates on the iteration budget, a relative cost decrease below
    1e-9 on an accepted step, or a step norm below 1e-10.  Node estimates
    are updated in place.
    """
    if max_iterations < 1:
        raise InvalidParameterError("max_iterations must be >= 1")
    if not lambda_init > 0.0:
        raise InvalidParameterError("lambda_init must be > 0")
    has_anchor = any(n.fixed for n in graph.nodes.values()) or any(
        isinstance(e, GpsEdge) for e in graph.edges
    )
    if not has_anchor:
        raise GaugeFreedomError("graph needs a fixed node or a GPS edge")

    free_ids = [nid for nid in sorted(graph.nodes) if not graph.nodes[nid].fixed]
    offsets = {nid: 6 * k for k, nid in enumerate(free_ids)}
    dim = 6 * len(free_ids)

    cost = total_cost(graph)
    costs = [cost]
    lam = float(lambda_init)
    iterations = 0
    accepted = 0
    termination = "max_iterations"

    if dim == 0 or not graph.edges or cost == 0.0:
        return graph, OptimizeReport(tuple(costs), 0, 0, "relative_decrease", lam)

    identity = scipy.sparse.identity(dim, format="csc")
    a = b = None
    stale = True
    while iterations < max_iterations:
        iterations += 1
        if stale:
            a, b = _assemble(graph, offsets, dim)
            stale = False
        delta = spsolve(a + lam * identity, b)
        if float(np.linalg.norm(delta)) < _STEP_NORM_EPS:
            termination = "step_norm"
            break
        saved = {nid: graph.nodes[nid].estimate for nid in free_ids}
        for nid in free_ids:
            off = offsets[nid]
            graph.nodes[nid].estimate = _perturb(saved[nid], delta[off : off + 6])
        new_cost = total_cost(graph)
        if new_cost < cost:
            decrease = (cost - new_cost) / max(cost, 1e-300)
            cost = new_cost
            costs.append(new_cost)
            accepted += 1
            lam = max(lam * 0.5, 1e-15)
            stale = True
            if decrease < _RELATIVE_DECREASE_EPS:
                termination = "relative_decrease"
                break
        else:
            for nid in free_ids:
                graph.nodes[nid].estimate = saved[nid]
            lam *= 4.0
    return graph, OptimizeReport(
        tuple(costs), iterations, accepted, termination, lam
    )


def detect_loop_candidates(
    trajectory, radius: float, min_index_gap: int
) -> list[tuple[int, int]]:
    """Index pairs (i < j) whose positions come back within ``radius``.

    ``trajectory`` may hold PoseNode or bare Pose3 entries.  Pairs closer
    than ``min_index_gap`` in sequence are skipped so immediate neighbours
    do not masquerade as revisits.
    """
    if not radius > 0.0:
        raise InvalidParameterError("radius must be > 0")
    if min_index_gap < 0:
        raise InvalidParameterError("min_index_gap must be >= 0")
    positions = np.array(
        [
            (p.estimate.translation if hasattr(p, "estimate") else p.translation)
            for p in trajectory
        ]
    ).reshape(-1, 3)
    n = positions.shape[0]
    pairs = []
    for i in range(n):
        j0 = i + max(min_index_gap, 1)
        if j0 >= n:
            break
        dist = np.linalg.norm(positions[j0:] - positions[i], axis=1)
        for off in np.flatnonzero(dist < radius):
            pairs.append((i, j0 + int(off)))
    return pairs


@dataclass(frozen=True, eq=False)
class MapParams:
    """Knobs for ``build_map``; defaults follow the survey-cart setup."""

    voxel_size: float = 0.2
    odom_sigma_translation: float = DEFAULT_ODOMETRY_SIGMA_TRANSLATION  # per meter
    odom_sigma_rotation: float = DEFAULT_ODOMETRY_SIGMA_ROTATION
    gps_sigma: float = DEFAULT_GPS_SIGMA
    lever_arm: Pose3 = field(default_factory=Pose3.identity)
    loop_radius: float = 3.0
    loop_min_index_gap: int = 20
    loop_voxel_size: float = 0.2
    loop_icp: _icp.IcpParams = field(
        default_factory=lambda: _icp.IcpParams(delta=1.0, min_inliers=50)
    )
    loop_sigma_translation: float = 0.05
    loop_sigma_rotation: float = 0.01
    use_loop_closure: bool = True
    max_iterations: int = 75
    lambda_init: float = 1e-4


def build_map(keyframes, gps, params: MapParams = MapParams()):
    """Assemble, optimize, and fuse keyframes into a prior map.

    ``keyframes`` is a sequence of ``(odometry_pose, scan)`` with scans in
    the sensor frame; ``gps`` is a sequence of ``GpsEdge`` keyed by
    keyframe index.  Returns ``(trajectory, map_cloud)`` where trajectory
    holds the optimized keyframe poses and the map is the union of all
    scans re-posed by them, voxel-thinned at ``params.voxel_size``.
    """
    keyframes = list(keyframes)
    gps = list(gps)
    if not keyframes:
        raise EmptyInputError("no keyframes")
    graph = PoseGraph()
    for k, (pose, _scan) in enumerate(keyframes):
        graph.add_node(k, pose, fixed=(k == 0 and not gps))
    for k in range(1, len(keyframes)):
        meas = relative(keyframes[k - 1][0], keyframes[k][0])
        dist = float(np.linalg.norm(meas.translation))
        info = odometry_information(
            params.odom_sigma_translation * max(dist, 0.1),
            params.odom_sigma_rotation,
        )
        graph.add_edge(OdometryEdge(k - 1, k, meas, info))
    lever = params.lever_arm.translation
    for edge in gps:
        measured = edge.measured_position
        if np.any(lever != 0.0):
            # Antenna offset folded in with the odometry attitude; exact
            # once the optimized attitude matches the real one.
            rot = graph.nodes[edge.node_id].estimate.rotation_matrix
            measured = measured - rot @ lever
        graph.add_edge(GpsEdge(edge.node_id, measured, edge.information))
    if params.use_loop_closure:
        for i, j in _select_loop_pairs(keyframes, params):
            edge = _verify_loop(keyframes, i, j, params)
            if edge is not None:
                graph.add_edge(edge)
    optimize(graph, params.max_iterations, params.lambda_init)
    trajectory = [graph.nodes[k].estimate for k in range(len(keyframes))]
    chunks = [
        apply(trajectory[k], scan.points)
        for k, (_pose, scan) in enumerate(keyframes)
        if len(scan)
    ]
    if chunks:
        merged = voxel_downsample(
            PointCloud(np.vstack(chunks)), params.voxel_size
        )
    else:
        merged = PointCloud(np.zeros((0, 3)))
    return trajectory, merged


def _select_loop_pairs(keyframes, params: MapParams):
    nodes = [pose for pose, _ in keyframes]
    candidates = detect_loop_candidates(
        nodes, params.loop_radius, params.loop_min_index_gap
    )
    best: dict[int, tuple[int, float]] = {}
    for i, j in candidates:
        d = float(
            np.linalg.norm(
                keyframes[i][0].translation - keyframes[j][0].translation
            )
        )
        if j not in best or d < best[j][1]:
            best[j] = (i, d)
    return [(i, j) for j, (i, _d) in sorted(best.items())]


def _verify_loop(keyframes, i: int, j: int, params: MapParams):
    pose_i, scan_i = keyframes[i]
    pose_j, scan_j = keyframes[j]
    if len(scan_i) == 0 or len(scan_j) == 0:
        return None
    guess = relative(pose_i, pose_j)
    try:
        target = build_index(scan_i, params.loop_voxel_size)
        source = voxel_downsample(scan_j, params.loop_voxel_size)
        result = _icp.register(source, target, guess, params.loop_icp)
    except (InsufficientOverlapError, DegenerateGeometryError):
        return None
    if not result.converged or result.inlier_count < params.loop_icp.min_inliers:
        return None
    info = odometry_information(
        params.loop_sigma_translation, params.loop_sigma_rotation
    )
    log.debug("loop edge %d -> %d (%d inliers)", i, j, result.inlier_count)
    return LoopEdge(i, j, result.transform, info)


# --- ASCII round trip ------------------------------------------------------


def _upper_triangle(m: np.ndarray) -> list[float]:
    n = m.shape[0]
    return [float(m[r, c]) for r in range(n) for c in range(r, n)]


def _from_upper_triangle(values, n: int) -> np.ndarray:
    m = np.zeros((n, n))
    it = iter(values)
    for r in range(n):
        for c in range(r, n):
            m[r, c] = m[c, r] = next(it)
    return m


def _fmt(values) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def dump_graph(graph: PoseGraph, path) -> None:
    """One record per line: NODE / EDGE_ODOM / EDGE_GPS / EDGE_LOOP."""
    with open(path, "w") as fh:
        for nid in sorted(graph.nodes):
            node = graph.nodes[nid]
            pose = _fmt([*node.estimate.translation, *node.estimate.quaternion])
            fixed = " FIXED" if node.fixed else ""
            fh.write(f"NODE {nid} {pose}{fixed}\n")
        for edge in graph.edges:
            if isinstance(edge, GpsEdge):
                fh.write(
                    f"EDGE_GPS {edge.node_id} {_fmt(edge.measured_position)} "
                    f"{_fmt(_upper_triangle(edge.information))}\n"
                )
                continue
            tag = "EDGE_LOOP" if isinstance(edge, LoopEdge) else "EDGE_ODOM"
            z = edge.measured_relative
            fh.write(
                f"{tag} {edge.from_id} {edge.to_id} "
                f"{_fmt([*z.translation, *z.quaternion])} "
                f"{_fmt(_upper_triangle(edge.information))}\n"
            )


def load_graph(path) -> PoseGraph:
    graph = PoseGraph()
    pending = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "NODE":
                    fixed = parts[-1] == "FIXED"
                    vals = [float(v) for v in (parts[2:-1] if fixed else parts[2:])]
                    if len(vals) != 7:
                        raise InvalidParameterError("NODE needs 7 pose floats")
                    graph.add_node(
                        int(parts[1]),
                        Pose3(np.array(vals[3:7]), np.array(vals[0:3])),
                        fixed,
                    )
                elif tag in ("EDGE_ODOM", "EDGE_LOOP"):
                    vals = [float(v) for v in parts[3:]]
                    if len(vals) != 7 + 21:
                        raise InvalidParameterError(f"{tag} needs 28 floats")
                    cls = LoopEdge if tag == "EDGE_LOOP" else OdometryEdge
                    pending.append(
                        cls(
                            int(parts[1]),
                            int(parts[2]),
                            Pose3(np.array(vals[3:7]), np.array(vals[0:3])),
                            _from_upper_triangle(vals[7:], 6),
                        )
                    )
                elif tag == "EDGE_GPS":
                    vals = [float(v) for v in parts[2:]]
                    if len(vals) != 3 + 6:
                        raise InvalidParameterError("EDGE_GPS needs 9 floats")
                    pending.append(
                        GpsEdge(
                            int(parts[1]),
                            np.array(vals[0:3]),
                            _from_upper_triangle(vals[3:], 3),
                        )
                    )
                else:
                    raise InvalidParameterError(f"unknown record {tag!r}")
            except (ValueError, InvalidEdgeError) as exc:
                raise InvalidParameterError(f"{path}:{lineno}: {exc}") from exc
    for edge in pending:
        graph.add_edge(edge)
    return graph
