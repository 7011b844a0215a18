"""Position-indexed decoding maps: construction, symmetry reuse, clustering.

A map samples the receiver plane on a corner-inclusive grid and stores, per
cell, the greedy decoding order and local rate allocation (or an outage
marker).  On arrays with mirror/diagonal symmetry only a fundamental 1/8
wedge is solved directly; the rest is obtained by relabeling transmitters.
Clustering (the size-reduction pass) groups cells whose decoding orders are
interchangeable up to a small normalized rate loss.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import Scene, gain_vector
from .cpgd import DecodingOrder, greedy_order, outage_order, rates_under_fixed_order
from .errors import IncompatiblePositionsError, InvalidParameterError
from .rates import LN2, RateModel, geometric_tiebreak, model_at
from .signaling import LayerTable

TRANSFORMS = ("diagonal", "horizontal", "vertical")


# ---------------------------------------------------------------------------
# Index-matrix symmetry transforms


@dataclass(frozen=True)
class IndexMatrix:
    """Matrix of transmitter labels laid out on the array grid."""

    labels: tuple[tuple[int, ...], ...]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.labels), len(self.labels[0])

    def locate(self, label: int) -> tuple[int, int]:
        for i, row in enumerate(self.labels):
            for j, val in enumerate(row):
                if val == label:
                    return i, j
        raise KeyError(label)


def transformed_labels(matrix: IndexMatrix, transform: str) -> IndexMatrix:
    """The relabeled matrix for one reflection.

    ``vertical`` reflects across the vertical center line (row flip),
    ``horizontal`` across the horizontal center line (column flip),
    ``diagonal`` is the anti-transpose (square arrays only).
    """
    a = np.array(matrix.labels)
    nh, nv = a.shape
    if transform == "vertical":
        out = a[::-1, :]
    elif transform == "horizontal":
        out = a[:, ::-1]
    elif transform == "diagonal":
        if nh != nv:
            raise InvalidParameterError("diagonal transform needs a square array")
        out = a[::-1, ::-1].T
    else:
        raise InvalidParameterError(f"unknown transform {transform!r}")
    return IndexMatrix(tuple(tuple(int(v) for v in row) for row in out))


def label_permutation(matrix: IndexMatrix, transform: str) -> dict[int, int]:
    """Per-transmitter relabeling induced by one reflection."""
    perm_matrix = transformed_labels(matrix, transform)
    out = {}
    for i, row in enumerate(matrix.labels):
        for j, label in enumerate(row):
            out[label] = perm_matrix.labels[i][j]
    return out


def symmetry_transform(
    groups: list[tuple[tuple[int, int], ...]],
    matrix: IndexMatrix,
    transform: str,
) -> list[tuple[tuple[int, int], ...]]:
    """Relabel a decoding order of (transmitter, layer) pairs across a mirror."""
    perm = label_permutation(matrix, transform)
    return [tuple((perm[i], k) for (i, k) in grp) for grp in groups]


# ---------------------------------------------------------------------------
# Scene-level symmetry helpers


def _position_permutation(scene: Scene, transform: str) -> np.ndarray | None:
    """Permutation of position labels under a reflection, or None if unusable."""
    layout = scene.layout
    if layout is None:
        return None
    if transform == "diagonal" and (
        layout.n_x != layout.n_y or layout.spacing_x != layout.spacing_y
    ):
        return None
    idx = layout.position_index
    if transform == "vertical":
        image = idx[::-1, :]
    elif transform == "horizontal":
        image = idx[:, ::-1]
    else:
        image = idx[::-1, ::-1].T
    perm = np.empty(idx.size, dtype=int)
    perm[idx.ravel()] = image.ravel()
    return perm


def _uniform_positions(scene: Scene) -> bool:
    """True when every array position carries identical colors and powers."""
    layout = scene.layout
    if layout is None or getattr(layout, "tx_position", None) is None:
        return False
    groups: dict[int, list[int]] = {}
    for t, p in enumerate(layout.tx_position):
        groups.setdefault(int(p), []).append(t)
    sigs = {
        tuple(
            (int(scene.tx_color[t]), float(scene.peak_power[t]), float(scene.avg_power[t]))
            for t in txs
        )
        for txs in groups.values()
    }
    return len(sigs) == 1


def available_transforms(scene: Scene) -> tuple[str, ...]:
    """Reflections under which the transmitter configuration is invariant."""
    if not _uniform_positions(scene):
        return ()
    plane = scene.plane
    out = []
    for name in ("vertical", "horizontal"):
        if _position_permutation(scene, name) is not None:
            out.append(name)
    if (
        "vertical" in out
        and "horizontal" in out
        and _position_permutation(scene, "diagonal") is not None
        and plane.width == plane.length
    ):
        out.append("diagonal")
    return tuple(out)


def layer_permutation(
    scene: Scene, table: LayerTable, transform: str
) -> np.ndarray:
    """Permutation of 0-based layer ids under one reflection."""
    layout = scene.layout
    pos_perm = _position_permutation(scene, transform)
    if pos_perm is None:
        raise InvalidParameterError(f"transform {transform!r} unavailable for this scene")
    # Transmitter at (position p, color slot c) maps to the same slot at the
    # image position; transmitters are ordered position-major by construction.
    by_pos: dict[int, list[int]] = {}
    for t, p in enumerate(layout.tx_position):
        by_pos.setdefault(int(p), []).append(t)
    tx_perm = np.empty(scene.n_tx, dtype=int)
    for p, txs in by_pos.items():
        for slot, t in enumerate(txs):
            tx_perm[t] = by_pos[int(pos_perm[p])][slot]
    out = np.empty(table.n_layers, dtype=int)
    for k in range(table.n_layers):
        out[k] = table.layer_id(int(tx_perm[table.tx[k]]), int(table.layer_no[k]))
    return out


def apply_layer_permutation(order: DecodingOrder, perm: np.ndarray) -> DecodingOrder:
    """Relabel an order's layers, carrying rates along as permuted copies."""
    rates = np.full_like(order.rates, np.nan)
    rates[perm] = order.rates
    return DecodingOrder(
        groups=[tuple(sorted(int(perm[k]) for k in grp)) for grp in order.groups],
        rates=rates,
        detectable=tuple(sorted(int(perm[k]) for k in order.detectable)),
        position=None,
        outage=order.outage,
    )


# ---------------------------------------------------------------------------
# Map construction


@dataclass
class MapCell:
    ix: int
    iy: int
    position: tuple[float, float, float]
    order: DecodingOrder
    provenance: str = "computed"          # or "derived"
    source: tuple[int, int] | None = None
    transforms: tuple[str, ...] = ()
    cluster: int = -1


@dataclass
class DecodingMap:
    scene_hash: str
    filter_index: int
    tau: int
    noise_var: float
    xs: np.ndarray
    ys: np.ndarray
    n_layers: int
    cells: list[MapCell]
    thresholds: tuple[float, float] | None = None
    cluster_count: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.xs.size, self.ys.size

    def cell(self, ix: int, iy: int) -> MapCell:
        return self.cells[ix * self.ys.size + iy]

    def cell_at(self, x: float, y: float) -> MapCell:
        ix = int(round((x - self.xs[0]) / (self.xs[1] - self.xs[0])))
        iy = int(round((y - self.ys[0]) / (self.ys[1] - self.ys[0])))
        if not (0 <= ix < self.xs.size and 0 <= iy < self.ys.size):
            raise KeyError(f"position ({x}, {y}) outside the mapped plane")
        return self.cell(ix, iy)

    @property
    def n_active(self) -> int:
        return sum(not c.order.outage for c in self.cells)

    @property
    def compression_ratio(self) -> float:
        if self.cluster_count == 0 or self.n_active == 0:
            return 0.0
        return (self.n_active - self.cluster_count) / self.n_active


def scene_fingerprint(scene: Scene) -> str:
    payload = repr(
        (
            scene.tx_positions.tolist(),
            scene.tx_color.tolist(),
            [(b.low_nm, b.high_nm, b.leakage) for b in scene.bands],
            scene.filters,
            scene.lambertian_order,
            scene.pd_area,
            scene.refractive_index,
            scene.fov,
            scene.sigma,
            scene.peak_power.tolist(),
            scene.avg_power.tolist(),
        )
    ).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _has_duplicate_tx_gains(gains: np.ndarray, rtol: float = 1e-9) -> bool:
    """Near-equal gains from (almost) equidistant transmitters.

    Exact equality is not enough: grid positions equidistant from two
    transmitters give gains that differ only in the last few ulps, and the
    greedy tie-break then flips between mirror cells.
    """
    nz = np.sort(gains[gains != 0.0])
    return nz.size > 1 and bool(np.any(np.diff(nz) <= rtol * nz[-1]))


def build_map(
    scene: Scene,
    table: LayerTable,
    filter_index: int,
    tau: int = 1,
    use_symmetry: bool = True,
) -> DecodingMap:
    """Solve the greedy order at every sample position of the receiver plane.

    With ``use_symmetry`` and a symmetric array, only cells inside the
    fundamental wedge (and cells whose gain vectors carry exact ties, where
    relabel-equivariance is not guaranteed) are solved directly; the rest are
    relabeled copies of their wedge source.
    """
    xs, ys = scene.plane.grid()
    nx, ny = xs.size, ys.size
    z = scene.plane.height
    transforms = available_transforms(scene) if use_symmetry else ()
    perms = {t: layer_permutation(scene, table, t) for t in transforms}

    gains = np.empty((nx * ny, scene.n_tx))
    for ix in range(nx):
        for iy in range(ny):
            gains[ix * ny + iy] = gain_vector(scene, (xs[ix], ys[iy], z), filter_index)
    # Same tie-break keys model_at_position uses, so map cells agree with
    # direct per-position recomputation.
    tiebreak = geometric_tiebreak(scene, table)

    def rep_sequence(ix: int, iy: int) -> tuple[tuple[int, int], list[str]]:
        """Wedge representative of a cell and the reflections mapping it out."""
        u, v = 2 * ix - (nx - 1), 2 * iy - (ny - 1)
        seq: list[str] = []
        if u < 0 and "vertical" in transforms:
            u = -u
            seq.append("vertical")
        if v < 0 and "horizontal" in transforms:
            v = -v
            seq.append("horizontal")
        if u > v and "diagonal" in transforms:
            u, v = v, u
            seq += ["diagonal", "vertical", "horizontal"]
        return ((u + (nx - 1)) // 2, (v + (ny - 1)) // 2), list(reversed(seq))

    noise_var = scene.sigma**2
    cells: list[MapCell] = []
    computed: dict[tuple[int, int], DecodingOrder] = {}

    def solve(ix: int, iy: int) -> DecodingOrder:
        if (ix, iy) not in computed:
            model = model_at(table, gains[ix * ny + iy], noise_var, tiebreak)
            computed[(ix, iy)] = greedy_order(
                model, tau=tau, position=(float(xs[ix]), float(ys[iy]), z)
            )
        return computed[(ix, iy)]

    for ix in range(nx):
        for iy in range(ny):
            pos = (float(xs[ix]), float(ys[iy]), z)
            (sx, sy), seq = rep_sequence(ix, iy)
            derived = bool(seq) and not _has_duplicate_tx_gains(gains[ix * ny + iy])
            if derived:
                order = solve(sx, sy)
                if order.outage:
                    order = outage_order(table.n_layers, pos)
                else:
                    for t in seq:
                        order = apply_layer_permutation(order, perms[t])
                    order.position = pos
                cells.append(
                    MapCell(ix, iy, pos, order, "derived", (sx, sy), tuple(seq))
                )
            else:
                cells.append(MapCell(ix, iy, pos, solve(ix, iy)))
    return DecodingMap(
        scene_hash=scene_fingerprint(scene),
        filter_index=filter_index,
        tau=tau,
        noise_var=noise_var,
        xs=xs,
        ys=ys,
        n_layers=table.n_layers,
        cells=cells,
    )


# ---------------------------------------------------------------------------
# Normalized distance and size reduction


def normalized_distance(
    order_src: DecodingOrder, order_dst: DecodingOrder, model_dst: RateModel
) -> float:
    """Normalized rate loss of reusing one cell's order at another cell.

    Both rate vectors span all layers: layers undetectable at the
    destination carry zero rate, and destination layers the source order
    never decodes are lost entirely (zero in the mimicking vector), so the
    distance is finite even when the two cells detect different layer sets.
    """
    if order_src.outage or order_dst.outage:
        raise IncompatiblePositionsError("outage positions have no decoding order")
    n = order_dst.rates.size
    ref = np.zeros(n)
    idx = list(order_dst.detectable)
    ref[idx] = order_dst.rates[idx]
    mimic = np.zeros(n)
    flat = [k for grp in order_src.groups for k in grp]
    vals = rates_under_fixed_order(model_dst, order_src.groups)
    mimic[flat] = vals[flat]
    mimic[model_dst.gains == 0.0] = 0.0
    norm = float(np.linalg.norm(ref))
    diff = float(np.linalg.norm(ref - mimic))
    if norm == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / norm


def _distance_matrix_tau1(
    orders: list[DecodingOrder],
    layer_gains: np.ndarray,
    table: LayerTable,
    noise_var: float,
) -> np.ndarray:
    """d[i, j] = distance of using cell i's order at cell j, group size 1.

    Vectorized over destinations: one pass per source order evaluates its
    stage sequence against every cell's gains at once.  Layers undetectable
    at the destination get zero rate; destination layers missing from the
    source order stay zero in the mimicking vector.
    """
    n = len(orders)
    L = table.n_layers
    pw = layer_gains**2 * table.var          # (n, L)
    ref = np.zeros((n, L))
    for r, o in enumerate(orders):
        idx = list(o.detectable)
        ref[r, idx] = o.rates[idx]
    ref_norm = np.linalg.norm(ref, axis=1)
    log_nu2 = np.log(table.nu**2)
    var = table.var
    phi = table.phi
    out = np.empty((n, n))
    for i in range(n):
        seq = [g[0] for g in orders[i].groups]  # decode order, stage 0 first
        p = pw[:, seq]
        suffix = np.concatenate(
            [np.cumsum(p[:, ::-1], axis=1)[:, ::-1][:, 1:], np.zeros((n, 1))], axis=1
        )
        denom = p + suffix + noise_var
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = (
                0.5 * (log_nu2[seq] - np.log(var[seq] - p * var[seq] / denom))
                - phi[seq]
            ) / LN2
        np.maximum(vals, 0.0, out=vals)
        vals[p == 0.0] = 0.0
        mimic = np.zeros((n, L))
        mimic[:, seq] = vals
        diff = np.linalg.norm(ref - mimic, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[i] = np.where(
                ref_norm > 0.0, diff / ref_norm, np.where(diff == 0.0, 0.0, np.inf)
            )
    return out


def reduce_map(
    dmap: DecodingMap,
    scene: Scene,
    table: LayerTable,
    tau_diff: float = 1e-5,
    tau_loss: float = 0.1,
) -> list[list[int]]:
    """Cluster map cells that can share one representative decoding order.

    All non-outage cells start as one category and are refined with the
    peel-by-average-distance pass: while a category's maximum average
    distance exceeds ``tau_loss``, members whose average distance is within
    ``tau_diff`` of the current head's are split off together, iterating
    until the category count stabilizes.  Returns the clusters as lists of
    cell indices (row-major) and stores labels on the map.
    """
    z = scene.plane.height
    members = [c for c, cell in enumerate(dmap.cells) if not cell.order.outage]
    if not members:
        dmap.thresholds = (tau_diff, tau_loss)
        dmap.cluster_count = 0
        return []
    orders = [dmap.cells[c].order for c in members]
    layer_gains = np.empty((len(members), table.n_layers))
    for r, c in enumerate(members):
        cell = dmap.cells[c]
        g = gain_vector(
            scene, (dmap.xs[cell.ix], dmap.ys[cell.iy], z), dmap.filter_index
        )
        layer_gains[r] = g[table.tx]
    if dmap.tau == 1:
        dist = _distance_matrix_tau1(orders, layer_gains, table, dmap.noise_var)
    else:
        dist = np.empty((len(members), len(members)))
        models = [
            RateModel(
                gains=layer_gains[j],
                nu2=table.nu**2,
                var=table.var.copy(),
                phi=table.phi.copy(),
                noise_var=dmap.noise_var,
            )
            for j in range(len(members))
        ]
        for i in range(len(members)):
            for j in range(len(members)):
                dist[i, j] = normalized_distance(orders[i], orders[j], models[j])
    clusters = [
        [members[r] for r in cat] for cat in _peel_categories(dist, tau_diff, tau_loss)
    ]

    for label, cluster in enumerate(clusters):
        for c in cluster:
            dmap.cells[c].cluster = label
    dmap.thresholds = (tau_diff, tau_loss)
    dmap.cluster_count = len(clusters)
    return clusters


def _peel_categories(
    dist: np.ndarray, tau_diff: float, tau_loss: float
) -> list[list[int]]:
    """The iterative split pass of the size reduction.

    While a category's maximum average distance exceeds ``tau_loss``, the
    remaining members whose average distances tie with the current head's
    within ``tau_diff`` peel off as a new category; the outer loop repeats
    until the category count stops changing.
    """
    cats: list[list[int]] = [list(range(dist.shape[0]))]
    while True:
        new: list[list[int]] = []
        for cat in cats:
            avg = dist[np.ix_(cat, cat)].mean(axis=1)
            if avg.max() > tau_loss:
                rem = list(range(len(cat)))
                while rem:
                    head = avg[rem[0]]
                    grp = [r for r in rem if abs(head - avg[r]) < tau_diff]
                    if len(grp) == len(rem) and len(rem) > 1:
                        sub = dist[np.ix_([cat[r] for r in rem], [cat[r] for r in rem])]
                        if sub.mean(axis=1).max() > tau_loss:
                            # Mirror-image cells have exactly equal average
                            # distances and stall the tie peel; fall back to
                            # keeping the head's tau_loss-ball together.
                            grp = [
                                r
                                for r in rem
                                if dist[cat[rem[0]], cat[r]] <= tau_loss
                            ]
                    new.append([cat[r] for r in grp])
                    taken = set(grp)
                    rem = [r for r in rem if r not in taken]
            else:
                new.append(cat)
        if len(new) == len(cats):
            return new
        cats = new


def max_average_loss(dmap: DecodingMap, clusters: list[list[int]], dist_fn) -> float:
    """Largest within-cluster average distance after reduction."""
    worst = 0.0
    for members in clusters:
        if len(members) < 2:
            continue
        for i in members:
            avg = sum(dist_fn(i, j) for j in members) / len(members)
            worst = max(worst, avg)
    return worst


# ---------------------------------------------------------------------------
# Serialization

MAP_FORMAT = "vlcmap-decoding-map"
MAP_VERSION = 1


def _order_payload(order: DecodingOrder) -> dict:
    if order.outage:
        return {"outage": True}
    flat = [k for grp in order.groups for k in grp]
    return {
        "outage": False,
        "groups": [[k + 1 for k in grp] for grp in order.groups],
        "rates": [float(order.rates[k]) for k in flat],
    }


def save_map(dmap: DecodingMap, path) -> None:
    payload = {
        "format": MAP_FORMAT,
        "version": MAP_VERSION,
        "scene_hash": dmap.scene_hash,
        "filter_index": dmap.filter_index,
        "tau": dmap.tau,
        "noise_var": dmap.noise_var,
        "thresholds": list(dmap.thresholds) if dmap.thresholds else None,
        "xs": dmap.xs.tolist(),
        "ys": dmap.ys.tolist(),
        "n_layers": dmap.n_layers,
        "cluster_count": dmap.cluster_count,
        "cells": [
            {
                "ix": c.ix,
                "iy": c.iy,
                "position": list(c.position),
                "provenance": c.provenance,
                "source": list(c.source) if c.source else None,
                "transforms": list(c.transforms),
                "cluster": c.cluster,
                **_order_payload(c.order),
            }
            for c in dmap.cells
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_map(path) -> DecodingMap:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != MAP_FORMAT:
        raise InvalidParameterError(f"not a decoding map file: {path}")
    n_layers = payload["n_layers"]
    cells = []
    for rec in payload["cells"]:
        if rec["outage"]:
            order = outage_order(n_layers, tuple(rec["position"]))
        else:
            groups = [tuple(k - 1 for k in grp) for grp in rec["groups"]]
            rates = np.full(n_layers, np.nan)
            flat = [k for grp in groups for k in grp]
            for k, r in zip(flat, rec["rates"]):
                rates[k] = r
            order = DecodingOrder(
                groups=groups,
                rates=rates,
                detectable=tuple(sorted(flat)),
                position=tuple(rec["position"]),
            )
        cells.append(
            MapCell(
                rec["ix"],
                rec["iy"],
                tuple(rec["position"]),
                order,
                rec["provenance"],
                tuple(rec["source"]) if rec["source"] else None,
                tuple(rec["transforms"]),
                rec["cluster"],
            )
        )
    dmap = DecodingMap(
        scene_hash=payload["scene_hash"],
        filter_index=payload["filter_index"],
        tau=payload["tau"],
        noise_var=payload["noise_var"],
        xs=np.array(payload["xs"]),
        ys=np.array(payload["ys"]),
        n_layers=n_layers,
        cells=cells,
        thresholds=tuple(payload["thresholds"]) if payload["thresholds"] else None,
        cluster_count=payload["cluster_count"],
    )
    return dmap


def export_cluster_csv(dmap: DecodingMap, path) -> None:
    rows = ["ix,iy,x,y,outage,cluster,min_rate,sum_rate"]
    for c in dmap.cells:
        if c.order.outage:
            rows.append(f"{c.ix},{c.iy},{c.position[0]!r},{c.position[1]!r},1,-1,,")
        else:
            idx = list(c.order.detectable)
            rows.append(
                f"{c.ix},{c.iy},{c.position[0]!r},{c.position[1]!r},0,{c.cluster},"
                f"{float(np.min(c.order.rates[idx]))!r},{float(np.sum(c.order.rates[idx]))!r}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
