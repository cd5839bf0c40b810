"""Single-process simulation of row-sharded optimizer execution.

Each 2-D parameter is split into contiguous row blocks, one per rank.
Momentum and second-moment state live with the shards. For the
orthogonalized family, one owner rank per parameter gathers the full
momentum, runs the Newton-Schulz iteration, and scatters row-aligned
update blocks back; per-row statistics then never cross ranks. A
`CommLedger` counts every byte whose source and destination ranks
differ. Rank-local phases may execute in any order; cross-rank
reductions always combine in rank order, so results are independent of
the simulated execution order.
"""

from dataclasses import dataclass, replace
import math

import numpy as np

from .errors import ComparisonError, ConfigError, ShapeError
from .matrix_core import row_mean_sq, div_rows
from .optimizers import (
    OptimizerConfig,
    ParamState,
    apply_update,
    init_state,
    rms_match_lr,
    route_param,
    step_param,
    update_momentum,
)
from .orthogonalize import ns5

RMS_MODES = ("shard_local", "global")

LEDGER_KEYS = (
    "forward_allgather_bytes",
    "backward_allgather_bytes",
    "grad_reducescatter_bytes",
    "momentum_gather_bytes",
    "update_scatter_bytes",
)


@dataclass(frozen=True)
class Topology:
    """World size and the byte widths used for communication accounting.

    Parameters move at `elem_bytes_param` (all-gathers), gradients reduce
    at `elem_bytes_grad`, and optimizer-path collectives (momentum gather,
    update scatter) move at `elem_bytes_collective`.
    """

    world_size: int
    elem_bytes_param: int = 4
    elem_bytes_grad: int = 4
    elem_bytes_collective: int = 2

    def __post_init__(self):
        if self.world_size < 1:
            raise ConfigError(f"world_size must be >= 1, got {self.world_size}")
        for name in ("elem_bytes_param", "elem_bytes_grad", "elem_bytes_collective"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


class CommLedger:
    """Per-rank byte counters for the five simulated collectives."""

    def __init__(self, world_size: int):
        self.world_size = world_size
        self.steps_recorded = 0
        self.per_rank = [dict.fromkeys(LEDGER_KEYS, 0) for _ in range(world_size)]

    def charge(self, key: str, rank: int, nbytes: int) -> None:
        if key not in LEDGER_KEYS:
            raise ConfigError(f"unknown ledger key {key!r}")
        if nbytes < 0:
            raise ConfigError("cannot charge negative bytes")
        self.per_rank[rank][key] += nbytes

    def totals(self) -> dict:
        return {k: sum(r[k] for r in self.per_rank) for k in LEDGER_KEYS}

    def to_json(self) -> dict:
        return {
            "world_size": self.world_size,
            "steps_recorded": self.steps_recorded,
            "per_rank": [dict(r) for r in self.per_rank],
            "total": self.totals(),
        }


def shard_ranges(rows: int, world_size: int) -> list[tuple[int, int]]:
    """Contiguous row blocks of ceil(rows / world) for the first ranks.

    Later ranks take the remainder and may hold zero rows; rows are never
    split, so per-row statistics stay rank-local.
    """
    if rows < 1:
        raise ShapeError(f"rows must be >= 1, got {rows}")
    if world_size < 1:
        raise ConfigError(f"world_size must be >= 1, got {world_size}")
    block = -(-rows // world_size)
    return [(min(i * block, rows), min((i + 1) * block, rows)) for i in range(world_size)]


@dataclass
class ShardedParam:
    param_id: str
    shape: tuple[int, int]
    kind: str
    route: str
    algo: str
    ranges: list[tuple[int, int]]
    shards: list[ParamState]
    owner_rank: int = 0

    @property
    def numel(self) -> int:
        return self.shape[0] * self.shape[1]

    def local_rows(self, rank: int) -> int:
        lo, hi = self.ranges[rank]
        return hi - lo


# Which orthogonalized-family algorithms the sharded engine supports.
SHARDED_ALGOS = ("muon", "normuon", "muon_rms_normalized")


def shard_rowwise(param_id: str, w: np.ndarray, kind: str, world_size: int,
                  algo: str = "normuon") -> ShardedParam:
    """Split a parameter across ranks and initialize per-shard state."""
    route = route_param(w.shape, kind)
    local_algo = algo if route == "orthogonalized" and algo != "adamw" else "adamw"
    if local_algo != "adamw" and local_algo not in SHARDED_ALGOS:
        raise ConfigError(f"optimizer {algo!r} is not supported by the sharded engine")
    ranges = shard_ranges(w.shape[0], world_size)
    shards = [init_state(np.ascontiguousarray(w[lo:hi]), local_algo) for lo, hi in ranges]
    return ShardedParam(param_id=param_id, shape=w.shape, kind=kind, route=route,
                        algo=local_algo, ranges=ranges, shards=shards)


def assign_owners(params: list[ShardedParam], world_size: int) -> None:
    """Round-robin ownership over parameters sorted by size, largest first.

    Ties keep their original list order, so the assignment is stable.
    """
    order = sorted(range(len(params)), key=lambda i: (-params[i].numel, i))
    for pos, i in enumerate(order):
        params[i].owner_rank = pos % world_size


def gather_full(param: ShardedParam, attr: str = "w") -> np.ndarray:
    """Reconstruct the full matrix from shard rows, in rank order."""
    return np.concatenate([getattr(s, attr) for s in param.shards], axis=0)


def shard_grad(grad: np.ndarray, param: ShardedParam) -> list[np.ndarray]:
    """Row-aligned gradient shards for one parameter."""
    if grad.shape != param.shape:
        raise ShapeError(f"{param.param_id}: gradient shape {grad.shape} != {param.shape}")
    return [grad[lo:hi] for lo, hi in param.ranges]


def _check_aligned(param: ShardedParam, shards: list[np.ndarray]) -> None:
    if len(shards) != len(param.ranges):
        raise ShapeError(f"{param.param_id}: expected {len(param.ranges)} gradient shards")
    for rank, ((lo, hi), g) in enumerate(zip(param.ranges, shards)):
        if g.shape != (hi - lo, param.shape[1]):
            raise ShapeError(
                f"{param.param_id}: rank {rank} gradient shard has shape "
                f"{g.shape}, expected {(hi - lo, param.shape[1])}"
            )


def _charge_owner_roundtrip(ledger, param, topo):
    """Gather to the owner and scatter back; only non-owner rows cross."""
    if ledger is None:
        return
    n = param.shape[1]
    owner = param.owner_rank
    foreign = (param.shape[0] - param.local_rows(owner)) * n
    ledger.charge("momentum_gather_bytes", owner, foreign * topo.elem_bytes_collective)
    for rank in range(topo.world_size):
        if rank != owner:
            rows = param.local_rows(rank)
            ledger.charge("update_scatter_bytes", rank,
                          rows * n * topo.elem_bytes_collective)


def _step_orthogonalized(param, grad_shards, cfg, topo, rms_mode, ledger, rank_order):
    # Phase 1: every rank folds its gradient rows into local momentum.
    new_m1 = [None] * topo.world_size
    for rank in rank_order:
        new_m1[rank] = update_momentum(param.shards[rank].m1, grad_shards[rank], cfg)

    # Phase 2: the owner gathers momentum in rank order and orthogonalizes.
    m_full = np.concatenate(new_m1, axis=0)
    o_full = ns5(m_full, cfg.ns)
    _charge_owner_roundtrip(ledger, param, topo)

    # Phase 3: ranks receive their row block and normalize locally.
    o_shards = [o_full[lo:hi] for lo, hi in param.ranges]
    new_v = [None] * topo.world_size
    directions = [None] * topo.world_size
    for rank in rank_order:
        state = param.shards[rank]
        o = o_shards[rank]
        if param.algo == "normuon" and o.shape[0] > 0:
            v = cfg.beta2 * state.v_row + (1.0 - cfg.beta2) * row_mean_sq(o)
            new_v[rank] = v
            directions[rank] = div_rows(o, v, cfg.eps)
        else:
            new_v[rank] = state.v_row
            directions[rank] = o

    # Phase 4: RMS matching, either per shard or with a global reduction.
    rms_on = cfg.rms_match or param.algo in ("normuon", "muon_rms_normalized")
    etas = [cfg.lr] * topo.world_size
    if rms_on:
        sq = [float(np.sum(d * d)) for d in directions]
        if rms_mode == "global":
            fro = math.sqrt(sum(sq))
            eta = rms_match_lr(cfg, param.numel, fro) if fro > 0.0 else 0.0
            etas = [eta] * topo.world_size
        else:
            for rank in range(topo.world_size):
                numel = directions[rank].size
                fro = math.sqrt(sq[rank])
                etas[rank] = rms_match_lr(cfg, numel, fro) if fro > 0.0 else 0.0

    # Phase 5: shard-local weight update with decay at the base step size.
    for rank in rank_order:
        state = param.shards[rank]
        update = etas[rank] * directions[rank]
        w = apply_update(state.w, cfg, 1.0, update)
        param.shards[rank] = replace(state, w=w, m1=new_m1[rank], v_row=new_v[rank],
                                     step_count=state.step_count + 1)


def distributed_step(params: list[ShardedParam], grads: dict, cfg,
                     topo: Topology, rms_mode: str = "global",
                     ledger: CommLedger = None, rank_order=None) -> None:
    """One optimizer step over all sharded parameters.

    `grads` maps param_id to a list of per-rank gradient shards. `cfg`
    is one OptimizerConfig for every parameter, or a dict keyed by
    param_id when parameters step at different settings. AdamW-routed
    parameters update shard-locally and charge nothing.
    """
    if rms_mode not in RMS_MODES:
        raise ConfigError(f"rms_mode must be one of {RMS_MODES}, got {rms_mode!r}")
    order = list(rank_order) if rank_order is not None else list(range(topo.world_size))
    if sorted(order) != list(range(topo.world_size)):
        raise ConfigError(f"rank_order must be a permutation of 0..{topo.world_size - 1}")
    for param in params:
        if param.param_id not in grads:
            raise ShapeError(f"missing gradient for {param.param_id!r}")
        g = grads[param.param_id]
        _check_aligned(param, g)
        pcfg = cfg[param.param_id] if isinstance(cfg, dict) else cfg
        if param.algo != "adamw":
            _step_orthogonalized(param, g, pcfg, topo, rms_mode, ledger, order)
        else:
            for rank in order:
                if param.shards[rank].w.shape[0] > 0:
                    param.shards[rank], _ = step_param("adamw", param.shards[rank],
                                                       g[rank], pcfg)


def charge_standard_step(params: list[ShardedParam], topo: Topology,
                         ledger: CommLedger) -> None:
    """Account one forward/backward pass of fully sharded data parallelism.

    Each rank all-gathers the rows it does not hold (forward and again for
    backward) at the parameter width, and receives the other ranks'
    contributions to its gradient shard at the gradient width.
    """
    total = sum(p.numel for p in params)
    for rank in range(topo.world_size):
        local = sum(p.local_rows(rank) * p.shape[1] for p in params)
        foreign = total - local
        ledger.charge("forward_allgather_bytes", rank, foreign * topo.elem_bytes_param)
        ledger.charge("backward_allgather_bytes", rank, foreign * topo.elem_bytes_param)
        ledger.charge("grad_reducescatter_bytes", rank,
                      (topo.world_size - 1) * local * topo.elem_bytes_grad)
    ledger.steps_recorded += 1


def comm_audit(ledger: CommLedger, model_elements: int, topo: Topology) -> dict:
    """Per-element byte prices of the standard and optimizer paths.

    An element is charged only when its source and destination ranks
    differ, so a single-rank world reports zero everywhere. The ledger
    must hold at least one recorded training step and must be consistent
    with `model_elements`.
    """
    if ledger.steps_recorded < 1:
        raise ComparisonError("ledger has no recorded training steps")
    totals = ledger.totals()
    crossing = topo.world_size > 1
    expect_fwd = (ledger.steps_recorded * (topo.world_size - 1)
                  * model_elements * topo.elem_bytes_param)
    if totals["forward_allgather_bytes"] != expect_fwd:
        raise ComparisonError(
            f"ledger records {totals['forward_allgather_bytes']} forward all-gather "
            f"bytes, expected {expect_fwd} for {model_elements} elements"
        )
    optimizer_active = crossing and (totals["momentum_gather_bytes"] > 0
                                     or totals["update_scatter_bytes"] > 0)
    standard = (2 * topo.elem_bytes_param + topo.elem_bytes_grad) if crossing else 0
    optimizer = 2 * topo.elem_bytes_collective if optimizer_active else 0
    total = standard + optimizer
    return {
        "world_size": topo.world_size,
        "steps_recorded": ledger.steps_recorded,
        "standard_bytes_per_element": standard,
        "optimizer_bytes_per_element": optimizer,
        "total_bytes_per_element": total,
        "overhead_ratio": (total / standard) if standard else None,
    }
