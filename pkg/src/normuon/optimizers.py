"""Matrix-aware optimizer steps and parameter routing.

Three families share one config and state record:

* ``adamw``: elementwise Adam with decoupled weight decay.
* ``muon``: momentum orthogonalized by ``ns5``, optionally RMS-matched.
* ``normuon``: like muon, but each neuron (output row) of the
  orthogonalized update is rescaled by the inverse root of a running
  mean of its squared entries, then the whole update is RMS-matched to
  ``rms_scale * lr * sqrt(m * n)``.

Ablation variants (``variant_step``) move or coarsen the second-moment
normalization. Steps are pure: they return a fresh state plus a
``StepReport`` sidecar and never mutate their inputs. Weight decay is
always charged at the base learning rate, not the RMS-matched one.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .errors import ConfigError, ShapeError
from .matrix_core import div_rows, frobenius_norm, row_mean_sq
from .orthogonalize import DEFAULT_NS, NsConfig, ns5

OPTIMIZER_NAMES = (
    "adamw",
    "muon",
    "normuon",
    "muon_adam",
    "normuon_front",
    "normuon_selective",
    "muon_rms_normalized",
)
VARIANT_MODES = ("muon_adam", "normuon_front", "normuon_selective", "muon_rms_normalized")

ADAMW_KINDS = ("embedding", "unembedding", "bias", "scalar", "norm_gain")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0
    rms_scale: float = 0.2
    momentum_style: str = "ema"
    rms_match: bool = False
    bias_correction: bool = True
    ns: NsConfig = field(default_factory=NsConfig)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {b}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.rms_scale <= 0:
            raise ConfigError(f"rms_scale must be > 0, got {self.rms_scale}")
        if self.momentum_style not in ("ema", "classic"):
            raise ConfigError(f"momentum_style must be 'ema' or 'classic', got {self.momentum_style!r}")


# Per-family defaults layered over OptimizerConfig by the factory below.
PRESETS = {
    "adamw": {"beta1": 0.9, "beta2": 0.95},
    "muon": {"beta1": 0.95},
    "normuon": {"beta1": 0.95, "beta2": 0.95},
    "muon_adam": {"beta1": 0.95, "beta2": 0.95},
    "normuon_front": {"beta1": 0.95, "beta2": 0.95},
    "normuon_selective": {"beta1": 0.95, "beta2": 0.95},
    "muon_rms_normalized": {"beta1": 0.95},
}


def default_config(optimizer: str, lr: float, **overrides) -> OptimizerConfig:
    """Config with the family's default hyperparameters applied."""
    if optimizer not in PRESETS:
        known = ", ".join(OPTIMIZER_NAMES)
        raise ConfigError(f"unknown optimizer {optimizer!r} (known: {known})")
    kwargs = dict(PRESETS[optimizer])
    kwargs.update(overrides)
    return OptimizerConfig(lr=lr, **kwargs)


@dataclass
class ParamState:
    """Per-parameter weights and optimizer state; inactive slots stay None."""

    w: np.ndarray
    m1: np.ndarray | None = None
    v_row: np.ndarray | None = None
    v_full: np.ndarray | None = None
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None
    step_count: int = 0


def init_state(w: np.ndarray, algo: str) -> ParamState:
    if w.ndim != 2:
        raise ShapeError(f"parameters must be 2-D, got shape {w.shape}")
    m, n = w.shape
    if algo == "adamw":
        return ParamState(w=w, adam_m=np.zeros((m, n)), adam_v=np.zeros((m, n)))
    if algo in ("muon", "muon_rms_normalized"):
        return ParamState(w=w, m1=np.zeros((m, n)))
    if algo in ("normuon", "normuon_front"):
        return ParamState(w=w, m1=np.zeros((m, n)), v_row=np.zeros(m))
    if algo == "normuon_selective":
        v = np.zeros(m) if m > n else None
        return ParamState(w=w, m1=np.zeros((m, n)), v_row=v)
    if algo == "muon_adam":
        return ParamState(w=w, m1=np.zeros((m, n)), v_full=np.zeros((m, n)))
    raise ConfigError(f"unknown optimizer {algo!r}")


def state_elements(state: ParamState) -> int:
    """Optimizer-state element count, excluding the weights themselves."""
    bufs = (state.m1, state.v_row, state.v_full, state.adam_m, state.adam_v)
    return sum(int(b.size) for b in bufs if b is not None)


@dataclass(frozen=True)
class StepReport:
    """Diagnostic sidecar: norm of the applied update, the step size that
    scaled the direction, and the spread of per-neuron direction norms."""

    update_fro_norm: float
    effective_lr: float
    per_neuron_norm_cv: float


@dataclass(frozen=True)
class StepTrace:
    """Intermediate matrices captured for trajectory probes."""

    stages: tuple  # of (label, matrix) pairs


def per_neuron_cv(a: np.ndarray) -> float:
    """Population std over mean of row L2 norms; 0 for an all-zero input."""
    norms = np.sqrt(np.sum(a * a, axis=1))
    mean = float(norms.mean())
    if mean == 0.0:
        return 0.0
    return float(norms.std()) / mean


def rms_match_lr(cfg: OptimizerConfig, numel: int, fro: float) -> float:
    """Step size making the update Frobenius norm rms_scale * lr * sqrt(numel)."""
    return cfg.rms_scale * cfg.lr * math.sqrt(numel) / fro


def apply_update(w: np.ndarray, cfg: OptimizerConfig, eta_hat: float,
                 direction: np.ndarray) -> np.ndarray:
    """w - lr * weight_decay * w - eta_hat * direction."""
    return w - (cfg.lr * cfg.weight_decay) * w - eta_hat * direction


def update_momentum(m1: np.ndarray, grad: np.ndarray, cfg: OptimizerConfig) -> np.ndarray:
    if cfg.momentum_style == "classic":
        return cfg.beta1 * m1 + grad
    return cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad


def _check_grad(state: ParamState, grad: np.ndarray) -> None:
    if grad.shape != state.w.shape:
        raise ShapeError(f"gradient shape {grad.shape} != parameter shape {state.w.shape}")


def _adamw_core(state, grad, cfg):
    _check_grad(state, grad)
    t = state.step_count + 1
    m = cfg.beta1 * state.adam_m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.adam_v + (1.0 - cfg.beta2) * (grad * grad)
    if cfg.bias_correction:
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
    else:
        m_hat, v_hat = m, v
    direction = m_hat / (np.sqrt(v_hat) + cfg.eps)
    update = cfg.lr * direction
    w = state.w - (cfg.lr * cfg.weight_decay) * state.w - update
    report = StepReport(frobenius_norm(update), cfg.lr, per_neuron_cv(direction))
    trace = StepTrace((("momentum", m), ("preconditioned", direction), ("final", direction)))
    return replace(state, w=w, adam_m=m, adam_v=v, step_count=t), report, trace


def _finish_orthogonalized(state, cfg, o, direction, extra):
    """Scale `direction`, apply decay and update, and assemble the outputs."""
    fro = frobenius_norm(direction)
    if fro == 0.0:
        eta_hat = 0.0
    elif cfg.rms_match:
        eta_hat = rms_match_lr(cfg, direction.size, fro)
    else:
        eta_hat = cfg.lr
    update = eta_hat * direction
    w = apply_update(state.w, cfg, 1.0, update)
    report = StepReport(frobenius_norm(update), eta_hat, per_neuron_cv(direction))
    trace = StepTrace((("momentum", extra["m1"]), ("orthogonalized", o), ("final", direction)))
    new_state = replace(state, w=w, step_count=state.step_count + 1, **extra)
    return new_state, report, trace


def _muon_core(state, grad, cfg, force_rms_match=False):
    _check_grad(state, grad)
    m1 = update_momentum(state.m1, grad, cfg)
    o = ns5(m1, cfg.ns)
    if force_rms_match:
        cfg = replace(cfg, rms_match=True)
    return _finish_orthogonalized(state, cfg, o, o, {"m1": m1})


def _normuon_core(state, grad, cfg):
    _check_grad(state, grad)
    m1 = update_momentum(state.m1, grad, cfg)
    o = ns5(m1, cfg.ns)
    v = cfg.beta2 * state.v_row + (1.0 - cfg.beta2) * row_mean_sq(o)
    o_hat = div_rows(o, v, cfg.eps)
    cfg = replace(cfg, rms_match=True)
    return _finish_orthogonalized(state, cfg, o, o_hat, {"m1": m1, "v_row": v})


def _muon_adam_core(state, grad, cfg):
    _check_grad(state, grad)
    m1 = update_momentum(state.m1, grad, cfg)
    o = ns5(m1, cfg.ns)
    v = cfg.beta2 * state.v_full + (1.0 - cfg.beta2) * (o * o)
    o_hat = o / (np.sqrt(v) + cfg.eps)
    cfg = replace(cfg, rms_match=True)
    return _finish_orthogonalized(state, cfg, o, o_hat, {"m1": m1, "v_full": v})


def _normuon_front_core(state, grad, cfg):
    _check_grad(state, grad)
    m1 = update_momentum(state.m1, grad, cfg)
    v = cfg.beta2 * state.v_row + (1.0 - cfg.beta2) * row_mean_sq(m1)
    m_hat = div_rows(m1, v, cfg.eps)
    o = ns5(m_hat, cfg.ns)
    cfg = replace(cfg, rms_match=True)
    return _finish_orthogonalized(state, cfg, o, o, {"m1": m1, "v_row": v})


def _normuon_selective_core(state, grad, cfg):
    m, n = state.w.shape
    if m > n:
        return _normuon_core(state, grad, cfg)
    return _muon_core(state, grad, cfg, force_rms_match=True)


_CORES = {
    "adamw": _adamw_core,
    "muon": _muon_core,
    "normuon": _normuon_core,
    "muon_adam": _muon_adam_core,
    "normuon_front": _normuon_front_core,
    "normuon_selective": _normuon_selective_core,
    "muon_rms_normalized": lambda s, g, c: _muon_core(s, g, c, force_rms_match=True),
}


def step_param_traced(algo: str, state: ParamState, grad: np.ndarray,
                      cfg: OptimizerConfig):
    """One optimizer step returning (state, report, trace)."""
    if algo not in _CORES:
        raise ConfigError(f"unknown optimizer {algo!r}")
    return _CORES[algo](state, grad, cfg)


def step_param(algo, state, grad, cfg):
    new_state, report, _ = step_param_traced(algo, state, grad, cfg)
    return new_state, report


def adamw_step(state, grad, cfg):
    return step_param("adamw", state, grad, cfg)


def muon_step(state, grad, cfg):
    return step_param("muon", state, grad, cfg)


def normuon_step(state, grad, cfg):
    return step_param("normuon", state, grad, cfg)


def variant_step(state, grad, cfg, mode: str):
    if mode not in VARIANT_MODES:
        raise ConfigError(f"unknown variant {mode!r} (known: {', '.join(VARIANT_MODES)})")
    return step_param(mode, state, grad, cfg)


def route_param(shape, kind: str) -> str:
    """Map a parameter to its optimizer family by role, not by name."""
    if kind == "hidden_2d":
        return "orthogonalized"
    if kind in ADAMW_KINDS:
        return "adamw"
    raise ConfigError(f"unknown parameter kind {kind!r}")


# Optimizer-state elements for an m x n parameter stepped by each family.
_STATE_COUNTS = {
    "adamw": lambda m, n: 2 * m * n,
    "muon": lambda m, n: m * n,
    "normuon": lambda m, n: m * (n + 1),
    "muon_adam": lambda m, n: 2 * m * n,
    "normuon_front": lambda m, n: m * (n + 1),
    "normuon_selective": lambda m, n: m * (n + 1) if m > n else m * n,
    "muon_rms_normalized": lambda m, n: m * n,
}


def state_memory_audit(params, optimizers=("adamw", "muon", "normuon", "muon_adam")):
    """Exact optimizer-state element counts.

    Args:
        params: iterable of (param_id, (m, n), kind) triples.
        optimizers: families to audit for the orthogonalized-routed slice;
            adamw-routed parameters always hold 2mn elements.

    Returns:
        {optimizer: {"per_param": {id: count}, "orthogonalized_elements": int,
                     "adamw_elements": int, "total": int}}
    """
    out = {}
    for opt in optimizers:
        if opt not in _STATE_COUNTS:
            raise ConfigError(f"unknown optimizer {opt!r}")
        per_param = {}
        orth_total = 0
        adamw_total = 0
        for pid, shape, kind in params:
            m, n = shape
            if route_param(shape, kind) == "orthogonalized" and opt != "adamw":
                count = _STATE_COUNTS[opt](m, n)
                orth_total += count
            else:
                count = _STATE_COUNTS["adamw"](m, n)
                adamw_total += count
            per_param[pid] = count
        out[opt] = {
            "per_param": per_param,
            "orthogonalized_elements": orth_total,
            "adamw_elements": adamw_total,
            "total": orth_total + adamw_total,
        }
    return out
