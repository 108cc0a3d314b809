"""Capsule clustering: latent code -> entity-aware capsule vectors.

Pipeline: primary capsules (parallel convolutions) -> per-pair affine
predictions -> routing-by-agreement at every spatial position ->
coupling-weighted collapse over input capsules -> L2 entity presence over the
output-capsule axis -> transposed convolution back to the latent grid.

Tensor layouts (batch first):

* ``u``      ``(B, n_in, in_dim, H, W)``           primary capsules
* ``u_hat``  ``(B, n_out, n_in, out_dim, H, W)``   prediction vectors, indexed ``(j, i, ...)``
* ``b``, ``c`` ``(B, n_in, n_out, H, W)``          logits / couplings, indexed ``(i, j, ...)``
* ``v``      ``(B, n_out, out_dim, H, W)``         routed activity vectors
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigurationError, ContractError, InputShapeError, NumericError

__all__ = [
    "CapsuleConfig",
    "RoutingState",
    "CapsuleOutputs",
    "squash",
    "predict",
    "route",
    "collapse",
    "entity_presence",
    "CapsuleClustering",
]

SQUASH_EPS = 1e-8


@dataclass(frozen=True)
class CapsuleConfig:
    in_channels: int = 256
    num_primary: int = 32  # capsule types at level L
    primary_dim: int = 16  # dimension of each primary capsule
    primary_kernel: int = 8
    num_output: int = 64  # capsules at level L+1
    output_dim: int = 32
    routing_iterations: int = 3
    out_channels: int = 256

    def __post_init__(self):
        for name in ("in_channels", "num_primary", "primary_dim", "primary_kernel",
                     "num_output", "output_dim", "out_channels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.routing_iterations < 1:
            raise ConfigurationError("routing_iterations must be >= 1")


@dataclass
class RoutingState:
    logits: torch.Tensor
    couplings: torch.Tensor
    predictions: torch.Tensor
    iterations: int
    coupling_iteration: int  # 1-based iteration that produced `couplings`
    history: list = field(default_factory=list)  # (couplings, logits) after each iteration


@dataclass
class CapsuleOutputs:
    primary: torch.Tensor
    predictions: torch.Tensor
    routing: RoutingState
    activities: torch.Tensor
    collapsed: torch.Tensor
    presence: torch.Tensor
    capsule_vectors: torch.Tensor


def squash(s, dim=-1, eps=SQUASH_EPS):
    """Shrink ``s`` along ``dim`` to length ``|s|^2 / (1 + |s|^2)`` keeping its direction.

    The norm in the denominator is ``sqrt(|s|^2 + eps)`` so the map stays
    differentiable at the origin.
    """
    sq = (s * s).sum(dim=dim, keepdim=True)
    return s * (sq / (1.0 + sq) / torch.sqrt(sq + eps))


def predict(u, weights):
    """Prediction vectors ``u_hat[j|i] = W_ij^T u_i`` at every position.

    ``u`` is ``(B, n_in, in_dim, H, W)``, ``weights`` is ``(n_in, n_out, in_dim, out_dim)``.
    """
    if u.dim() != 5 or weights.dim() != 4:
        raise InputShapeError("predict expects u of rank 5 and weights of rank 4")
    if u.shape[1] != weights.shape[0] or u.shape[2] != weights.shape[2]:
        raise InputShapeError(
            f"capsule dims {tuple(u.shape[1:3])} do not match weights {tuple(weights.shape)}"
        )
    return torch.einsum("bikhw,ijkd->bjidhw", u, weights)


def route(u_hat, iterations: int = 3, record_history: bool = False):
    """Routing-by-agreement, independently at each spatial position.

    Logits start at zero on every call. Each iteration: softmax over output
    capsules, coupling-weighted sum, squash, then add the agreement
    ``v_j . u_hat[j|i]`` to the logits. Gradients flow through all iterations.

    Returns ``(state, v)``; ``state.couplings`` are the ones used in the last
    iteration and ``state.logits`` include the final agreement update.
    """
    if iterations < 1:
        raise ConfigurationError("routing needs at least one iteration")
    bsz, n_out, n_in, _, hh, ww = u_hat.shape
    b = u_hat.new_zeros(bsz, n_in, n_out, hh, ww)
    history = []
    c = v = None
    for _ in range(iterations):
        if not torch.isfinite(b).all():
            raise NumericError("routing logits became non-finite")
        c = torch.softmax(b, dim=2)
        s = torch.einsum("bijhw,bjidhw->bjdhw", c, u_hat)
        v = squash(s, dim=2)
        b = b + torch.einsum("bjdhw,bjidhw->bijhw", v, u_hat)
        if record_history:
            history.append((c, b))
    state = RoutingState(
        logits=b,
        couplings=c,
        predictions=u_hat,
        iterations=iterations,
        coupling_iteration=iterations,
        history=history,
    )
    return state, v


def collapse(u_hat, state: RoutingState):
    """Sum the coupling-weighted predictions over input capsules -> ``(B, n_out, out_dim, H, W)``."""
    if state.coupling_iteration != state.iterations:
        raise ContractError(
            f"collapse needs couplings from the last routing iteration ({state.iterations}), "
            f"got iteration {state.coupling_iteration}"
        )
    if state.couplings.shape[1] != u_hat.shape[2] or state.couplings.shape[2] != u_hat.shape[1]:
        raise ContractError("couplings do not index the given predictions")
    return torch.einsum("bijhw,bjidhw->bjdhw", state.couplings, u_hat)


def entity_presence(collapsed):
    """L2 norm over the output-capsule axis: ``(B, n_out, D, H, W) -> (B, D, H, W)``."""
    return torch.linalg.vector_norm(collapsed, ord=2, dim=1)


class CapsuleClustering(nn.Module):
    def __init__(self, cfg: CapsuleConfig | None = None):
        super().__init__()
        cfg = cfg or CapsuleConfig()
        self.cfg = cfg
        # n_in parallel convolutions of width primary_dim, stored as one grouped-by-reshape conv
        self.primary = nn.Conv2d(
            cfg.in_channels, cfg.num_primary * cfg.primary_dim, cfg.primary_kernel
        )
        self.weights = nn.Parameter(
            torch.randn(cfg.num_primary, cfg.num_output, cfg.primary_dim, cfg.output_dim)
            * (1.0 / cfg.primary_dim) ** 0.5
        )
        self.to_vectors = nn.ConvTranspose2d(cfg.output_dim, cfg.out_channels, cfg.primary_kernel)

    def primary_capsules(self, x):
        cfg = self.cfg
        if x.dim() != 4 or x.shape[1] != cfg.in_channels:
            raise InputShapeError(
                f"expected a (B, {cfg.in_channels}, H, W) latent, got {tuple(x.shape)}"
            )
        if x.shape[-2] < cfg.primary_kernel or x.shape[-1] < cfg.primary_kernel:
            raise InputShapeError(
                f"latent {tuple(x.shape[-2:])} is smaller than the {cfg.primary_kernel}x"
                f"{cfg.primary_kernel} primary kernel"
            )
        u = self.primary(x)
        bsz, _, hh, ww = u.shape
        return u.reshape(bsz, cfg.num_primary, cfg.primary_dim, hh, ww)

    def predict(self, u):
        return predict(u, self.weights)

    def run(self, x, record_history: bool = False) -> CapsuleOutputs:
        """Full pipeline returning every intermediate tensor."""
        u = self.primary_capsules(x)
        u_hat = self.predict(u)
        state, v = route(u_hat, self.cfg.routing_iterations, record_history=record_history)
        collapsed = collapse(u_hat, state)
        presence = entity_presence(collapsed)
        vectors = self.to_vectors(presence)
        return CapsuleOutputs(u, u_hat, state, v, collapsed, presence, vectors)

    def forward(self, x):
        return self.run(x).capsule_vectors
