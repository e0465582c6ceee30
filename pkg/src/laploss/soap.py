"""Preconditioned Adam-family optimizer for the generator.

Runs Adam in the eigenbasis of Kronecker-factored gradient covariances
(Shampoo-style): per matrix-shaped parameter we track EMAs of G G^T and
G^T G, refresh their eigenvectors every `precondition_frequency` steps, and
keep Adam moments in that rotating basis (the first moment is re-projected
on refresh, the second is carried over).  Parameters with fewer than two
dimensions fall back to plain Adam.
"""

from __future__ import annotations

import torch


class SOAP(torch.optim.Optimizer):
    def __init__(
        self,
        params,
        lr: float = 1e-3,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        shampoo_beta: float = 0.95,
        precondition_frequency: int = 10,
    ):
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        if not 0 < shampoo_beta < 1:
            raise ValueError(f"shampoo_beta must be in (0, 1), got {shampoo_beta}")
        if precondition_frequency < 1:
            raise ValueError("precondition_frequency must be >= 1")
        defaults = dict(
            lr=lr,
            betas=betas,
            eps=eps,
            shampoo_beta=shampoo_beta,
            precondition_frequency=precondition_frequency,
        )
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            b1, b2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                g = p.grad
                state = self.state[p]
                matrix = p.ndim >= 2
                if not state:
                    state["step"] = 0
                    if matrix:
                        g2 = g.reshape(g.shape[0], -1)
                        state["exp_avg"] = torch.zeros_like(g2)
                        state["exp_avg_sq"] = torch.zeros_like(g2)
                        state["GG"] = torch.zeros(g2.shape[0], g2.shape[0], dtype=g.dtype)
                        state["GTG"] = torch.zeros(g2.shape[1], g2.shape[1], dtype=g.dtype)
                    else:
                        state["exp_avg"] = torch.zeros_like(g)
                        state["exp_avg_sq"] = torch.zeros_like(g)
                state["step"] += 1
                t = state["step"]
                bc1 = 1.0 - b1 ** t
                bc2 = 1.0 - b2 ** t
                if matrix:
                    g2 = g.reshape(g.shape[0], -1)
                    bs = group["shampoo_beta"]
                    state["GG"].mul_(bs).add_(g2 @ g2.T, alpha=1.0 - bs)
                    state["GTG"].mul_(bs).add_(g2.T @ g2, alpha=1.0 - bs)
                    if (t - 1) % group["precondition_frequency"] == 0:
                        ql_new = torch.linalg.eigh(state["GG"])[1]
                        qr_new = torch.linalg.eigh(state["GTG"])[1]
                        if "QL" in state:
                            back = state["QL"] @ state["exp_avg"] @ state["QR"].T
                            state["exp_avg"] = ql_new.T @ back @ qr_new
                        state["QL"], state["QR"] = ql_new, qr_new
                    ql, qr = state["QL"], state["QR"]
                    g_rot = ql.T @ g2 @ qr
                    state["exp_avg"].mul_(b1).add_(g_rot, alpha=1.0 - b1)
                    state["exp_avg_sq"].mul_(b2).addcmul_(g_rot, g_rot, value=1.0 - b2)
                    update_rot = (state["exp_avg"] / bc1) / (
                        (state["exp_avg_sq"] / bc2).sqrt() + group["eps"]
                    )
                    update = (ql @ update_rot @ qr.T).reshape(p.shape)
                else:
                    state["exp_avg"].mul_(b1).add_(g, alpha=1.0 - b1)
                    state["exp_avg_sq"].mul_(b2).addcmul_(g, g, value=1.0 - b2)
                    update = (state["exp_avg"] / bc1) / (
                        (state["exp_avg_sq"] / bc2).sqrt() + group["eps"]
                    )
                p.add_(update, alpha=-group["lr"])
        return loss
