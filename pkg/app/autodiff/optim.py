"""Adam optimizer with per-parameter-group learning rates."""

from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..models.errors import MissingGradientError, ParameterError
from .tensor import Tensor


def adam_step(
    params: Iterable[Tensor],
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
):
    """One bias-corrected Adam update.

    Moment estimates live on each parameter (``Tensor.optimizer_state``), so
    parameters never share state. Entries outside ``trainable_mask`` are
    left untouched.
    """
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    beta1, beta2 = betas
    for index, param in enumerate(params):
        if param.grad is None:
            raise MissingGradientError(param.name or f"param[{index}]")
        state = param.optimizer_state
        if not state:
            state.update(step=0, m=np.zeros_like(param.values), v=np.zeros_like(param.values))
        state["step"] += 1
        t = state["step"]
        g = param.grad
        state["m"] = beta1 * state["m"] + (1.0 - beta1) * g
        state["v"] = beta2 * state["v"] + (1.0 - beta2) * g * g
        m_hat = state["m"] / (1.0 - beta1 ** t)
        v_hat = state["v"] / (1.0 - beta2 ** t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        if param.trainable_mask is not None:
            update = np.where(param.trainable_mask, update, 0.0)
        param.values = param.values - update


class Adam:
    """Adam over parameter groups, each with its own learning rate.

    Usage:
        optimizer = Adam([
            {"params": selection_params, "lr": 1e-2},
            {"params": classifier_params, "lr": 1e-3},
        ])
        optimizer.zero_grad(); loss.backward(); optimizer.step()
    """

    def __init__(
        self,
        groups: Union[Sequence[Tensor], Sequence[Dict]],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if groups and isinstance(groups[0], Tensor):
            groups = [{"params": list(groups)}]
        self.groups: List[Dict] = []
        for group in groups:
            self.groups.append({
                "params": list(group["params"]),
                "lr": group.get("lr", lr),
                "betas": group.get("betas", betas),
                "eps": group.get("eps", eps),
            })

    @property
    def params(self) -> List[Tensor]:
        return [p for group in self.groups for p in group["params"]]

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self, lr_scale: Optional[float] = None):
        for group in self.groups:
            lr = group["lr"] * (lr_scale if lr_scale is not None else 1.0)
            adam_step(group["params"], lr=lr, betas=group["betas"], eps=group["eps"])
