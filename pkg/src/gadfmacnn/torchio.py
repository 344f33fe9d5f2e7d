"""Flatten torch modules and Adam state into container arrays and back."""
from __future__ import annotations

import numpy as np
import torch

from .errors import FormatVersionMismatch


def state_to_arrays(state: dict[str, torch.Tensor], prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in state.items()}


def arrays_to_state(arrays: dict[str, np.ndarray], prefix: str, like: dict[str, torch.Tensor]) -> dict:
    out = {}
    for k, ref in like.items():
        key = f"{prefix}.{k}"
        if key not in arrays:
            raise FormatVersionMismatch(f"checkpoint lacks {key}")
        arr = arrays[key]
        if tuple(arr.shape) != tuple(ref.shape):
            raise FormatVersionMismatch(f"{key}: shape {arr.shape} != expected {tuple(ref.shape)}")
        out[k] = torch.from_numpy(arr.copy()).to(ref.dtype)
    return out


def optimizer_to_arrays(opt: torch.optim.Optimizer, prefix: str) -> tuple[dict, dict]:
    sd = opt.state_dict()
    arrays, scalars = {}, {}
    for idx, st in sd["state"].items():
        for name, val in st.items():
            key = f"{prefix}.{idx}.{name}"
            if torch.is_tensor(val) and val.dim() > 0:
                arrays[key] = val.detach().cpu().numpy()
            else:
                scalars[key] = float(val)
    groups = []
    for g in sd["param_groups"]:
        groups.append({k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()})
    return arrays, {"scalars": scalars, "param_groups": groups}


def optimizer_from_arrays(opt: torch.optim.Optimizer, prefix: str, arrays: dict, meta: dict) -> None:
    state: dict[int, dict] = {}
    for key, val in meta["scalars"].items():
        _, idx, name = key.rsplit(".", 2)
        state.setdefault(int(idx), {})[name] = torch.tensor(val, dtype=torch.float32)
    marker = prefix + "."
    for key, arr in arrays.items():
        if not key.startswith(marker):
            continue
        idx, name = key[len(marker):].split(".", 1)
        state.setdefault(int(idx), {})[name] = torch.from_numpy(arr.copy())
    groups = [{k: (tuple(v) if k == "betas" else v) for k, v in g.items()} for g in meta["param_groups"]]
    opt.load_state_dict({"state": state, "param_groups": groups})
