"""Policy checkpoints: network weights or tabular policies, in portable text."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import EnvModel, TabularPolicy, ValidationError
from ..deep import policy_from_networks
from ..neural import PARAMS_MAGIC, load_params, save_params

TABULAR_MAGIC = "mfg-omd-tabular v1"


def save_network_checkpoint(path, networks: list, model: EnvModel, variant: str, tau: float, meta: dict) -> Path:
    header = dict(meta, kind="network", variant=variant, tau=tau, **_model_signature(model))
    return save_params(path, networks, header)


def save_tabular_checkpoint(path, policies: list, model: EnvModel, meta: dict) -> Path:
    """One flattened ``probs[n, x, a]`` line per policy (one per initial distribution)."""
    path = Path(path)
    header = dict(meta, kind="tabular", count=len(policies), **_model_signature(model))
    lines = [TABULAR_MAGIC, json.dumps(header, sort_keys=True)]
    for pol in policies:
        lines.append(" ".join("%.17g" % v for v in pol.probs.ravel()))
    path.write_text("\n".join(lines) + "\n")
    return path


def _model_signature(model: EnvModel) -> dict:
    return {"horizon": model.horizon, "n_states": model.n_states, "n_actions": model.n_actions}


def read_header(path) -> dict:
    lines = Path(path).read_text().splitlines()[:2]
    if len(lines) < 2 or lines[0] not in (PARAMS_MAGIC, TABULAR_MAGIC):
        raise ValidationError(f"{path} is not an mfg-omd checkpoint")
    return json.loads(lines[1])


def load_policy(path, model: EnvModel | None = None, index: int = 0):
    """Rebuild the evaluated policy; ``model`` (if given) must match the checkpoint's shapes.

    Tabular checkpoints hold one policy per training distribution; ``index`` picks one.
    """
    header = read_header(path)
    if model is not None:
        sig = _model_signature(model)
        found = {k: header.get(k) for k in sig}
        if found != sig:
            raise ValidationError(f"checkpoint was written for {found}, model is {sig}")
    shape = (header["horizon"] + 1, header["n_states"], header["n_actions"])
    if header["kind"] == "tabular":
        if not 0 <= index < header["count"]:
            raise ValidationError(f"policy index {index} outside [0, {header['count']})")
        line = Path(path).read_text().splitlines()[2 + index]
        return TabularPolicy(np.array(line.split(), dtype=float).reshape(shape)), header
    networks, header = load_params(path)
    policy = policy_from_networks(networks, header["variant"], header["tau"], header["horizon"], header["n_states"])
    return policy, header
