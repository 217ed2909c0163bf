"""Serializable environment descriptors, so datasets and checkpoints can rebuild their env."""

from __future__ import annotations

import json

from ..errors import SpecError
from .keydoor import GridWorldSpec, KeyDoorEnv
from .latent import LatentMDPEnv, LatentMDPSpec


def describe_env(env) -> str:
    """Compact JSON naming the env and its full spec."""
    if isinstance(env, KeyDoorEnv):
        doc = {"name": "keydoor", "spec": env.spec.to_dict()}
    elif isinstance(env, LatentMDPEnv):
        doc = {"name": "latent", "spec": env.spec.to_dict(), "observe_latents": env.observe_latents}
    else:
        raise SpecError(f"cannot describe {type(env).__name__}")
    return json.dumps(doc, sort_keys=True)


def make_env(descriptor: str):
    """Inverse of :func:`describe_env`; a bare ``"keydoor"`` gives the default gridworld."""
    if descriptor == "keydoor":
        return KeyDoorEnv()
    try:
        doc = json.loads(descriptor)
    except (TypeError, json.JSONDecodeError):
        raise SpecError(f"unrecognized environment descriptor {descriptor!r}") from None
    if doc.get("name") == "keydoor":
        return KeyDoorEnv(GridWorldSpec.from_dict(doc["spec"]))
    if doc.get("name") == "latent":
        return LatentMDPEnv(LatentMDPSpec.from_dict(doc["spec"]), doc.get("observe_latents", False))
    raise SpecError(f"unknown environment {doc.get('name')!r}")
