"""
Checkpoint persistence

Versioned JSON documents holding every network of a run (online and target
ensembles for both agents), their Adam state, the risk weights used for
action selection and the digest of the run config that produced them.
Arrays are stored as hex-float strings so a round trip is bitwise exact.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .ensemble import EnsembleAdam, EnsembleQNetwork, RiskConfig
from .errors import CheckpointError
from .nn import AdamState, DenseNet, GradientSet

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(eq=False)
class Checkpoint:
    variant: str
    global_step: int
    protagonist: EnsembleQNetwork
    protagonist_risk: RiskConfig
    protagonist_target: Optional[EnsembleQNetwork] = None
    adversary: Optional[EnsembleQNetwork] = None
    adversary_target: Optional[EnsembleQNetwork] = None
    adversary_risk: Optional[RiskConfig] = None
    config_digest: str = ""
    config: Optional[Dict[str, Any]] = None
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_training(cls, result, config_digest: str = "", config: Optional[dict] = None) -> "Checkpoint":
        """Snapshot a live ``TrainResult``; arrays are copied."""
        prot, adv = result.protagonist, result.adversary
        return cls(
            variant=result.variant.value,
            global_step=result.global_step,
            protagonist=prot.net.copy(),
            protagonist_target=prot.target.copy(),
            protagonist_risk=prot.spec.risk,
            adversary=adv.net.copy() if adv else None,
            adversary_target=adv.target.copy() if adv else None,
            adversary_risk=adv.spec.risk if adv else None,
            config_digest=config_digest,
            config=config,
        )

    @property
    def has_adversary(self) -> bool:
        return self.adversary is not None

    def require_adversary(self) -> EnsembleQNetwork:
        if self.adversary is None:
            raise CheckpointError(f"checkpoint of variant {self.variant!r} has no adversary network")
        return self.adversary

    def value_network(self) -> EnsembleQNetwork:
        """Network whose values stand in for V*: the protagonist target when present."""
        return self.protagonist_target if self.protagonist_target is not None else self.protagonist


# =====================================
# Encoding
# =====================================

def _encode_array(a: np.ndarray) -> Dict[str, Any]:
    return {"shape": list(a.shape), "data": [float(x).hex() for x in a.reshape(-1)]}


def _decode_array(doc: Dict[str, Any]) -> np.ndarray:
    data = np.array([float.fromhex(s) for s in doc["data"]], dtype=np.float64)
    return data.reshape(tuple(doc["shape"]))


def _encode_grads(g: GradientSet) -> Dict[str, Any]:
    return {"weights": [_encode_array(a) for a in g.weights], "biases": [_encode_array(a) for a in g.biases]}


def _decode_grads(doc: Dict[str, Any]) -> GradientSet:
    return GradientSet([_decode_array(a) for a in doc["weights"]], [_decode_array(a) for a in doc["biases"]])


def _encode_adam(state: AdamState) -> Dict[str, Any]:
    return {
        "step": state.step,
        "beta1": float(state.beta1).hex(),
        "beta2": float(state.beta2).hex(),
        "epsilon_num": float(state.epsilon_num).hex(),
        "m": _encode_grads(state.m),
        "v": _encode_grads(state.v),
    }


def _decode_adam(doc: Dict[str, Any]) -> AdamState:
    return AdamState(
        m=_decode_grads(doc["m"]),
        v=_decode_grads(doc["v"]),
        step=int(doc["step"]),
        beta1=float.fromhex(doc["beta1"]),
        beta2=float.fromhex(doc["beta2"]),
        epsilon_num=float.fromhex(doc["epsilon_num"]),
    )


def _encode_dense(net: DenseNet) -> Dict[str, Any]:
    return {
        "layer_dims": list(net.layer_dims),
        "output_relu": net.output_relu,
        "weights": [_encode_array(w) for w in net.weights],
        "biases": [_encode_array(b) for b in net.biases],
    }


def _decode_dense(doc: Dict[str, Any]) -> DenseNet:
    return DenseNet(
        list(doc["layer_dims"]),
        [_decode_array(w) for w in doc["weights"]],
        [_decode_array(b) for b in doc["biases"]],
        output_relu=bool(doc["output_relu"]),
    )


def encode_ensemble(net: EnsembleQNetwork) -> Dict[str, Any]:
    optimizer = None
    if net.optimizer is not None:
        optimizer = {
            "trunk": _encode_adam(net.optimizer.trunk),
            "heads": [_encode_adam(s) for s in net.optimizer.heads],
        }
    return {
        "k": net.k,
        "trunk": _encode_dense(net.trunk),
        "heads": [_encode_dense(h) for h in net.heads],
        "optimizer": optimizer,
    }


def decode_ensemble(doc: Dict[str, Any]) -> EnsembleQNetwork:
    heads = [_decode_dense(h) for h in doc["heads"]]
    if len(heads) != int(doc["k"]):
        raise CheckpointError(f"ensemble declares k={doc['k']} but stores {len(heads)} heads")
    optimizer = None
    if doc.get("optimizer") is not None:
        optimizer = EnsembleAdam(
            _decode_adam(doc["optimizer"]["trunk"]),
            [_decode_adam(s) for s in doc["optimizer"]["heads"]],
        )
    return EnsembleQNetwork(_decode_dense(doc["trunk"]), heads, optimizer)


NETWORK_SLOTS = ("protagonist", "protagonist_target", "adversary", "adversary_target")


def checkpoint_to_dict(ckpt: Checkpoint) -> Dict[str, Any]:
    return {
        "format_version": ckpt.format_version,
        "variant": ckpt.variant,
        "global_step": ckpt.global_step,
        "config_digest": ckpt.config_digest,
        "config": ckpt.config,
        "risk": {
            "protagonist": ckpt.protagonist_risk.model_dump(),
            "adversary": ckpt.adversary_risk.model_dump() if ckpt.adversary_risk else None,
        },
        "networks": {
            slot: encode_ensemble(getattr(ckpt, slot)) if getattr(ckpt, slot) is not None else None
            for slot in NETWORK_SLOTS
        },
    }


def checkpoint_from_dict(doc: Dict[str, Any]) -> Checkpoint:
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint document is not a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    networks = doc["networks"]
    if networks.get("protagonist") is None:
        raise CheckpointError("checkpoint has no protagonist network")
    decoded = {slot: decode_ensemble(networks[slot]) if networks.get(slot) else None for slot in NETWORK_SLOTS}
    adversary_risk = doc["risk"].get("adversary")
    return Checkpoint(
        variant=str(doc["variant"]),
        global_step=int(doc["global_step"]),
        protagonist_risk=RiskConfig(**doc["risk"]["protagonist"]),
        adversary_risk=RiskConfig(**adversary_risk) if adversary_risk else None,
        config_digest=str(doc.get("config_digest", "")),
        config=doc.get("config"),
        format_version=version,
        **decoded,
    )


# =====================================
# Files
# =====================================

def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(checkpoint_to_dict(ckpt), sort_keys=True, separators=(",", ":"))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint {path} (step {ckpt.global_step})")
    return path


def load_checkpoint(path: Union[str, Path], expected_digest: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read checkpoint: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt or truncated checkpoint (line {e.lineno}, column {e.colno}): {e.msg}") from e
    try:
        ckpt = checkpoint_from_dict(doc)
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}") from e
    except (KeyError, TypeError, ValueError, AttributeError, ArithmeticError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint: {e!r}") from e

    if expected_digest and ckpt.config_digest != expected_digest:
        logger.warning(
            f"{path}: written under config digest {ckpt.config_digest[:12] or '-'}, "
            f"current config is {expected_digest[:12]}"
        )
    return ckpt


def load_checkpoints(paths: List[Union[str, Path]], expected_digest: Optional[str] = None) -> List[Checkpoint]:
    return [load_checkpoint(p, expected_digest) for p in paths]
