"""JSON persistence for trained models.

All model kinds share an envelope with ``format_version`` and
``model_kind``; floats go through Python's repr-based JSON encoding,
which round-trips float64 exactly, so reloaded models reproduce
predictions bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import SvmModel, TwoStageModel
from .kernels import KernelSpec
from .model import HyperParams, TrainedModel

FORMAT_VERSION = 1


def _kernel_to_dict(spec: KernelSpec) -> dict:
    return {"kind": spec.kind, "gamma": spec.gamma, "jitter": spec.jitter}


def _kernel_from_dict(d: dict) -> KernelSpec:
    return KernelSpec(kind=d["kind"], gamma=d["gamma"], jitter=d["jitter"])


def save_model(model, path) -> None:
    """Serialize a trained model (joint, svm, or two_stage) to JSON."""
    if isinstance(model, TrainedModel):
        payload = {
            "format_version": FORMAT_VERSION,
            "model_kind": "gemmed",
            "kernel": _kernel_to_dict(model.kernel),
            "x": model.x.tolist(),
            "y": model.y.tolist(),
            "lambda": model.lam.tolist(),
            "eta_hat": model.eta_hat.tolist(),
            "gamma_hat": {"-1": model.gamma_hat[0], "1": model.gamma_hat[1]},
            "beta_hat": {"-1": model.beta_hat[0], "1": model.beta_hat[1]},
            "theta": model.theta,
            "k": model.k,
            "alpha": model.alpha,
            "target_coverage": model.target_coverage,
            "trace": list(model.trace),
            "hyper": asdict(model.hyper) if model.hyper is not None else None,
        }
    elif isinstance(model, SvmModel):
        payload = {
            "format_version": FORMAT_VERSION,
            "model_kind": "svm",
            "kernel": _kernel_to_dict(model.kernel),
            "x": model.x.tolist(),
            "y": model.y.tolist(),
            "alpha": model.alpha.tolist(),
            "C": model.C,
            "converged": model.converged,
        }
    elif isinstance(model, TwoStageModel):
        payload = {
            "format_version": FORMAT_VERSION,
            "model_kind": "two_stage",
            "kernel": _kernel_to_dict(model.svm.kernel),
            "x": model.svm.x.tolist(),
            "y": model.svm.y.tolist(),
            "alpha": model.svm.alpha.tolist(),
            "C": model.svm.C,
            "converged": model.svm.converged,
            "kept_idx": model.kept_idx.tolist(),
            "removed_idx": model.removed_idx.tolist(),
            "theta": model.theta,
            "k": model.k,
            "alpha_level": model.alpha_level,
        }
    else:
        raise ValueError(f"cannot serialize {type(model).__name__}")
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_model(path):
    """Load any serialized model; the kind tag picks the class."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(payload, dict) or "model_kind" not in payload:
        raise ValueError(f"{path}: missing model_kind")
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {version!r}")
    kind = payload["model_kind"]
    try:
        if kind == "gemmed":
            hyper = payload.get("hyper")
            return TrainedModel(
                kernel=_kernel_from_dict(payload["kernel"]),
                x=np.array(payload["x"], dtype=float),
                y=np.array(payload["y"], dtype=int),
                lam=np.array(payload["lambda"], dtype=float),
                eta_hat=np.array(payload["eta_hat"], dtype=float),
                gamma_hat=np.array([payload["gamma_hat"]["-1"],
                                    payload["gamma_hat"]["1"]]),
                beta_hat=np.array([payload["beta_hat"]["-1"],
                                   payload["beta_hat"]["1"]]),
                theta=float(payload["theta"]),
                k=int(payload["k"]),
                alpha=float(payload["alpha"]),
                target_coverage=float(payload["target_coverage"]),
                trace=list(payload.get("trace", [])),
                hyper=HyperParams(**hyper) if hyper else None,
                gem=None,
            )
        if kind == "svm":
            return SvmModel(
                kernel=_kernel_from_dict(payload["kernel"]),
                x=np.array(payload["x"], dtype=float),
                y=np.array(payload["y"], dtype=int),
                alpha=np.array(payload["alpha"], dtype=float),
                C=float(payload["C"]),
                converged=bool(payload["converged"]),
            )
        if kind == "two_stage":
            svm = SvmModel(
                kernel=_kernel_from_dict(payload["kernel"]),
                x=np.array(payload["x"], dtype=float),
                y=np.array(payload["y"], dtype=int),
                alpha=np.array(payload["alpha"], dtype=float),
                C=float(payload["C"]),
                converged=bool(payload["converged"]),
            )
            return TwoStageModel(
                svm=svm,
                kept_idx=np.array(payload["kept_idx"], dtype=int),
                removed_idx=np.array(payload["removed_idx"], dtype=int),
                theta=float(payload["theta"]),
                k=int(payload["k"]),
                alpha_level=float(payload["alpha_level"]),
            )
    except KeyError as exc:
        raise ValueError(f"{path}: missing field {exc}") from None
    raise ValueError(f"{path}: unknown model_kind {kind!r}")
