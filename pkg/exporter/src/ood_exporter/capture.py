"""Checkpoint loading and activation-layer discovery via forward hooks.

Capture points are the outputs of activation modules (post-nonlinearity),
listed in the order they fire during a forward pass.  A module reused
several times in one pass yields one capture point per call, suffixed
with its call index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

ACTIVATION_TYPES = (
    nn.ReLU,
    nn.ReLU6,
    nn.LeakyReLU,
    nn.ELU,
    nn.SiLU,
    nn.GELU,
    nn.Sigmoid,
    nn.Tanh,
    nn.Hardswish,
    nn.Hardsigmoid,
)

BACKBONES = ("generic", "densenet121", "mobilenet_v2", "resnet50", "vgg16")


class CheckpointError(Exception):
    """The checkpoint cannot be loaded or does not fit the backbone."""


def _is_torchscript(path: Path) -> bool:
    import contextlib
    import io
    import warnings

    try:
        with warnings.catch_warnings(), contextlib.redirect_stderr(io.StringIO()):
            warnings.simplefilter("ignore")
            torch.jit.load(str(path), map_location="cpu")
        return True
    except Exception:
        return False


@dataclass(frozen=True)
class CapturePoint:
    name: str
    shape: tuple[int, ...]  # per-sample shape, batch dimension stripped


def load_model(checkpoint: str | Path, backbone: str = "generic") -> nn.Module:
    """Load an inference-ready model on CPU.

    'generic' expects a pickled eager nn.Module whose class is importable
    in this process; the named families build the torchvision graph and
    load a state dict.  TorchScript archives are rejected because hooks
    cannot observe scripted submodules.
    """
    path = Path(checkpoint)
    if backbone not in BACKBONES:
        raise CheckpointError(f"unsupported backbone {backbone!r}; known: {BACKBONES}")
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    if backbone == "generic":
        try:
            model = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:
            if _is_torchscript(path):
                raise CheckpointError(
                    f"{path} is a TorchScript archive; forward hooks cannot capture "
                    "activations from scripted modules, save the eager module with "
                    "torch.save(model, path) instead"
                ) from None
            raise CheckpointError(
                f"cannot load checkpoint {path}: {exc} "
                "(the pickled model class must be importable in this process)"
            ) from None
        if not isinstance(model, nn.Module):
            raise CheckpointError(f"checkpoint {path} does not contain a torch module")
    else:
        from torchvision import models

        builders = {
            "densenet121": models.densenet121,
            "mobilenet_v2": models.mobilenet_v2,
            "resnet50": models.resnet50,
            "vgg16": models.vgg16,
        }
        model = builders[backbone](weights=None)
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from None
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        try:
            model.load_state_dict(state)
        except RuntimeError as exc:
            raise CheckpointError(f"checkpoint {path} does not fit {backbone}: {exc}") from None
    model.eval()
    return model


class ActivationTap:
    """Hooks every activation module and records outputs per forward pass."""

    def __init__(self, model: nn.Module) -> None:
        self._model = model
        self._handles = []
        self._calls: dict[str, int] = {}
        self._events: list[tuple[str, torch.Tensor]] = []
        for name, module in model.named_modules():
            if isinstance(module, ACTIVATION_TYPES):
                self._handles.append(module.register_forward_hook(self._make_hook(name)))

    def _make_hook(self, name: str):
        def hook(module, inputs, output):
            index = self._calls.get(name, 0)
            self._calls[name] = index + 1
            self._events.append((f"{name}:{index}", output.detach()))

        return hook

    def run(self, batch: torch.Tensor) -> dict[str, torch.Tensor]:
        """One forward pass; returns captured outputs keyed by canonical name.

        Canonical names drop the ':0' suffix for modules that fire once,
        so simple models keep plain module paths.  Insertion order equals
        forward (depth) order.
        """
        self._calls = {}
        self._events = []
        with torch.no_grad():
            self._model(batch)
        totals: dict[str, int] = {}
        for name, _ in self._events:
            base = name.rsplit(":", 1)[0]
            totals[base] = totals.get(base, 0) + 1
        captured: dict[str, torch.Tensor] = {}
        for name, output in self._events:
            base, index = name.rsplit(":", 1)
            canonical = base if totals[base] == 1 else f"{base}:{index}"
            captured[canonical] = output
        return captured

    def close(self) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles = []


def _per_sample_shape(output: torch.Tensor) -> tuple[int, ...]:
    shape = tuple(output.shape)
    return shape[1:] if len(shape) > 1 else shape


def list_layers(
    checkpoint: str | Path, backbone: str = "generic", input_size: int = 224
) -> list[CapturePoint]:
    """Capturable activation layers in forward order, with per-sample shapes.

    The list index of each entry is the layer index the exported archive
    will use.
    """
    model = load_model(checkpoint, backbone)
    tap = ActivationTap(model)
    try:
        captured = tap.run(torch.zeros(1, 3, input_size, input_size))
    finally:
        tap.close()
    return [CapturePoint(name, _per_sample_shape(output)) for name, output in captured.items()]
