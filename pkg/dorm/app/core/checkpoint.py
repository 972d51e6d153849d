"""
Checkpoint container: an uncompressed .npz archive of little-endian float32 arrays plus a JSON
manifest stored under the reserved key '__manifest__'.
"""
from __future__ import annotations

import logging
import zipfile
from pathlib import Path
from typing import Any

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .exceptions import CheckpointError
from .model import DormModel, ModelConfig
from .textcodec import CharVocab, PhonemeVocab

logger = logging.getLogger(__name__)

MANIFEST_KEY = "__manifest__"
FORMAT_VERSION = 1


class CheckpointManifest(BaseModel):
    format_version: int = FORMAT_VERSION
    kind: str = "model"
    config: ModelConfig | None = None
    char_vocab_sha256: str | None = None
    phoneme_vocab_sha256: str | None = None
    tensors: dict[str, list[int]] = Field(default_factory=dict)
    train_state: dict[str, Any] | None = None
    metadata: dict[str, Any] = Field(default_factory=dict)


class LoadedCheckpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    manifest: CheckpointManifest
    model: DormModel
    extras: dict[str, np.ndarray]


def write_container(
    path: str | Path, arrays: dict[str, np.ndarray], manifest: CheckpointManifest
) -> None:
    if MANIFEST_KEY in arrays:
        raise CheckpointError(f"'{MANIFEST_KEY}' is a reserved tensor name")
    stored = {}
    for name, array in arrays.items():
        if array.dtype.kind == "f":
            array = array.astype("<f4")
        stored[name] = np.ascontiguousarray(array)
    manifest = manifest.model_copy(
        update={"tensors": {name: list(a.shape) for name, a in stored.items()}}
    )
    encoded = np.frombuffer(manifest.model_dump_json().encode("utf-8"), dtype=np.uint8)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as write:
        np.savez(write, **{MANIFEST_KEY: encoded}, **stored)
    tmp.replace(path)


def read_container(path: str | Path) -> tuple[CheckpointManifest, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"{path}: not a readable checkpoint container ({e})") from e

    if MANIFEST_KEY not in arrays:
        raise CheckpointError(f"{path}: missing manifest")
    try:
        manifest = CheckpointManifest.model_validate_json(arrays.pop(MANIFEST_KEY).tobytes())
    except ValidationError as e:
        raise CheckpointError(f"{path}: invalid manifest: {e}") from e
    for name, shape in manifest.tensors.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: manifest lists '{name}' but the tensor is missing")
        if list(arrays[name].shape) != shape:
            raise CheckpointError(
                f"{path}: tensor '{name}' has shape {list(arrays[name].shape)}, "
                f"manifest says {shape}"
            )
    return manifest, arrays


def model_arrays(model: DormModel) -> dict[str, np.ndarray]:
    return {
        name: tensor.detach().cpu().to(torch.float32).numpy()
        for name, tensor in model.state_dict().items()
    }


def save_checkpoint(
    path: str | Path,
    model: DormModel,
    cv: CharVocab,
    pv: PhonemeVocab,
    extras: dict[str, np.ndarray] | None = None,
    train_state: dict[str, Any] | None = None,
) -> None:
    arrays = model_arrays(model)
    for name in extras or {}:
        if name in arrays:
            raise CheckpointError(f"Extra tensor '{name}' collides with a model parameter")
    arrays.update(extras or {})
    manifest = CheckpointManifest(
        config=model.config,
        char_vocab_sha256=cv.sha256(),
        phoneme_vocab_sha256=pv.sha256(),
        train_state=train_state,
    )
    write_container(path, arrays, manifest)
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(
    path: str | Path, cv: CharVocab | None = None, pv: PhonemeVocab | None = None
) -> LoadedCheckpoint:
    manifest, arrays = read_container(path)
    if manifest.kind != "model" or manifest.config is None:
        raise CheckpointError(f"{path}: not a model checkpoint (kind={manifest.kind})")
    if cv is not None and manifest.char_vocab_sha256 != cv.sha256():
        raise CheckpointError(f"{path}: character vocabulary does not match the checkpoint")
    if pv is not None and manifest.phoneme_vocab_sha256 != pv.sha256():
        raise CheckpointError(f"{path}: phoneme vocabulary does not match the checkpoint")

    model = DormModel(manifest.config)
    expected = model.state_dict()
    state = {}
    for name, tensor in expected.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing tensor '{name}'")
        array = arrays.pop(name)
        if tuple(array.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{path}: tensor '{name}' has shape {tuple(array.shape)}, "
                f"config expects {tuple(tensor.shape)}"
            )
        state[name] = torch.from_numpy(array.astype(np.float32))
    model.load_state_dict(state)
    logger.info(f"Loaded checkpoint {path} ({model.num_parameters()} parameters)")
    return LoadedCheckpoint(manifest=manifest, model=model, extras=arrays)
