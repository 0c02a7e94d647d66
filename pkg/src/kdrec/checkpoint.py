"""Model checkpoints: one directory per model, PMMF matrices plus a JSON
manifest. Teacher checkpoints also carry their frozen PCA reducers so a
reload never refits them."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data_io import ModalityFeatureSet, PcaReducer, load_features, save_features
from .student import StudentModel
from .teacher import TeacherModel


def save_student(out_dir, model: StudentModel) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": "student",
        "n_users": model.n_users,
        "n_items": model.n_items,
        "d": model.d,
        "n_layers": model.n_layers,
        "seed": model.seed,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    save_features(out / "user_emb.pmmf", model.user_emb.value)
    save_features(out / "item_emb.pmmf", model.item_emb.value)


def load_student(ckpt_dir) -> StudentModel:
    root = Path(ckpt_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("kind") != "student":
        raise ValueError(f"{ckpt_dir} is not a student checkpoint")
    model = StudentModel(manifest["n_users"], manifest["n_items"], manifest["d"],
                         manifest["n_layers"], seed=manifest.get("seed", 0))
    model.user_emb.value[:] = load_features(root / "user_emb.pmmf")
    model.item_emb.value[:] = load_features(root / "item_emb.pmmf")
    return model


def save_teacher(out_dir, model: TeacherModel) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": "teacher",
        "n_users": model.n_users,
        "n_items": model.n_items,
        "d": model.d,
        "n_layers": model.n_layers,
        "dropout_rate": model.dropout_rate,
        "lambda1": model.lambda1,
        "seed": model.seed,
        "modalities": model.features.dims(),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    save_features(out / "user_emb.pmmf", model.user_emb.value)
    save_features(out / "item_emb.pmmf", model.item_emb.value)
    save_features(out / "prompt_weight.pmmf", model.prompt.weight.value)
    save_features(out / "prompt_bias.pmmf", model.prompt.bias.value)
    for name, layer in model.reducers.items():
        save_features(out / f"reduce_{name}_weight.pmmf", layer.weight.value)
        save_features(out / f"reduce_{name}_bias.pmmf", layer.bias.value)
    for name, pca in model.pca.items():
        save_features(out / f"pca_{name}_mean.pmmf", pca.mean[None, :])
        save_features(out / f"pca_{name}_components.pmmf", pca.components)
        save_features(out / f"pca_{name}_variance.pmmf", pca.explained_variance[None, :])


def load_teacher(ckpt_dir, features: ModalityFeatureSet) -> TeacherModel:
    """Rebuild a teacher from its checkpoint; the raw modality features come
    from the dataset directory, everything else from the checkpoint."""
    root = Path(ckpt_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("kind") != "teacher":
        raise ValueError(f"{ckpt_dir} is not a teacher checkpoint")
    if features.dims() != manifest["modalities"]:
        raise ValueError(
            f"feature dims {features.dims()} do not match checkpoint "
            f"{manifest['modalities']}")
    reducers = {}
    for name in manifest["modalities"]:
        reducers[name] = PcaReducer(
            name,
            load_features(root / f"pca_{name}_mean.pmmf")[0],
            load_features(root / f"pca_{name}_components.pmmf"),
            load_features(root / f"pca_{name}_variance.pmmf")[0],
        )
    model = TeacherModel(manifest["n_users"], manifest["n_items"], manifest["d"],
                         manifest["n_layers"], features, reducers,
                         manifest["dropout_rate"], manifest["lambda1"],
                         seed=manifest.get("seed", 0))
    model.user_emb.value[:] = load_features(root / "user_emb.pmmf")
    model.item_emb.value[:] = load_features(root / "item_emb.pmmf")
    model.prompt.weight.value[:] = load_features(root / "prompt_weight.pmmf")
    model.prompt.bias.value[:] = load_features(root / "prompt_bias.pmmf")
    for name, layer in model.reducers.items():
        layer.weight.value[:] = load_features(root / f"reduce_{name}_weight.pmmf")
        layer.bias.value[:] = load_features(root / f"reduce_{name}_bias.pmmf")
    return model


def load_checkpoint_manifest(ckpt_dir) -> dict:
    return json.loads((Path(ckpt_dir) / "manifest.json").read_text(encoding="utf-8"))
