"""Synthetic classification data and its JSON file format.

A dataset file is either explicit::

    {"model": "multiclass", "labels": [-1, 1], "task_loss": [[0, 1], [1, 0]],
     "beta": 8.0, "feature_map": "signed",
     "instances": [{"x": [0.3, 1.2], "y": 1}, ...]}

or generative, with ``"generator": {"name": "two_class_toy", "n": 200, "seed": 0}``
in place of ``instances``. ``feature_map`` is ``"signed"`` (``y * x`` for
labels -1/+1), ``"block"`` (one copy of x per label block) or ``"explicit"``,
where each instance carries its (K, d) feature matrix as ``"phi"``.
A ``"model": "binary"`` file has ``instances`` with ``x`` and ``y`` in {-1, +1}.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .models import (
    ClassificationData,
    LinearBinaryModel,
    MulticlassModel,
    block_feature_map,
    signed_feature_map,
)
from .rng import make_rng

__all__ = ["two_class_toy", "dataset_from_dict", "load_dataset", "toy_dataset_dict"]


def two_class_toy(n=200, seed=0, center=0.4, spread=1.2, radius=(0.5, 2.0)):
    """Linearly separable 2-d points: ``x = y r (cos a, sin a)``, ``a`` within
    ``spread`` of ``center``.

    Since ``spread < pi/2`` every point has positive margin along the center
    direction, so the data are separable through the origin.
    """
    rng = make_rng(seed, "two_class_toy")
    ang = rng.uniform(-spread, spread, n) + center
    rad = rng.uniform(radius[0], radius[1], n)
    y = np.where(rng.random(n) < 0.5, -1, 1)
    x = (y * rad)[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return x, y


_GENERATORS = {"two_class_toy": two_class_toy}


def toy_dataset_dict(n=200, seed=0, beta=8.0) -> dict:
    """Dataset file contents for the generative two-class toy problem."""
    return {"model": "multiclass", "labels": [-1, 1], "task_loss": [[0.0, 1.0], [1.0, 0.0]],
            "beta": beta, "feature_map": "signed",
            "generator": {"name": "two_class_toy", "n": n, "seed": seed}}


def _instances(d: dict):
    if "generator" in d:
        g = dict(d["generator"])
        name = g.pop("name", None)
        if name not in _GENERATORS:
            raise ValueError(f"unknown generator {name!r}")
        return _GENERATORS[name](**g)
    inst = d.get("instances")
    if not inst:
        raise ValueError("dataset needs 'instances' or 'generator'")
    return [i.get("x", i.get("phi")) for i in inst], [i["y"] for i in inst]


def dataset_from_dict(d: dict):
    """``(ClassificationData, model)`` from parsed dataset JSON."""
    kind = d.get("model", "multiclass")
    xs, ys = _instances(d)
    if kind == "binary":
        model = LinearBinaryModel(l_max=float(d.get("l_max", 1.0)))
        return model.featurize(xs, ys), model
    if kind != "multiclass":
        raise ValueError(f"unknown model {kind!r}")
    labels = tuple(d["labels"])
    fmap = d.get("feature_map", "explicit")
    if fmap == "signed":
        if sorted(labels) != [-1, 1]:
            raise ValueError("the signed feature map needs labels -1 and 1")
        feature_map = signed_feature_map
    elif fmap == "block":
        block = block_feature_map(len(labels))
        feature_map = lambda x, y: block(x, labels.index(y))  # noqa: E731
    elif fmap == "explicit":
        return _explicit(d, xs, ys, labels)
    else:
        raise ValueError(f"unknown feature map {fmap!r}")
    model = MulticlassModel(feature_map, labels, float(d["beta"]),
                            np.asarray(d["task_loss"], dtype=float), d.get("l_max"))
    return model.featurize(list(xs), list(ys)), model


def _explicit(d, phis, ys, labels):
    phi = np.asarray(phis, dtype=float)
    if phi.ndim != 3 or phi.shape[1] != len(labels):
        raise ValueError("explicit features must be (N, K, d) with K = number of labels")
    model = MulticlassModel(lambda x, y: np.asarray(x)[labels.index(y)], labels,
                            float(d["beta"]), np.asarray(d["task_loss"], dtype=float),
                            d.get("l_max"))
    index = {y: i for i, y in enumerate(labels)}
    return ClassificationData(phi, np.array([index[y] for y in ys], dtype=np.int64)), model


def load_dataset(path):
    with open(Path(path), encoding="utf-8") as fh:
        return dataset_from_dict(json.load(fh))
