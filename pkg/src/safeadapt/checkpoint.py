"""Versioned plain-text checkpoints.

A checkpoint is a named collection of arrays::

    safeadapt-checkpoint 1
    array ego.0.policy.W0 float64 21,32
    <row-major values separated by spaces>
    array ego.0.policy.b0 float64 32
    ...

Floats are written with ``repr`` (shortest round-tripping decimal), so a
save/load cycle is bit-exact.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .games import EpisodeBatch
from .nets import Discriminator, Network, Policy, ValueFunction
from .opponent_model import ExperienceDataset, OpponentModel

FORMAT = "safeadapt-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _fmt(a: np.ndarray) -> str:
    if a.dtype.kind == "f":
        return " ".join(repr(float(x)) for x in a.ravel())
    return " ".join(str(int(x)) for x in a.ravel())


def dumps_arrays(arrays: dict) -> str:
    lines = [f"{FORMAT} {FORMAT_VERSION}"]
    for name, a in arrays.items():
        a = np.asarray(a)
        if a.dtype == bool:
            a = a.astype(np.int64)
            dtype = "bool"
        elif a.dtype.kind == "f":
            a = a.astype(np.float64)
            dtype = "float64"
        elif a.dtype.kind in "iu":
            a = a.astype(np.int64)
            dtype = "int64"
        else:
            raise CheckpointError(f"unsupported dtype {a.dtype} for {name}")
        if " " in name:
            raise CheckpointError(f"array names cannot contain spaces: {name!r}")
        shape = ",".join(str(d) for d in a.shape) or "-"
        lines.append(f"array {name} {dtype} {shape}")
        lines.append(_fmt(a))
    return "\n".join(lines) + "\n"


def loads_arrays(text: str) -> dict:
    lines = text.split("\n")
    header = lines[0].split()
    if len(header) != 2 or header[0] != FORMAT:
        raise CheckpointError("not a safeadapt checkpoint")
    if header[1] != str(FORMAT_VERSION):
        raise CheckpointError(f"checkpoint format version {header[1]} is not supported "
                              f"(expected {FORMAT_VERSION})")
    out = {}
    i = 1
    while i < len(lines) and lines[i]:
        parts = lines[i].split()
        if len(parts) != 4 or parts[0] != "array":
            raise CheckpointError(f"malformed entry on line {i + 1}: {lines[i][:60]!r}")
        _, name, dtype, shape = parts
        shape = () if shape == "-" else tuple(int(d) for d in shape.split(","))
        values = lines[i + 1].split()
        if dtype == "float64":
            a = np.array([float(v) for v in values], dtype=np.float64)
        elif dtype in ("int64", "bool"):
            a = np.array([int(v) for v in values], dtype=np.int64)
        else:
            raise CheckpointError(f"unknown dtype {dtype!r} for {name}")
        a = a.reshape(shape)
        out[name] = a.astype(bool) if dtype == "bool" else a
        i += 2
    return out


def save_arrays(path, arrays: dict) -> None:
    Path(path).write_text(dumps_arrays(arrays))


def load_arrays(path) -> dict:
    try:
        return loads_arrays(Path(path).read_text())
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- artifact (de)serialisation ---------------------------------------------------------


def _put_net(out: dict, prefix: str, net: Network):
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.W{k}"] = w
        out[f"{prefix}.b{k}"] = b


def _get_net(arrays: dict, prefix: str) -> Network:
    weights, biases, k = [], [], 0
    while f"{prefix}.W{k}" in arrays:
        weights.append(arrays[f"{prefix}.W{k}"])
        biases.append(arrays[f"{prefix}.b{k}"])
        k += 1
    if not weights:
        raise CheckpointError(f"missing network {prefix!r}")
    return Network(weights, biases)


_EPISODE_FIELDS = ("episode", "t", "state", "obs_ego", "obs_oppo", "a_ego", "a_oppo",
                   "logp_ego", "logp_oppo", "r_ego", "done", "members_ego", "members_oppo")


def artifacts_to_arrays(art) -> dict:
    out = {"meta.ensemble_size": np.array(len(art.ego))}
    for side in ("ego", "oppo"):
        for i, learner in enumerate(getattr(art, side)):
            _put_net(out, f"{side}.{i}.policy", learner.policy.net)
            _put_net(out, f"{side}.{i}.value", learner.value.net)
    for name in ("exploiter1", "exploiter2"):
        learner = getattr(art, name)
        if learner is not None:
            _put_net(out, f"{name}.policy", learner.policy.net)
            _put_net(out, f"{name}.value", learner.value.net)
    if art.opponent_model is not None:
        m = art.opponent_model
        _put_net(out, "model.policy", m.policy.net)
        _put_net(out, "model.value", m.value.net)
        _put_net(out, "model.disc", m.disc.net)
        out["model.disc.n_actions"] = np.array(m.disc.n_actions)
    if art.experience is not None:
        ep = art.experience.episodes
        for f in _EPISODE_FIELDS:
            out[f"experience.{f}"] = getattr(ep, f)
        out["experience.discount"] = np.array(ep.discount)
    return out


def arrays_to_artifacts(arrays: dict):
    from .protocol import Learner, PhaseArtifacts

    n = int(arrays["meta.ensemble_size"])

    def learner(prefix):
        return Learner(Policy(_get_net(arrays, f"{prefix}.policy")),
                       ValueFunction(_get_net(arrays, f"{prefix}.value")))

    ego = tuple(learner(f"ego.{i}") for i in range(n))
    oppo = tuple(learner(f"oppo.{i}") for i in range(n))
    exploiter2 = learner("exploiter2") if "exploiter2.policy.W0" in arrays else None
    model = None
    if "model.policy.W0" in arrays:
        model = OpponentModel(Policy(_get_net(arrays, "model.policy")),
                              ValueFunction(_get_net(arrays, "model.value")),
                              Discriminator(_get_net(arrays, "model.disc"),
                                            int(arrays["model.disc.n_actions"])))
    experience = None
    if "experience.episode" in arrays:
        kw = {f: arrays[f"experience.{f}"] for f in _EPISODE_FIELDS}
        experience = ExperienceDataset.from_episodes(
            EpisodeBatch(**kw, discount=float(arrays["experience.discount"])))
    return PhaseArtifacts(ego, oppo, learner("exploiter1"), exploiter2, model, experience)


def save_artifacts(path, art) -> str:
    save_arrays(path, artifacts_to_arrays(art))
    return file_hash(path)


def load_artifacts(path):
    return arrays_to_artifacts(load_arrays(path))


def checkpoint_roundtrip(art, path):
    save_artifacts(path, art)
    return load_artifacts(path)
