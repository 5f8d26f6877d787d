"""Binary agent checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"TTRLCKP1"
    uint32    header length H
    H bytes   UTF-8 JSON header: algorithm, dims, hyperparameters,
              scalars (log_alpha), Adam step counts and an ordered
              manifest of [name, shape] pairs
    ...       every manifest array as packed float64, in manifest order

Network parameters appear as ``net/<name>/<index>`` (index follows
``MlpNetwork.params()``: W0, b0, W1, b1, ...), Adam moments as
``adam/<name>/m/<index>`` and ``adam/<name>/v/<index>``, input statistics
as ``norm/total``, ``norm/total_sq`` and ``norm/count``. Floats are stored
bit-for-bit, so save -> load is exact.
"""
from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from ..numerics import ContractError
from .learners import AlgoHyperParams, make_agent

MAGIC = b"TTRLCKP1"


def _arrays(agent):
    for name, net in agent.named_networks().items():
        for i, p in enumerate(net.params()):
            yield f"net/{name}/{i}", p
    for name, opt in agent.optimizers().items():
        for i, m in enumerate(opt.first_moment):
            yield f"adam/{name}/m/{i}", m
        for i, v in enumerate(opt.second_moment):
            yield f"adam/{name}/v/{i}", v
    if agent.normalizer is not None:
        yield "norm/total", agent.normalizer.total
        yield "norm/total_sq", agent.normalizer.total_sq
        yield "norm/count", agent.normalizer.count


def save_agent(agent, path):
    manifest = []
    blobs = []
    for name, arr in _arrays(agent):
        manifest.append([name, list(arr.shape)])
        blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    hp = dataclasses.asdict(agent.hp)
    hp["hidden_sizes"] = list(hp["hidden_sizes"])
    header = {
        "algorithm": agent.algorithm,
        "obs_dim": agent.obs_dim,
        "goal_dim": agent.goal_dim,
        "action_dim": agent.action_dim,
        "updates": agent.updates,
        "hyperparams": hp,
        # float.hex keeps the scalars exact through JSON
        "scalars": {k: float(v).hex() for k, v in agent.scalars().items()},
        "adam_steps": {k: o.step_count for k, o in agent.optimizers().items()},
        "manifest": manifest,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load_agent(path):
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise ContractError(f"cannot read checkpoint {path}: {exc}") from exc
    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + 4:
        raise ContractError(f"{path} is not an agent checkpoint")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    off = len(MAGIC) + 4
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContractError(f"corrupt checkpoint header in {path}") from exc
    off += hlen
    hp = AlgoHyperParams(**header["hyperparams"])
    agent = make_agent(header["algorithm"], header["obs_dim"], header["goal_dim"],
                       header["action_dim"], hp)
    targets = dict(_arrays(agent))
    for name, shape in header["manifest"]:
        if name not in targets or list(targets[name].shape) != shape:
            raise ContractError(f"checkpoint array {name} {shape} does not match the agent")
        count = int(np.prod(shape)) if shape else 1
        if off + 8 * count > len(data):
            raise ContractError(f"checkpoint {path} is truncated")
        targets[name][...] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
    if off != len(data):
        raise ContractError(f"checkpoint {path} has trailing bytes")
    if agent.normalizer is not None:
        agent.normalizer.recompute()
    agent.set_scalars({k: float.fromhex(v) for k, v in header["scalars"].items()})
    for k, steps in header["adam_steps"].items():
        agent.optimizers()[k].step_count = int(steps)
    agent.updates = int(header["updates"])
    return agent
