"""JSON documents for MDPs, layouts, surrogates, policies and models.

Every document is a JSON object with a ``kind`` and a ``schema_version``.
Floats are written with ``repr`` precision, so a save/load round trip is
bit-exact. Schemas (``S`` states, ``A`` actions, ``T`` horizon):

``mdp``
    ``states`` (int S), ``actions`` (int A), ``transition`` (S x A x S nested
    lists), ``reward`` (S), ``horizon`` (T), ``initial_dist`` (S),
    ``absorbing`` (S bools), optional ``state_names`` / ``action_names``.
``puddle_layout``
    see :class:`reward_tweaking.environments.PuddleLayout`.
``surrogate_reward``
    ``values`` (S x T, indexed [state][time]).
``policy``
    ``action_table`` (T x S ints, indexed [time][state]).
``linear_reward_model``
    ``num_states``, ``horizon``, ``time_features`` (bool), ``weights`` (flat).
"""
from __future__ import annotations

import csv
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Union

import numpy as np

from .environments import PuddleLayout
from .mdp_core import FiniteHorizonMdp, NonStationaryPolicy, SurrogateReward

SCHEMA_VERSION = 1
PathLike = Union[str, Path]


class SchemaError(ValueError):
    pass


def _header(kind: str) -> dict:
    return {"kind": kind, "schema_version": SCHEMA_VERSION}


def _expect(d: Mapping, kind: str, allowed: set) -> None:
    if d.get("kind") != kind:
        raise SchemaError(f"expected a '{kind}' document, got kind={d.get('kind')!r}")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {d.get('schema_version')!r}")
    unknown = set(d) - allowed - {"kind", "schema_version"}
    if unknown:
        raise SchemaError(f"unknown keys in '{kind}' document: {sorted(unknown)}")


def mdp_to_dict(mdp: FiniteHorizonMdp) -> dict:
    d = _header("mdp")
    d.update(
        states=mdp.num_states,
        actions=mdp.num_actions,
        transition=mdp.transition.tolist(),
        reward=mdp.reward.tolist(),
        horizon=mdp.horizon,
        initial_dist=mdp.initial_dist.tolist(),
        absorbing=mdp.absorbing.tolist(),
    )
    if mdp.state_names is not None:
        d["state_names"] = list(mdp.state_names)
    if mdp.action_names is not None:
        d["action_names"] = list(mdp.action_names)
    return d


def mdp_from_dict(d: Mapping) -> FiniteHorizonMdp:
    _expect(
        d,
        "mdp",
        {"states", "actions", "transition", "reward", "horizon", "initial_dist", "absorbing",
         "state_names", "action_names"},
    )
    mdp = FiniteHorizonMdp(
        transition=np.array(d["transition"], dtype=float),
        reward=np.array(d["reward"], dtype=float),
        horizon=int(d["horizon"]),
        initial_dist=np.array(d["initial_dist"], dtype=float),
        absorbing=np.array(d.get("absorbing", [False] * int(d["states"])), dtype=bool),
        state_names=d.get("state_names"),
        action_names=d.get("action_names"),
    )
    if mdp.num_states != d["states"] or mdp.num_actions != d["actions"]:
        raise SchemaError("declared states/actions disagree with the transition tensor")
    return mdp


def layout_to_dict(layout: PuddleLayout) -> dict:
    return {**_header("puddle_layout"), **layout.to_dict()}


def layout_from_dict(d: Mapping) -> PuddleLayout:
    if d.get("kind", "puddle_layout") != "puddle_layout":
        raise SchemaError(f"expected a 'puddle_layout' document, got {d.get('kind')!r}")
    return PuddleLayout.from_dict(dict(d))


def surrogate_to_dict(surrogate: SurrogateReward) -> dict:
    return {**_header("surrogate_reward"), "values": surrogate.values.tolist()}


def surrogate_from_dict(d: Mapping) -> SurrogateReward:
    _expect(d, "surrogate_reward", {"values"})
    return SurrogateReward(np.array(d["values"], dtype=float))


def policy_to_dict(policy: NonStationaryPolicy) -> dict:
    return {**_header("policy"), "action_table": policy.action_table.tolist()}


def policy_from_dict(d: Mapping) -> NonStationaryPolicy:
    _expect(d, "policy", {"action_table"})
    return NonStationaryPolicy(np.array(d["action_table"], dtype=np.int64))


def save_json(obj: Any, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")


def load_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text())


def save_mdp(mdp: FiniteHorizonMdp, path: PathLike) -> None:
    save_json(mdp_to_dict(mdp), path)


def load_mdp(path: PathLike) -> FiniteHorizonMdp:
    return mdp_from_dict(load_json(path))


def canonical_layout_path() -> Path:
    return Path(str(resources.files("reward_tweaking") / "data" / "puddle_canonical.json"))


def canonical_puddle_layout() -> PuddleLayout:
    """The frozen calibration layout shipped with the package."""
    return layout_from_dict(load_json(canonical_layout_path()))


def content_hash(arr: np.ndarray) -> str:
    """64-bit hex digest of an array's JSON serialization."""
    payload = json.dumps(np.asarray(arr, dtype=float).tolist()).encode()
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def write_csv(path: PathLike, header: Iterable[str], rows: Iterable[Iterable[Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def append_jsonl(path: PathLike, record: Mapping) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as f:
        f.write(json.dumps(dict(record), allow_nan=False, sort_keys=True) + "\n")


def write_jsonl(path: PathLike, records: Iterable[Mapping]) -> None:
    """Write records as JSON lines, replacing any existing file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for record in records:
            f.write(json.dumps(dict(record), allow_nan=False, sort_keys=True) + "\n")


def read_jsonl(path: PathLike) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
