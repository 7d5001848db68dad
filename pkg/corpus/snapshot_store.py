"""
Snapshot Store
Lossless text snapshots of profiles, KG embeddings, representation parameters
and Q-networks. Floats are written as hex floats so reloads are bit-exact.
"""

import logging
from pathlib import Path
from typing import IO, Dict, Iterator, List, Tuple, Union

import numpy as np

from corpus.mobility_data import KGSchema
from services.exceptions import RIRLError, SchemaError, ShapeError
from services.imitation_dqn import LAYER_NAMES, QNetwork
from services.representation import (PARAM_FIELDS, SCALAR_FIELDS,
                                     RepresentationParams)
from services.spatial_kg import KGState, Relation
from services.user_state import ProfileTable, UserProfile

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

NO_POI = "-"
TAIL_KINDS = {Relation.BELONGS_TO: "category", Relation.LOCATES_AT: "zone"}
KIND_RELATIONS = {kind: rel for rel, kind in TAIL_KINDS.items()}


def encode_floats(values) -> str:
    return " ".join(float(v).hex() for v in np.ravel(values))


def decode_floats(text: str) -> np.ndarray:
    return np.array([float.fromhex(v) for v in text.split()], dtype=float)


def _records(stream: IO[str]) -> Iterator[List[str]]:
    for line in stream:
        line = line.rstrip("\n")
        if line and not line.startswith("#"):
            yield line.split("\t")


# ============================================
# PROFILES
# ============================================


def write_profiles(profiles: ProfileTable, stream: IO[str]):
    """One line per user: user_id, step, last_poi, N hex floats"""
    stream.write("# user_id\tstep\tlast_poi\tvector\n")
    for uid in sorted(profiles):
        p = profiles[uid]
        stream.write(f"{uid}\t{p.step}\t{p.last_poi or NO_POI}\t{encode_floats(p.u)}\n")


def read_profiles(stream: IO[str]) -> ProfileTable:
    table = {}
    for uid, step, last_poi, vector in _records(stream):
        table[uid] = UserProfile(uid, decode_floats(vector),
                                 None if last_poi == NO_POI else last_poi, int(step))
    return table


# ============================================
# KNOWLEDGE GRAPH
# ============================================


def write_kg(kg: KGState, stream: IO[str]):
    """Lines of kind (head | category | zone | relation), id, N hex floats"""
    stream.write(f"# dim={kg.dim}\n")
    for poi in kg.schema.pois:
        stream.write(f"head\t{poi}\t{encode_floats(kg.heads[poi])}\n")
    for (relation, entity), vec in sorted(kg.tails.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        stream.write(f"{TAIL_KINDS[relation]}\t{entity}\t{encode_floats(vec)}\n")
    for relation in Relation:
        stream.write(f"relation\t{relation.value}\t{encode_floats(kg.relations[relation])}\n")


def read_kg(stream: IO[str], schema: KGSchema) -> KGState:
    heads, tails, relations = {}, {}, {}
    for kind, entity, vector in _records(stream):
        vec = decode_floats(vector)
        if kind == "head":
            heads[entity] = vec
        elif kind in KIND_RELATIONS:
            tails[(KIND_RELATIONS[kind], entity)] = vec
        elif kind == "relation":
            relations[Relation(entity)] = vec
        else:
            raise SchemaError(f"Unknown KG snapshot kind {kind!r}")
    missing = set(schema.pois) - set(heads)
    if missing or len(relations) != len(Relation):
        raise SchemaError(f"KG snapshot misses {len(missing)} heads or a relation vector")
    dims = {v.shape[0] for v in (*heads.values(), *tails.values(), *relations.values())}
    if len(dims) != 1:
        raise ShapeError(f"KG snapshot mixes dimensions {sorted(dims)}")
    return KGState(schema, dims.pop(), heads, tails, relations)


# ============================================
# PARAMETERS AND NETWORKS
# ============================================


def _write_arrays(arrays: Dict[str, np.ndarray], stream: IO[str]):
    for name, value in arrays.items():
        shape = "x".join(str(d) for d in np.shape(value)) or "scalar"
        stream.write(f"{name}\t{shape}\t{encode_floats(value)}\n")


def _read_arrays(stream: IO[str]) -> Dict[str, np.ndarray]:
    arrays = {}
    for name, shape, vector in _records(stream):
        values = decode_floats(vector)
        dims: Tuple[int, ...] = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
        arrays[name] = values.reshape(dims)
    return arrays


def write_params(params: RepresentationParams, stream: IO[str]):
    _write_arrays({name: getattr(params, name) for name in PARAM_FIELDS}, stream)


def read_params(stream: IO[str]) -> RepresentationParams:
    arrays = _read_arrays(stream)
    if set(arrays) != set(PARAM_FIELDS):
        raise ShapeError(f"Parameter snapshot fields {sorted(arrays)} do not match")
    return RepresentationParams(**{name: float(arrays[name]) if name in SCALAR_FIELDS
                                   else arrays[name] for name in PARAM_FIELDS})


def write_qnet(net: QNetwork, stream: IO[str]):
    _write_arrays(net.params(), stream)


def read_qnet(stream: IO[str]) -> QNetwork:
    arrays = _read_arrays(stream)
    if set(arrays) != set(LAYER_NAMES):
        raise ShapeError(f"Network snapshot layers {sorted(arrays)} do not match")
    return QNetwork(*(arrays[name] for name in LAYER_NAMES))


# ============================================
# RUN DIRECTORY
# ============================================


def save_snapshots(out_dir: PathLike, profiles: ProfileTable, kg: KGState,
                   params: RepresentationParams, eval_net: QNetwork, target_net: QNetwork):
    """profiles/, kg/, qnet/ under out_dir"""
    out = Path(out_dir)
    targets = [
        (out / "profiles" / "profiles.tsv", write_profiles, profiles),
        (out / "kg" / "kg.tsv", write_kg, kg),
        (out / "kg" / "representation_params.tsv", write_params, params),
        (out / "qnet" / "eval.tsv", write_qnet, eval_net),
        (out / "qnet" / "target.tsv", write_qnet, target_net),
    ]
    for path, writer, value in targets:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer(value, fh)
    logger.info(f"Saved snapshots under {out}")


def load_snapshots(out_dir: PathLike, schema: KGSchema):
    """
    (profiles, kg, params, eval_net, target_net) saved by save_snapshots

    Raises:
        OSError: a snapshot file is missing
        SchemaError: a file is truncated or holds malformed values
    """
    out = Path(out_dir)
    try:
        with open(out / "profiles" / "profiles.tsv", encoding="utf-8") as fh:
            profiles = read_profiles(fh)
        with open(out / "kg" / "kg.tsv", encoding="utf-8") as fh:
            kg = read_kg(fh, schema)
        with open(out / "kg" / "representation_params.tsv", encoding="utf-8") as fh:
            params = read_params(fh)
        with open(out / "qnet" / "eval.tsv", encoding="utf-8") as fh:
            eval_net = read_qnet(fh)
        with open(out / "qnet" / "target.tsv", encoding="utf-8") as fh:
            target_net = read_qnet(fh)
    except RIRLError:
        raise
    except (ValueError, TypeError) as e:
        raise SchemaError(f"Malformed snapshot under {out}: {e}") from e
    logger.info(f"Loaded snapshots from {out}")
    return profiles, kg, params, eval_net, target_net
