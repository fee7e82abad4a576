"""Model serialization, wire messages, and the simulated node/server channel.

Models serialize to a self-describing canonical form: a fixed magic, the
schema tag, a sorted-key JSON header describing the tree, then the raw
little-endian float64 parameter blocks. Equal trees always produce equal
bytes, which makes traces hashable and replay comparisons exact. The same
bytes double as the on-disk checkpoint format (``.eflmodel``).
"""
from __future__ import annotations

import base64
import json
import struct
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ChannelClosed, ContractViolation, ProtocolError, SerializationError
from .learners import LearnerConfig
from .models import (
    EnsembleModel,
    FusionRule,
    LeafModel,
    ModelId,
    ModelOrigin,
    ModelTree,
    ParamVector,
)

SCHEMA = "eflsim/1"
MAGIC = b"EFLM"
MODEL_FILE_SUFFIX = ".eflmodel"


def _id_to_doc(model_id: ModelId) -> dict:
    return {
        "label": model_id.label,
        "version": model_id.version,
        "origin": {"kind": model_id.origin.kind, "index": model_id.origin.index},
    }


def _id_from_doc(doc: dict) -> ModelId:
    return ModelId(
        doc["label"], doc["version"], ModelOrigin(doc["origin"]["kind"], doc["origin"]["index"])
    )


def _config_to_doc(config: LearnerConfig) -> dict:
    return {
        "label": config.label,
        "hidden_layers": list(config.hidden_layers),
        "activation": config.activation,
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "max_epochs": config.max_epochs,
        "early_stop_patience": config.early_stop_patience,
        "validation_fraction": config.validation_fraction,
        "l2_penalty": config.l2_penalty,
    }


def _config_from_doc(doc: dict) -> LearnerConfig:
    return LearnerConfig(
        label=doc["label"],
        hidden_layers=tuple(doc["hidden_layers"]),
        activation=doc["activation"],
        learning_rate=doc["learning_rate"],
        batch_size=doc["batch_size"],
        max_epochs=doc["max_epochs"],
        early_stop_patience=doc["early_stop_patience"],
        validation_fraction=doc["validation_fraction"],
        l2_penalty=doc["l2_penalty"],
    )


def _tree_to_doc(node: ModelTree, blocks: list[bytes], offset: list[int]) -> dict:
    if isinstance(node, LeafModel):
        raw = np.ascontiguousarray(node.params.values, dtype="<f8").tobytes()
        doc = {
            "kind": "leaf",
            "id": _id_to_doc(node.id),
            "config": _config_to_doc(node.config),
            "layer_dims": list(node.params.layer_dims),
            "offset": offset[0],
        }
        blocks.append(raw)
        offset[0] += len(raw)
        return doc
    return {
        "kind": "ensemble",
        "id": _id_to_doc(node.id),
        "fusion": node.fusion.value,
        "children": [_tree_to_doc(child, blocks, offset) for child in node.children],
    }


def serialize_model(model: ModelTree) -> bytes:
    """Canonical bytes for a model tree; equal trees yield equal bytes."""
    blocks: list[bytes] = []
    offset = [0]
    root = _tree_to_doc(model, blocks, offset)
    header = json.dumps(
        {"root": root, "params_bytes": offset[0]}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return b"".join(
        [
            MAGIC,
            struct.pack("<H", len(SCHEMA)),
            SCHEMA.encode("ascii"),
            struct.pack("<I", len(header)),
            header,
            *blocks,
        ]
    )


def _tree_from_doc(doc: dict, blob: bytes, blob_start: int) -> ModelTree:
    if doc["kind"] == "ensemble":
        children = tuple(_tree_from_doc(c, blob, blob_start) for c in doc["children"])
        return EnsembleModel(_id_from_doc(doc["id"]), children, FusionRule.from_name(doc["fusion"]))
    if doc["kind"] != "leaf":
        raise SerializationError(f"unknown tree node kind {doc['kind']!r}")
    dims = tuple(doc["layer_dims"])
    n_bytes = 8 * sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    start = blob_start + doc["offset"]
    if start + n_bytes > len(blob):
        raise SerializationError(
            f"model blob truncated: leaf {doc['id']['label']!r} needs bytes up to "
            f"{start + n_bytes}, blob ends at {len(blob)}",
            offset=len(blob),
        )
    values = np.frombuffer(blob[start : start + n_bytes], dtype="<f8").astype(np.float64)
    return LeafModel(
        _id_from_doc(doc["id"]), _config_from_doc(doc["config"]), ParamVector(values, dims)
    )


def deserialize_model(blob: bytes) -> ModelTree:
    """Inverse of serialize_model; rejects unknown schema versions."""
    if len(blob) < len(MAGIC) + 2 or blob[: len(MAGIC)] != MAGIC:
        raise SerializationError("not a model blob (bad magic)", offset=0)
    pos = len(MAGIC)
    (schema_len,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    if pos + schema_len > len(blob):
        raise SerializationError("model blob truncated in schema tag", offset=pos)
    schema = blob[pos : pos + schema_len].decode("ascii", errors="replace")
    pos += schema_len
    if schema != SCHEMA:
        raise SerializationError(f"unsupported schema {schema!r}, expected {SCHEMA!r}")
    if pos + 4 > len(blob):
        raise SerializationError("model blob truncated before header length", offset=pos)
    (header_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if pos + header_len > len(blob):
        raise SerializationError("model blob truncated inside header", offset=pos)
    try:
        header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SerializationError(f"model header is not valid JSON: {exc}", offset=pos) from None
    pos += header_len
    if pos + header["params_bytes"] > len(blob):
        raise SerializationError(
            f"model blob truncated: header promises {header['params_bytes']} parameter bytes, "
            f"{len(blob) - pos} available",
            offset=len(blob),
        )
    try:
        return _tree_from_doc(header["root"], blob, pos)
    except (KeyError, TypeError) as exc:
        raise SerializationError(f"malformed model header: {exc}") from None


# --------------------------------------------------------------------------
# Wire messages
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeReport:
    """What a node sends the server after finishing a round."""

    node_id: int
    round_no: int
    lel_blob: bytes
    b2m: tuple[tuple[ModelId, float], ...]
    accuracy_map: dict[str, float]
    lel_accuracy: float
    changed: bool

    def b2m_labels(self) -> tuple[str, str]:
        return (self.b2m[0][0].label, self.b2m[1][0].label)

    def lel_tree(self) -> ModelTree:
        return deserialize_model(self.lel_blob)


@dataclass(frozen=True)
class GlobalBroadcast:
    """The server's per-round push of the freshly aggregated global model."""

    round_no: int
    gel_blob: bytes

    def gel_tree(self) -> ModelTree:
        return deserialize_model(self.gel_blob)


def make_broadcast(round_no: int, gel: ModelTree) -> GlobalBroadcast:
    expected = f"GEL@r{round_no}"
    if gel.id.label != expected:
        raise ContractViolation(f"broadcast for round {round_no} carries {gel.id.label!r}")
    return GlobalBroadcast(round_no, serialize_model(gel))


def encode_node_report(report: NodeReport) -> bytes:
    doc = {
        "type": "node_report",
        "node_id": report.node_id,
        "round": report.round_no,
        "b2m": [
            {"id": _id_to_doc(model_id), "accuracy": acc} for model_id, acc in report.b2m
        ],
        "accuracy_map": report.accuracy_map,
        "lel_accuracy": report.lel_accuracy,
        "changed": report.changed,
        "lel": base64.b64encode(report.lel_blob).decode("ascii"),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_node_report(payload: bytes) -> NodeReport:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SerializationError(f"node report is not valid JSON: {exc}") from None
    if doc.get("type") != "node_report":
        raise SerializationError(f"expected a node_report message, got {doc.get('type')!r}")
    return NodeReport(
        node_id=doc["node_id"],
        round_no=doc["round"],
        lel_blob=base64.b64decode(doc["lel"]),
        b2m=tuple((_id_from_doc(e["id"]), e["accuracy"]) for e in doc["b2m"]),
        accuracy_map=dict(doc["accuracy_map"]),
        lel_accuracy=doc["lel_accuracy"],
        changed=doc["changed"],
    )


def encode_broadcast(broadcast: GlobalBroadcast) -> bytes:
    doc = {
        "type": "global_broadcast",
        "round": broadcast.round_no,
        "gel": base64.b64encode(broadcast.gel_blob).decode("ascii"),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_broadcast(payload: bytes) -> GlobalBroadcast:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SerializationError(f"broadcast is not valid JSON: {exc}") from None
    if doc.get("type") != "global_broadcast":
        raise SerializationError(f"expected a global_broadcast message, got {doc.get('type')!r}")
    return GlobalBroadcast(doc["round"], base64.b64decode(doc["gel"]))


# --------------------------------------------------------------------------
# In-process channels
# --------------------------------------------------------------------------

class Network:
    """Lossless FIFO channels between registered endpoints, with a byte ledger.

    One producer and one consumer per directed pair may run concurrently.
    Byte counts accumulate against the round set via :meth:`start_round`.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._endpoints: set[str] = set()
        self._queues: dict[tuple[str, str], deque[bytes]] = {}
        self._closed = False
        self._round = 0
        self.bytes_per_round: dict[int, int] = {}

    def register(self, endpoint: str) -> None:
        with self._lock:
            self._endpoints.add(endpoint)

    def start_round(self, round_no: int) -> None:
        with self._lock:
            self._round = round_no
            self.bytes_per_round.setdefault(round_no, 0)

    def send(self, sender: str, receiver: str, payload: bytes) -> None:
        with self._lock:
            if self._closed:
                raise ChannelClosed("network is closed")
            if sender not in self._endpoints or receiver not in self._endpoints:
                raise ProtocolError(f"unregistered endpoint in {sender!r} -> {receiver!r}")
            self._queues.setdefault((sender, receiver), deque()).append(bytes(payload))
            self.bytes_per_round[self._round] = (
                self.bytes_per_round.get(self._round, 0) + len(payload)
            )

    def recv(self, receiver: str, sender: str) -> bytes:
        with self._lock:
            queue = self._queues.get((sender, receiver))
            if queue:
                return queue.popleft()
            if self._closed:
                raise ChannelClosed(f"channel {sender!r} -> {receiver!r} closed and drained")
            raise ProtocolError(f"no message pending on {sender!r} -> {receiver!r}")

    def close(self) -> None:
        with self._lock:
            self._closed = True
