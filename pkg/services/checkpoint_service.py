"""
Checkpoint Service
Reading, writing and validating model checkpoints.

Layout: a magic line with the format version, one line of JSON header
(sorted keys), then the concatenated float32 little-endian payload of every
tensor followed by every gate's logits.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from loguru import logger

from components.layout import parameter_shapes
from components.speech_model import SpeechModel
from config.settings import GateConfig, ModelConfig, Settings
from core.tensor import Tensor
from services.prune_plan import PrunePlan, build_plan
from utils.errors import CheckpointError, PruneKitError
from utils.validators import validate_tensor_shapes

MAGIC = "PRUNEKIT-CHECKPOINT"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """A model, its prune plan and the bookkeeping needed to resume"""
    model: SpeechModel
    plan: PrunePlan
    gate_config: GateConfig
    step: int = 0
    params_original: Optional[int] = None
    corpus_seed: Optional[int] = None

    @property
    def original_count(self) -> int:
        return self.params_original or self.model.parameter_count()


class CheckpointService:
    """
    Service class for checkpoint files
    Serializes checkpoints deterministically so identical runs give identical bytes
    """

    def __init__(self):
        """Initialize Checkpoint Service"""
        self.settings = Settings()

    @staticmethod
    def format_file_size(size_bytes: int) -> str:
        """
        Format file size in human-readable format

        Args:
            size_bytes: Size in bytes

        Returns:
            Formatted string (e.g., "1.5 MB")
        """
        if size_bytes < 1024:
            return f"{size_bytes} B"
        elif size_bytes < 1024 * 1024:
            return f"{size_bytes / 1024:.2f} KB"
        else:
            return f"{size_bytes / (1024 * 1024):.2f} MB"

    def encode(self, checkpoint: Checkpoint) -> bytes:
        """Serialize a checkpoint to bytes"""
        chunks: List[bytes] = []
        offset = 0
        tensors = []
        for name, tensor in checkpoint.model.tensors.items():
            raw = np.ascontiguousarray(tensor.data, dtype=PAYLOAD_DTYPE)
            tensors.append({"name": name, "shape": list(raw.shape), "offset": offset})
            chunks.append(raw.tobytes())
            offset += raw.size
        gates = []
        for dim in checkpoint.plan.dims:
            raw = np.ascontiguousarray(dim.gate.log_alpha.data, dtype=PAYLOAD_DTYPE)
            gates.append({"name": dim.name, "extent": dim.extent, "enabled": dim.enabled, "offset": offset})
            chunks.append(raw.tobytes())
            offset += raw.size

        header = {
            "model_config": checkpoint.model.config.to_dict(),
            "gate_config": checkpoint.gate_config.to_dict(),
            "tensors": tensors,
            "gates": gates,
            "plan": checkpoint.plan.summary(),
            "step": int(checkpoint.step),
            "params_original": int(checkpoint.original_count),
            "corpus_seed": checkpoint.corpus_seed,
            "payload_values": offset,
        }
        head = f"{MAGIC} {FORMAT_VERSION}\n" + json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
        return head.encode("utf-8") + b"".join(chunks)

    def decode(self, data: bytes, source: str = "<bytes>") -> Checkpoint:
        """
        Parse and validate checkpoint bytes

        Raises:
            CheckpointError: wrong magic/version, malformed header, or tensors
                that do not match the stored config
        """
        parts = data.split(b"\n", 2)
        if len(parts) != 3:
            raise CheckpointError(f"{source}: not a prunekit checkpoint")
        magic, header_line, payload = parts
        try:
            tag, version = magic.decode("utf-8").split(" ")
        except ValueError:
            raise CheckpointError(f"{source}: not a prunekit checkpoint") from None
        if tag != MAGIC:
            raise CheckpointError(f"{source}: not a prunekit checkpoint")
        if version != str(FORMAT_VERSION):
            raise CheckpointError(
                f"{source}: checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )
        try:
            header = json.loads(header_line.decode("utf-8"))
            config = ModelConfig.from_dict(header["model_config"])
            gate_config = GateConfig(**header["gate_config"])
        except (ValueError, KeyError, TypeError) as e:
            raise CheckpointError(f"{source}: malformed header: {e}") from None

        values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE)
        if values.size != header.get("payload_values", -1) or len(payload) % PAYLOAD_DTYPE.itemsize:
            raise CheckpointError(f"{source}: payload holds {values.size} values, header promises {header.get('payload_values')}")

        stored = {entry["name"]: tuple(entry["shape"]) for entry in header["tensors"]}
        result = validate_tensor_shapes(parameter_shapes(config), stored)
        if not result:
            raise CheckpointError(f"{source}: {result.message}")

        tensors: Dict[str, Tensor] = {}
        buffers = set(parameter_shapes(config)) - set(parameter_shapes(config, include_buffers=False))
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape, dtype=np.int64))
            raw = values[entry["offset"]:entry["offset"] + size].reshape(shape).astype(np.float32)
            tensors[entry["name"]] = Tensor(raw, requires_grad=entry["name"] not in buffers, name=entry["name"], dtype=np.float32)
        try:
            model = SpeechModel(config, tensors)
            plan = build_plan(config, gate_config)
        except PruneKitError as e:
            raise CheckpointError(f"{source}: {e}") from None

        stored_gates = {entry["name"]: entry for entry in header["gates"]}
        if set(stored_gates) != {dim.name for dim in plan.dims}:
            raise CheckpointError(f"{source}: gate set does not match the model config")
        gate_values = {}
        for name, entry in stored_gates.items():
            if entry["extent"] != plan.dim(name).extent:
                raise CheckpointError(f"{source}: gate {name} has extent {entry['extent']}, config implies {plan.dim(name).extent}")
            gate_values[name] = values[entry["offset"]:entry["offset"] + entry["extent"]].astype(np.float32)
        plan.load_gates(gate_values)
        return Checkpoint(
            model, plan, gate_config, int(header.get("step", 0)),
            header.get("params_original"), header.get("corpus_seed")
        )

    def save(self, checkpoint: Checkpoint, path: str) -> Path:
        """
        Write a checkpoint file

        Args:
            checkpoint: Checkpoint to write
            path: Destination (parent directories are created)

        Returns:
            Path written
        """
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        data = self.encode(checkpoint)
        target.write_bytes(data)
        logger.info(f"Saved checkpoint {target} ({self.format_file_size(len(data))})")
        return target

    def load(self, path: str) -> Checkpoint:
        """
        Read and validate a checkpoint file

        Raises:
            CheckpointError: if the file is missing or invalid
        """
        source = Path(path)
        if not source.is_file():
            raise CheckpointError(f"checkpoint not found: {source}")
        checkpoint = self.decode(source.read_bytes(), str(source))
        logger.debug(f"Loaded checkpoint {source}: {checkpoint.model.parameter_count()} parameters, step {checkpoint.step}")
        return checkpoint
