# app/repositories/checkpoint_repository.py
"""
Formato do checkpoint (little-endian):

    magic    b"RSTARCKPT"
    u32      versão
    u64      tamanho do cabeçalho em bytes
    32 bytes sha256 do cabeçalho
    cabeçalho JSON utf-8: model_config, train_config, iteração e, por tensor,
             nome, forma, offset e nbytes; sha256 do bloco de dados
    dados    tensores float64 '<f8' na ordem canônica dos parâmetros
"""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from app.autodiff import Tensor
from app.models.configs import ModelConfig, TrainConfig
from app.network import ModelParams
from app.repositories.storage import PathLike, sha256_hex, write_atomic
from app.utils.error_handlers import (CheckpointChecksumError, CheckpointError, CheckpointShapeError,
                                      CheckpointTruncatedError, CheckpointVersionError, ShapeError)

logger = logging.getLogger(__name__)

MAGIC = b"RSTARCKPT"
VERSION = 1
PREAMBLE = struct.Struct("<IQ32s")
DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    params: ModelParams
    model_config: ModelConfig
    train_config: Optional[TrainConfig] = None
    iteration: Optional[int] = None


def save_checkpoint(path: PathLike, params: ModelParams, model_cfg: ModelConfig,
                    train_cfg: Optional[TrainConfig] = None, iteration: Optional[int] = None) -> Path:
    params.validate(model_cfg)
    payload = bytearray()
    tensors = []
    for name, tensor in params:
        raw = np.ascontiguousarray(tensor.values, dtype=DTYPE).tobytes()
        tensors.append({"name": name, "shape": list(tensor.shape), "offset": len(payload), "nbytes": len(raw)})
        payload.extend(raw)

    header = json.dumps({
        "model_config": model_cfg.model_dump(mode="json"),
        "train_config": train_cfg.model_dump(mode="json") if train_cfg is not None else None,
        "iteration": iteration,
        "tensors": tensors,
        "payload_sha256": sha256_hex(bytes(payload)),
    }, sort_keys=True).encode("utf-8")

    blob = MAGIC + PREAMBLE.pack(VERSION, len(header), hashlib.sha256(header).digest()) + header + bytes(payload)
    written = write_atomic(path, blob)
    logger.info(f"Checkpoint gravado em {written} ({len(tensors)} tensores, iteração {iteration}).")
    return written


def load_checkpoint(path: PathLike) -> Checkpoint:
    """Lê e valida um checkpoint: versão, integridade e formas contra o ModelConfig embutido."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint não encontrado: {path}")
    blob = path.read_bytes()

    if not blob.startswith(MAGIC):
        raise CheckpointVersionError(f"{path} não é um checkpoint (magic inválido)")
    start = len(MAGIC)
    if len(blob) < start + PREAMBLE.size:
        raise CheckpointTruncatedError(f"checkpoint truncado no preâmbulo: {path}")
    version, header_len, header_digest = PREAMBLE.unpack_from(blob, start)
    if version != VERSION:
        raise CheckpointVersionError(f"versão de checkpoint {version} não suportada (esperado {VERSION}): {path}")

    header_start = start + PREAMBLE.size
    payload_start = header_start + header_len
    if len(blob) < payload_start:
        raise CheckpointTruncatedError(f"checkpoint truncado no cabeçalho: {path}")
    header_bytes = blob[header_start:payload_start]
    if hashlib.sha256(header_bytes).digest() != header_digest:
        raise CheckpointChecksumError(f"checksum do cabeçalho não confere: {path}")
    header = json.loads(header_bytes.decode("utf-8"))
    payload = blob[payload_start:]

    # truncamento antes do checksum: a mensagem nomeia o primeiro tensor incompleto
    for entry in header["tensors"]:
        if entry["offset"] + entry["nbytes"] > len(payload):
            raise CheckpointTruncatedError(
                f"tensor '{entry['name']}' truncado: precisa de {entry['nbytes']} bytes a partir de "
                f"{entry['offset']}, bloco de dados tem {len(payload)}"
            )
    if sha256_hex(payload) != header["payload_sha256"]:
        raise CheckpointChecksumError(f"checksum dos tensores não confere: {path}")

    try:
        model_cfg = ModelConfig.model_validate(header["model_config"])
        train_cfg = TrainConfig.model_validate(header["train_config"]) if header["train_config"] else None
    except ValidationError as e:
        raise CheckpointError(f"configuração embutida inválida em {path}: {e}") from e

    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) * DTYPE.itemsize != entry["nbytes"]:
            raise CheckpointShapeError(
                f"tensor '{entry['name']}': forma {shape} incompatível com {entry['nbytes']} bytes"
            )
        values = np.frombuffer(payload, dtype=DTYPE, count=int(np.prod(shape)),
                               offset=entry["offset"]).reshape(shape).astype(np.float64)
        tensors[entry["name"]] = Tensor(values, requires_grad=True, name=entry["name"])
    params = ModelParams(tensors)
    try:
        params.validate(model_cfg)
    except ShapeError as e:
        raise CheckpointShapeError(f"{path}: {e}") from e

    logger.info(f"Checkpoint carregado de {path}: modo {model_cfg.mode}, {len(tensors)} tensores.")
    return Checkpoint(params=params, model_config=model_cfg, train_config=train_cfg,
                      iteration=header.get("iteration"))
