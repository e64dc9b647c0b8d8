# app/repositories/dataset_repository.py
"""
Container de dataset em disco: um diretório com

    dataset.json   anotações (versão, classes, imagens, instâncias, offsets, checksums)
    images.bin     magic RSTARIMG seguido dos planos RGB uint8 de cada imagem
    cues.json      (opcional) regiões dos glifos plantados, por instância
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from app.models.dataset import CueGroundTruth, Dataset, ImageRecord
from app.repositories.storage import PathLike, sha256_hex, write_atomic
from app.utils.error_handlers import (DatasetChecksumError, DatasetError, DatasetMissingFileError,
                                      DatasetTruncatedError, DatasetVersionError)

logger = logging.getLogger(__name__)

DATASET_FORMAT = "rstar-dataset"
DATASET_VERSION = 1
ANNOTATIONS_FILE = "dataset.json"
IMAGES_FILE = "images.bin"
CUES_FILE = "cues.json"
IMAGES_MAGIC = b"RSTARIMG"


def _canonical(body: Dict[str, Any]) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")


class DatasetRepository:
    """Grava e lê datasets (e a verdade de glifos) em um diretório."""

    def __init__(self, root: PathLike):
        self.root = Path(root)
        logger.info(f"DatasetRepository inicializado em {self.root}.")

    @property
    def annotations_path(self) -> Path:
        return self.root / ANNOTATIONS_FILE

    @property
    def images_path(self) -> Path:
        return self.root / IMAGES_FILE

    @property
    def cues_path(self) -> Path:
        return self.root / CUES_FILE

    def save(self, dataset: Dataset) -> List[Path]:
        blob = bytearray(IMAGES_MAGIC)
        entries = []
        for image in dataset.images:
            entry = image.model_dump(mode="json")
            entry["offset"] = len(blob)
            entry["nbytes"] = len(image.pixels)
            blob.extend(image.pixels)
            entries.append(entry)
        images_bytes = bytes(blob)

        body = {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "class_names": list(dataset.class_names),
            "loss_kind": dataset.loss_kind,
            "images_sha256": sha256_hex(images_bytes),
            "images": entries,
        }
        document = dict(body, annotations_sha256=sha256_hex(_canonical(body)))

        # imagens primeiro: o json só aponta para um images.bin já completo
        written = [write_atomic(self.images_path, images_bytes)]
        written.append(write_atomic(self.annotations_path, json.dumps(document, indent=1)))
        logger.info(f"Dataset gravado em {self.root}: {len(dataset.images)} imagens, "
                    f"{dataset.num_instances} instâncias.")
        return written

    def _read_annotations(self) -> Dict[str, Any]:
        if not self.annotations_path.exists():
            raise DatasetMissingFileError(f"arquivo de anotações ausente: {self.annotations_path}")
        try:
            document = json.loads(self.annotations_path.read_text(encoding="utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DatasetTruncatedError(f"anotações ilegíveis em {self.annotations_path}: {e}") from e
        if not isinstance(document, dict) or document.get("format") != DATASET_FORMAT:
            raise DatasetVersionError(f"{self.annotations_path} não é um container {DATASET_FORMAT}")
        if document.get("version") != DATASET_VERSION:
            raise DatasetVersionError(
                f"versão de dataset {document.get('version')} não suportada (esperado {DATASET_VERSION}): "
                f"{self.annotations_path}"
            )
        stored = document.pop("annotations_sha256", None)
        if stored != sha256_hex(_canonical(document)):
            raise DatasetChecksumError(f"checksum das anotações não confere: {self.annotations_path}")
        return document

    def _read_images(self, document: Dict[str, Any]) -> bytes:
        if not self.images_path.exists():
            raise DatasetMissingFileError(f"arquivo de imagens ausente: {self.images_path}")
        blob = self.images_path.read_bytes()
        if not blob.startswith(IMAGES_MAGIC):
            raise DatasetVersionError(f"magic inválido em {self.images_path}")
        for entry in document["images"]:
            end = entry["offset"] + entry["nbytes"]
            if end > len(blob):
                raise DatasetTruncatedError(
                    f"imagem '{entry['image_id']}' termina no byte {end}, mas {self.images_path} "
                    f"tem {len(blob)} bytes"
                )
        if sha256_hex(blob) != document["images_sha256"]:
            raise DatasetChecksumError(f"checksum das imagens não confere: {self.images_path}")
        return blob

    def load(self) -> Dataset:
        document = self._read_annotations()
        blob = self._read_images(document)
        try:
            images = []
            for entry in document["images"]:
                offset, nbytes = entry.pop("offset"), entry.pop("nbytes")
                entry["pixels"] = blob[offset:offset + nbytes]
                images.append(ImageRecord.model_validate(entry))
            dataset = Dataset(class_names=tuple(document["class_names"]), loss_kind=document["loss_kind"],
                              images=tuple(images))
        except (KeyError, ValidationError) as e:
            raise DatasetError(f"anotações inválidas em {self.annotations_path}: {e}") from e
        logger.info(f"Dataset carregado de {self.root}: {len(dataset.images)} imagens.")
        return dataset

    def save_cues(self, cues: CueGroundTruth) -> Path:
        return write_atomic(self.cues_path, cues.model_dump_json(indent=1))

    def load_cues(self) -> Optional[CueGroundTruth]:
        """None quando o dataset não tem verdade de glifos (ex: dados externos)."""
        if not self.cues_path.exists():
            return None
        try:
            return CueGroundTruth.model_validate_json(self.cues_path.read_text(encoding="utf-8"))
        except ValidationError as e:
            raise DatasetError(f"arquivo de glifos inválido {self.cues_path}: {e}") from e


def save_dataset(path: PathLike, dataset: Dataset) -> List[Path]:
    return DatasetRepository(path).save(dataset)


def load_dataset(path: PathLike) -> Dataset:
    return DatasetRepository(path).load()
