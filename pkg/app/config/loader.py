# app/config/loader.py

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar

import yaml
from pydantic import BaseModel

logger = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound=BaseModel)


def read_overrides(path: Optional[Path]) -> Dict[str, Any]:
    """
    Lê um arquivo YAML ou JSON de overrides. Retorna dicionário vazio se path for None.
    """
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Arquivo de configuração não encontrado: {path}")

    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"Conteúdo de {path} deve ser um mapeamento chave: valor.")
    logger.info(f"Overrides carregados de {path}: {sorted(data)}")
    return data


def build_config(model: Type[ConfigT], base: Optional[ConfigT] = None,
                 file_overrides: Optional[Dict[str, Any]] = None,
                 flag_overrides: Optional[Dict[str, Any]] = None) -> ConfigT:
    """
    Monta um modelo de configuração: defaults < arquivo < flags explícitas.
    Flags com valor None são consideradas não informadas.
    """
    merged: Dict[str, Any] = base.model_dump() if base is not None else {}
    merged.update(file_overrides or {})
    merged.update({k: v for k, v in (flag_overrides or {}).items() if v is not None})
    return model.model_validate(merged)
