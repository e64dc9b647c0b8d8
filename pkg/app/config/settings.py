# app/config/settings.py

import os
import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)

# Raiz do projeto: .../app/config/settings.py -> três níveis acima
PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent


class Settings(BaseSettings):
    """
    Configurações de processo, carregadas de variáveis de ambiente e do .env.
    Os knobs de cada execução (modelo, treino, avaliação) ficam nos modelos de
    app/models/configs.py; aqui ficam apenas logging, paralelismo e diretórios.
    """
    model_config = SettingsConfigDict(
        env_file=PROJECT_ROOT / ".env",
        env_file_encoding='utf-8',
        extra='ignore'
    )

    APP_NAME: str = "RStarCNN"
    LOG_LEVEL: str = "INFO"
    # Arquivo de log; string vazia desativa o FileHandler
    LOG_FILE: str = "rstar.log"

    # Limite de workers. None: todos os núcleos na avaliação, 1 no treino.
    RSTAR_THREADS: Optional[int] = None

    @field_validator("RSTAR_THREADS")
    @classmethod
    def _positive_threads(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError(f"RSTAR_THREADS deve ser >= 1, recebido {value}")
        return value

    @field_validator("LOG_LEVEL")
    @classmethod
    def _known_level(cls, value: str) -> str:
        name = value.strip().upper()
        if not isinstance(logging.getLevelName(name), int):
            raise ValueError(f"LOG_LEVEL desconhecido: {value!r}")
        return name

    @property
    def get_log_level(self) -> int:
        """Valor numérico do LOG_LEVEL já validado."""
        return logging.getLevelName(self.LOG_LEVEL)

    def worker_count(self, purpose: str) -> int:
        """
        Número de workers para uma finalidade ('train' ou 'eval').
        Sem RSTAR_THREADS: 1 para treino, todos os núcleos para avaliação.
        """
        if self.RSTAR_THREADS is not None:
            return self.RSTAR_THREADS
        if purpose == "train":
            return 1
        return os.cpu_count() or 1


@lru_cache()
def get_settings() -> Settings:
    """Retorna uma instância singleton das configurações da aplicação."""
    return Settings()


try:
    settings = get_settings()
except ValidationError as e:
    logger.critical(f"Erro de validação nas configurações: {e.errors()}. A aplicação não pode iniciar.", exc_info=True)
    raise
