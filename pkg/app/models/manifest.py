# app/models/manifest.py
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class RunManifest(BaseModel):
    """
    Manifesto gravado ao lado de cada artefato de saída. Contém a configuração
    resolvida (todos os defaults materializados), a semente e a versão, o que
    basta para reproduzir a execução. Apenas os timestamps variam entre execuções.
    """
    command: str = Field(..., description="Subcomando da CLI que gerou os artefatos.")
    version: str = Field(..., description="Versão no estilo git-describe.")
    seed: Optional[int] = None
    resolved_config: Dict[str, Any] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list, description="Arquivos gerados, relativos ao diretório de saída.")
    started_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    finished_at: Optional[datetime] = None

    def finish(self) -> "RunManifest":
        return self.model_copy(update={"finished_at": datetime.now(timezone.utc)})
