import logging
from typing import Optional

import typer
from pydantic import ValidationError

logger = logging.getLogger(__name__)

# Códigos de saída estáveis da CLI
EXIT_RUNTIME_FAILURE = 1
EXIT_USAGE_ERROR = 2


class RStarError(Exception):
    """
    Classe base para todos os erros do projeto.
    Cada subclasse corresponde a uma família de falhas e carrega o código de saída
    que a CLI deve usar quando o erro chega até ela.
    """
    exit_code: int = EXIT_RUNTIME_FAILURE


class GeometryError(RStarError):
    """Região degenerada, fora da imagem ou limites de overlap inválidos."""


class ProposalFormatError(RStarError):
    """Arquivo de propostas malformado (a mensagem sempre cita o número da linha)."""


class ShapeError(RStarError):
    """Formas incompatíveis entre tensores (a mensagem cita as duas formas)."""


class LabelError(RStarError):
    """Rótulo fora do conjunto de classes ou vetor de atributos não binário."""


class GraphError(RStarError):
    """Uso inválido do grafo de diferenciação (ex: backward antes do forward)."""


class NonFiniteError(RStarError):
    """Valor não finito (NaN/inf) encontrado onde a operação exige valores finitos."""


class TrainingError(RStarError):
    """Falha durante o treinamento (ex: perda não finita em um exemplo)."""


class EvaluationError(RStarError):
    """Falha na avaliação (ex: AP indefinido por ausência de positivos)."""


class SyntheticDataError(RStarError):
    """Configuração do gerador sintético inviável."""


class DatasetError(RStarError):
    """Erro genérico ao ler ou gravar um dataset."""


class DatasetVersionError(DatasetError):
    """Versão do container de dataset desconhecida."""


class DatasetTruncatedError(DatasetError):
    """Container de dataset truncado ou malformado."""


class DatasetChecksumError(DatasetError):
    """Checksum do dataset não confere (conteúdo corrompido)."""


class DatasetMissingFileError(DatasetError):
    """Arquivo do dataset ausente (a mensagem cita o caminho)."""


class CheckpointError(RStarError):
    """Erro genérico ao ler ou gravar um checkpoint."""


class CheckpointVersionError(CheckpointError):
    """Magic ou versão do checkpoint desconhecidos."""


class CheckpointTruncatedError(CheckpointError):
    """Bloco de tensor truncado (a mensagem cita o nome do tensor)."""


class CheckpointChecksumError(CheckpointError):
    """Checksum do checkpoint não confere."""


class CheckpointShapeError(CheckpointError):
    """Formas dos tensores não batem com o ModelConfig embutido."""


def handle_command_error(exc: Exception, command: Optional[str] = None) -> typer.Exit:
    """
    Converte uma exceção em um typer.Exit com o código de saída estável.
    Encapsula a lógica comum de tratamento de erros dos comandos da CLI.
    """
    where = f" no comando '{command}'" if command else ""
    if isinstance(exc, ValidationError):
        # configuração inválida (flags ou arquivo de overrides) é erro de uso
        logger.error(f"Configuração inválida{where}: {exc.errors()}")
        typer.echo(f"erro de configuração: {exc}", err=True)
        return typer.Exit(code=EXIT_USAGE_ERROR)
    if isinstance(exc, RStarError):
        logger.error(f"Erro{where}: [{type(exc).__name__}] {exc}")
        typer.echo(f"erro: {exc}", err=True)
        return typer.Exit(code=exc.exit_code)

    logger.critical(f"Erro inesperado{where}: {exc}", exc_info=True)
    typer.echo(f"erro inesperado: {exc}", err=True)
    return typer.Exit(code=EXIT_RUNTIME_FAILURE)
