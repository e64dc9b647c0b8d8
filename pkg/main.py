# main.py

import logging

from app.config.settings import settings
from app.cli import app

# Configuração de logging centralizada
handlers = [logging.StreamHandler()]
if settings.LOG_FILE:
    handlers.append(logging.FileHandler(settings.LOG_FILE, mode='a', encoding='utf-8'))
logging.basicConfig(
    level=settings.get_log_level,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=handlers
)
logger = logging.getLogger(__name__)


if __name__ == "__main__":
    logger.info(f"{settings.APP_NAME} iniciado.")
    app()
