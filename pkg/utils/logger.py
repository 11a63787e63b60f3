import logging
import os


def setup_logging():
    """Configure logging for the solver and its command-line tools."""
    log_level = os.getenv("LOG_LEVEL", "INFO").upper()
    log_file = os.getenv("HDG_LOG_FILE", "hdg.log")

    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
    )
