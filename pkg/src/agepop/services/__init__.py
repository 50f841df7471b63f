from .logging_service import LoggingUtility

__all__ = ["LoggingUtility"]
