"""
Database connection and session management for the run registry
"""

import logging
from pathlib import Path
from typing import Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, scoped_session

from core.config import get_settings
from core.models import Base

logger = logging.getLogger(__name__)

_engine = None
Session = scoped_session(sessionmaker(autocommit=False, autoflush=False))


def configure(url: Optional[str] = None):
    """
    Bind the session factory to an engine.

    Args:
        url: SQLAlchemy URL; defaults to SPARK_DATABASE_URL (SQLite under the data dir)

    Returns:
        The engine
    """
    global _engine
    url = url or get_settings().database_url
    if url.startswith("sqlite:///"):
        Path(url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    Session.remove()
    _engine = create_engine(url, echo=False, connect_args=connect_args)
    Session.configure(bind=_engine)
    logger.debug("Run registry bound to %s", url)
    return _engine


def init_database(url: Optional[str] = None):
    """Create all registry tables (idempotent)."""
    engine = _engine if _engine is not None and url is None else configure(url)
    Base.metadata.create_all(bind=engine)
    return True


def get_session():
    """
    Get a new database session.
    Remember to close the session after use.
    """
    if _engine is None:
        init_database()
    return Session()


def close_session():
    """Close the current session"""
    Session.remove()
