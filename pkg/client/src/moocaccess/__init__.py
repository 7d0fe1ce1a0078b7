"""Read-only access client for exported course stores and partitions."""

from .queries import (
    NamedQuery,
    ParameterError,
    QueryRepositoryError,
    load_queries,
    render_csv,
    run_query,
)
from .store import AccessError, StoreHandle, StoreOpenError, open_store

__all__ = [
    "AccessError",
    "NamedQuery",
    "ParameterError",
    "QueryRepositoryError",
    "StoreHandle",
    "StoreOpenError",
    "load_queries",
    "open_store",
    "render_csv",
    "run_query",
]
__version__ = "0.1.0"
