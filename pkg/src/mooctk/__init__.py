"""ETL and analytics toolkit for normalized MOOC behavioral logs."""

from .schema import SCHEMA_VERSION, CourseStore

__all__ = ["SCHEMA_VERSION", "CourseStore"]
__version__ = "0.1.0"
