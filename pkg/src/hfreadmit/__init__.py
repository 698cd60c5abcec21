"""Timeline models for 30-day readmission after heart-failure hospitalisation."""

__version__ = "0.1.0"
