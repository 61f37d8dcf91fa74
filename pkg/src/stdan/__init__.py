"""Space-time video super-resolution with deformable attention, built on numpy."""

__version__ = "0.1.0"
