"""Template matching with explaining away (Divisive Input Modulation)."""

__version__ = "0.1.0"
