"""flowlab: desk-scale laboratory for extended Ricci flow systems on periodic grids."""

__version__ = "0.3.0"
