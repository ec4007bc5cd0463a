"""Numerical laboratory for smartingales on binary box filtrations."""
