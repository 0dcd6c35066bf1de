"""
Adaptive phase-field dynamic fracture on triangle meshes.
"""
__version__ = "0.1"
