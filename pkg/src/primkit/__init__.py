from .primitives import N_PRIMITIVES, PRIMITIVE_NAMES, Primitive

__version__ = "0.1.0"
