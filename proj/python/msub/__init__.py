"""Build and explore 2D deformation subspaces of shape generators."""

from ._msub import Error, Service, Space, build, load_bundle, read_config, synth

__all__ = ["Error", "Service", "Space", "build", "load_bundle", "read_config", "synth"]
__version__ = "0.1.0"
