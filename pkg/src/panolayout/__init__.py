"""Manhattan-world room layout estimation from single equirectangular panoramas."""

__version__ = "0.1.0"
