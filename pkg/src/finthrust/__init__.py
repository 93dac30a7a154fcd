"""System identification and thrust control for a tail-propelled robotic fish."""
__version__ = "0.1.0"
