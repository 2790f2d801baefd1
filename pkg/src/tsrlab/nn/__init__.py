"""Small numpy neural runtime: autodiff, model, training and probes."""

from .model import DecodeState, ModelInstance, attention, instantiate

__all__ = ["DecodeState", "ModelInstance", "attention", "instantiate"]
