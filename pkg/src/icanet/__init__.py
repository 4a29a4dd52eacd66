"""Multimodal short-video emotion recognition: audio, RGB and optical-flow streams
fused at decision level into a four-class prediction."""

__version__ = "0.1.0"
