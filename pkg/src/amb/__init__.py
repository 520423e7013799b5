"""Adapted Multimodal BERT: a frozen transformer backbone tuned with bottleneck
adapters and fused layer-wise with visual/acoustic tokens."""

__version__ = "0.1.0"
