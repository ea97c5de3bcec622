"""Multimodal fault detection for FDM 3D printing."""
