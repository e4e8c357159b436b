"""Multimodal (caption + image) meme classification for the Memotion subtasks."""

__version__ = "0.1.0"
