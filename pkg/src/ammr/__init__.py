"""Attribute-sliced mixed-modality refinement engine.

Compose an image-anchor embedding with textual constraint deltas, retrieve
and re-rank candidates from a vector index, verify attribute compliance, and
drive the loop through a Thought-Action-Critic-Speak planner with per-session
memory.
"""

__version__ = "0.1.0"
