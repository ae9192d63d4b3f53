"""Level-of-detail toolkit for crowd characters.

Generates LoD assets for four representations (mesh, impostor atlas,
Instant-NGP config, Gaussian splats), scores their fidelity, schedules
per-agent representation/LoD under a memory budget and analyses
perceptual-study choice data.
"""

__version__ = "0.1.0"
