"""Gaze-path modelling on procedurally generated mazes.

Maze generation, a small reverse-mode autodiff core, the foveated recurrent
gaze model and its objectives, the random-saccade baseline, path similarity
metrics, and eye-tracking preprocessing.
"""

__version__ = "0.1.0"
