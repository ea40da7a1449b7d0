"""Compositional training and verification for robot navigation tasks.

Decomposes a navigation task into subtasks, plans which subtasks to run and
how reliable each must be, trains and Monte-Carlo-verifies the subtask
policies in a two-tier simulator, and iterates when estimates fall short.
"""

__version__ = "0.1.0"
