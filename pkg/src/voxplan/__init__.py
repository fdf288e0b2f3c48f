"""Corridor-based quadrotor trajectory planning from piloted demonstrations.

Pipeline: occupancy grid and ESDF -> convex free-space corridor grown along
a teach path -> minimum-jerk Bezier QP and time-optimal SOCP under
coordinate descent -> sliding-window B-spline replanning against local
distance fields, with a deterministic simulator, CLI, and live teach
service on top.
"""

__version__ = "0.1.0"
