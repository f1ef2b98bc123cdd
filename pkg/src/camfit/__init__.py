"""Perspective-camera geometry, camera-head losses and camera-aware body fitting.

Modules:

* ``camgeom``   pinhole camera, rotations, horizon line, focal/vfov conversion
* ``losses``    discretised camera-parameter losses (softargmax L2, biased L2, KL)
* ``bodykin``   articulated skeleton and batched forward kinematics
* ``fitter``    keypoint fitting under a known camera (single and multi-frame)
* ``metrics``   MPJPE, Procrustes-aligned and world-frame errors, bucketing
* ``panosample`` perspective crops from equirectangular panoramas, camera sampling
* ``cli``       command-line driver
"""

__version__ = "0.1.0"
