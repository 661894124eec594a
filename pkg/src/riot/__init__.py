"""Recursive deep inertial odometry toolkit.

Self-attention encoder-decoder networks (RIOT, ARIOT) and a GRU baseline
for 3D position regression from raw 9D IMU streams, plus the supporting
stack: a minimal autodiff tensor library, quaternion geometry, IMU
sensor simulation, sliding-window data pipeline, two-cycle recursive
training, sliding-window recursive inference and ATE/RTE/CDF metrics.
"""

__version__ = "0.1.0"
