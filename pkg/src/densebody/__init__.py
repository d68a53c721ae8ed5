"""Body-model kinematics, IUV correspondence maps and graph-based pose refinement."""

__version__ = "0.1.0"
