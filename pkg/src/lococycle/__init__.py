"""Human-motion-driven control of a planar quadruped via cycle-consistent correspondence rewards."""

__version__ = "0.1.0"
