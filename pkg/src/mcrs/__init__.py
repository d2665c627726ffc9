"""Two-level MacCormack rapid solver for 2D incompressible Navier-Stokes.

Explicit MacCormack predictor/corrector on a coarse quadrilateral mesh
supplies the convection term to a Crank-Nicolson saddle-point solve on a
nested fine mesh.  Velocity is biquadratic (Q2), pressure bilinear (Q1),
optionally enriched by elementwise constants (Q1+Q0).
"""

__version__ = "0.1.0"
