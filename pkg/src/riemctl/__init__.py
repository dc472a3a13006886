"""riemctl: verification toolkit for optimality conditions of control problems on Riemannian manifolds."""

__version__ = "0.1.0"
