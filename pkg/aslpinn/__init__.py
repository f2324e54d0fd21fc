"""ASL perfusion parameter estimation with PINN, SUPINN and robust least squares"""

__version__ = "1.0.0"
